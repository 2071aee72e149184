#pragma once

#include "rnnda/kernels.hpp"

namespace rnnda::kernels::detail {

extern const KernelTable kScalarTable;
#if defined(RNNDA_HAVE_AVX2_KERNELS)
extern const KernelTable kAvx2Table;
#endif

}  // namespace rnnda::kernels::detail
