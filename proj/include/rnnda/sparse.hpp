#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rnnda {

/// Compressed sparse row matrix. Column indices are 32-bit so the AVX2
/// kernels can gather directly from them.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint64_t> row_ptr;  // rows + 1 entries
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  CsrMatrix transposed() const;
  void scale(double factor);
};

/// Builds a CSR matrix from unsorted (row, col, value) triplets. Duplicate
/// coordinates are summed.
struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};
CsrMatrix csr_from_triplets(std::size_t rows, std::size_t cols,
                            std::vector<Triplet> triplets);

}  // namespace rnnda
