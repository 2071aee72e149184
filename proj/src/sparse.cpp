#include "rnnda/sparse.hpp"

#include <algorithm>
#include <limits>

#include "rnnda/errors.hpp"

namespace rnnda {

CsrMatrix csr_from_triplets(std::size_t rows, std::size_t cols,
                            std::vector<Triplet> triplets) {
  if (cols > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
    throw InvalidDimension("csr column count exceeds 32-bit index range");
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t k = 0; k < triplets.size();) {
    const Triplet& t = triplets[k];
    if (t.row >= rows || t.col >= cols) throw InvalidDimension("triplet out of range");
    double v = t.value;
    std::size_t j = k + 1;
    while (j < triplets.size() && triplets[j].row == t.row && triplets[j].col == t.col) {
      v += triplets[j].value;
      ++j;
    }
    m.col_idx.push_back(static_cast<std::int32_t>(t.col));
    m.values.push_back(v);
    ++m.row_ptr[t.row + 1];
    k = j;
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

CsrMatrix CsrMatrix::transposed() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (auto c : col_idx) ++t.row_ptr[static_cast<std::size_t>(c) + 1];
  for (std::size_t r = 0; r < cols; ++r) t.row_ptr[r + 1] += t.row_ptr[r];
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::uint64_t> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
  // Rows are visited in order, so each transposed row stays column-sorted.
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const auto c = static_cast<std::size_t>(col_idx[k]);
      const auto dst = next[c]++;
      t.col_idx[dst] = static_cast<std::int32_t>(r);
      t.values[dst] = values[k];
    }
  }
  return t;
}

void CsrMatrix::scale(double factor) {
  for (auto& v : values) v *= factor;
}

}  // namespace rnnda
