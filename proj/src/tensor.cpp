// Copyright 2026 The relfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "relfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace relfuse {

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
      throw ShapeError("shape volume overflows: " + shape_to_string(shape));
    }
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got shape " +
                     shape_to_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": inner dimensions disagree for " + shape_to_string(a) +
                   " and " + shape_to_string(b));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) dim_error("matmul", a.shape(), b.shape());
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  // i-k-j order: each c[i][j] still accumulates over k in ascending order.
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul output");
  return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) dim_error("matmul_tn", a.shape(), b.shape());
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = pa + p * m;
    const T* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul_tn output");
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) dim_error("matmul_nt", a.shape(), b.shape());
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      pc[i * n + j] = acc;
    }
  }
  require_finite(c, "matmul_nt output");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape new_shape) {
  if (shape_volume(new_shape) != t.size()) {
    throw ShapeError("reshape: element count mismatch between " + shape_to_string(t.shape()) +
                     " and " + shape_to_string(new_shape));
  }
  return Tensor<T>(std::move(new_shape), t.storage());
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw ShapeError("reduce_sum: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(t.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  const std::size_t len = t.dim(axis);

  Shape out_shape;
  for (std::size_t i = 0; i < t.rank(); ++i)
    if (i != axis) out_shape.push_back(t.dim(i));
  Tensor<T> out(std::move(out_shape));
  const T* src = t.data().data();
  T* dst = out.data().data();
  // Walking the source in flat order keeps each output's accumulation
  // ascending along the reduced axis.
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) dst[o * inner + i] += src[(o * len + l) * inner + i];
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& t) {
  T acc{0};
  for (T v : t.data()) acc += v;
  return acc;
}

template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& m, const Tensor<T>& v) {
  require_matrix(m, "add_row_vector");
  if (v.rank() != 1 || v.dim(0) != m.cols()) {
    throw ShapeError("add_row_vector: bias " + shape_to_string(v.shape()) +
                     " does not match matrix " + shape_to_string(m.shape()));
  }
  Tensor<T> out = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) += v[j];
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "hadamard");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& m, std::size_t begin, std::size_t count) {
  require_matrix(m, "slice_rows");
  if (count == 0 || begin + count > m.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_to_string(m.shape()));
  }
  const std::size_t c = m.cols();
  std::vector<T> data(m.storage().begin() + static_cast<std::ptrdiff_t>(begin * c),
                      m.storage().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return Tensor<T>({count, c}, std::move(data));
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + shape_to_string(parts.front().shape()) +
                       " vs " + shape_to_string(p.shape()));
    }
    rows += p.rows();
  }
  std::vector<T> data;
  data.reserve(rows * c);
  for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
  return Tensor<T>({rows, c}, std::move(data));
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

#define RELFUSE_INSTANTIATE(T)                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> transpose(const Tensor<T>&);                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
  template Tensor<T> reduce_sum(const Tensor<T>&, std::size_t);                    \
  template T sum_all(const Tensor<T>&);                                            \
  template Tensor<T> add_row_vector(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> hadamard(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                   \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                      \
  template bool all_finite(const Tensor<T>&);                                      \
  template void require_finite(const Tensor<T>&, const std::string&);              \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);

RELFUSE_INSTANTIATE(float)
RELFUSE_INSTANTIATE(double)

#undef RELFUSE_INSTANTIATE

}  // namespace relfuse
