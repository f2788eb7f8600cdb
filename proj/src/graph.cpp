#include "charnmt/graph.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <string>

namespace charnmt {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t) {
  return MatMap<T>(t.data(), t.rows(), t.cols());
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), t.rows(), t.cols());
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Shape matrix_shape(const Tensor<T>& like, int rows, int cols) {
  if (like.rank() == 1 && rows == 1) return {cols};
  return {rows, cols};
}

}  // namespace

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ContractError("variable does not belong to this graph");
  }
  return nodes_[v.id];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ContractError("variable does not belong to this graph");
  }
  return nodes_[v.id];
}

template <typename T>
Tensor<T>& Graph<T>::acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(val(id).shape());
  return n.grad;
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, const char* op, std::initializer_list<Var> inputs) {
  return push(std::move(value), op, std::span<const Var>(inputs.begin(), inputs.size()));
}

template <typename T>
Var Graph<T>::push(Tensor<T> value, const char* op, std::span<const Var> inputs) {
  if (check_finite_ && !value.all_finite()) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value at node " +
                         std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Graph<T>::require_same_shape(Var a, Var b, const char* op) const {
  if (val(a.id).shape() != val(b.id).shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(val(a.id).shape()) +
                         " and " + shape_string(val(b.id).shape()) + " differ");
  }
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  if (value.empty()) throw DimensionError("constant: empty tensor");
  return push(std::move(value), "constant", {});
}

template <typename T>
Var Graph<T>::variable(Tensor<T> value) {
  if (value.empty()) throw DimensionError("variable: empty tensor");
  Var v = push(std::move(value), "variable", {});
  nodes_[v.id].requires_grad = track_gradients_;
  return v;
}

template <typename T>
Var Graph<T>::parameter(const std::string& name, const Tensor<T>& value) {
  if (value.empty()) throw DimensionError("parameter " + name + " is empty");
  Node n;
  n.external = &value;
  n.requires_grad = track_gradients_;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  node(v);
  return val(v.id);
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor<T>(val(v.id).shape());
  return n.grad;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Tensor<T>& A = value(a);
  const Tensor<T>& B = value(b);
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: shapes " + shape_string(A.shape()) + " and " +
                         shape_string(B.shape()) + " do not conform");
  }
  Tensor<T> out(matrix_shape(A, A.rows(), B.cols()));
  as_matrix(out).noalias() = as_matrix(A) * as_matrix(B);
  Var r = push(std::move(out), "matmul", {a, b});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, b, r] {
      const auto dy = as_matrix(nodes_[r.id].grad);
      if (nodes_[a.id].requires_grad) {
        as_matrix(acc(a.id)).noalias() += dy * as_matrix(val(b.id)).transpose();
      }
      if (nodes_[b.id].requires_grad) {
        as_matrix(acc(b.id)).noalias() += as_matrix(val(a.id)).transpose() * dy;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::affine(Var x, Var w, Var b) {
  const Tensor<T>& X = value(x);
  const Tensor<T>& W = value(w);
  const Tensor<T>& B = value(b);
  if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) {
    throw DimensionError("affine: shapes " + shape_string(X.shape()) + ", " +
                         shape_string(W.shape()) + " and bias " + shape_string(B.shape()) +
                         " do not conform");
  }
  Tensor<T> out(matrix_shape(X, X.rows(), W.cols()));
  auto Y = as_matrix(out);
  Y.noalias() = as_matrix(X) * as_matrix(W);
  Y.rowwise() += as_matrix(B).row(0);
  Var r = push(std::move(out), "affine", {x, w, b});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, x, w, b, r] {
      const auto dy = as_matrix(nodes_[r.id].grad);
      if (nodes_[x.id].requires_grad) {
        as_matrix(acc(x.id)).noalias() += dy * as_matrix(val(w.id)).transpose();
      }
      if (nodes_[w.id].requires_grad) {
        as_matrix(acc(w.id)).noalias() += as_matrix(val(x.id)).transpose() * dy;
      }
      if (nodes_[b.id].requires_grad) {
        as_matrix(acc(b.id)).row(0) += dy.colwise().sum();
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = value(a);
  const Tensor<T>& B = val(b.id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  Var r = push(std::move(out), "add", {a, b});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, b, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      for (Var in : {a, b}) {
        if (!nodes_[in.id].requires_grad) continue;
        Tensor<T>& g = acc(in.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = value(a);
  const Tensor<T>& B = val(b.id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  Var r = push(std::move(out), "sub", {a, b});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, b, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) {
        Tensor<T>& g = acc(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
      if (nodes_[b.id].requires_grad) {
        Tensor<T>& g = acc(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  require_same_shape(a, b, "multiply");
  Tensor<T> out = value(a);
  const Tensor<T>& B = val(b.id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  Var r = push(std::move(out), "multiply", {a, b});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, b, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) {
        const Tensor<T>& B = val(b.id);
        Tensor<T>& g = acc(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * B[i];
      }
      if (nodes_[b.id].requires_grad) {
        const Tensor<T>& A = val(a.id);
        Tensor<T>& g = acc(b.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * A[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::one_minus(Var a) {
  Tensor<T> out = value(a);
  for (T& v : out.values()) v = T(1) - v;
  Var r = push(std::move(out), "subtract_from_one", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      Tensor<T>& g = acc(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (T& v : out.values()) v *= factor;
  Var r = push(std::move(out), "scale", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r, factor] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      Tensor<T>& g = acc(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * dy[i];
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::tanh(Var a) {
  Tensor<T> out = value(a);
  for (T& v : out.values()) v = std::tanh(v);
  Var r = push(std::move(out), "tanh", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& y = nodes_[r.id].value;
      Tensor<T>& g = acc(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * (T(1) - y[i] * y[i]);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  Tensor<T> out = value(a);
  for (T& v : out.values()) v = stable_sigmoid(v);
  Var r = push(std::move(out), "sigmoid", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& y = nodes_[r.id].value;
      Tensor<T>& g = acc(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * y[i] * (T(1) - y[i]);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::pointwise(PointwiseOp op, std::span<const Var> args) {
  const std::size_t arity =
      (op == PointwiseOp::multiply || op == PointwiseOp::add) ? 2 : 1;
  if (args.size() != arity) {
    throw ContractError("pointwise: expected " + std::to_string(arity) + " arguments, got " +
                        std::to_string(args.size()));
  }
  switch (op) {
    case PointwiseOp::tanh: return tanh(args[0]);
    case PointwiseOp::sigmoid: return sigmoid(args[0]);
    case PointwiseOp::multiply: return mul(args[0], args[1]);
    case PointwiseOp::add: return add(args[0], args[1]);
    case PointwiseOp::subtract_from_one: return one_minus(args[0]);
  }
  throw ContractError("pointwise: unknown op");
}

template <typename T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int rows = value(parts[0]).rows();
  int cols = 0;
  for (Var p : parts) {
    const Tensor<T>& t = value(p);
    if (t.rows() != rows) {
      throw DimensionError("concat_cols: row count " + shape_string(t.shape()) + " vs " +
                           shape_string(value(parts[0]).shape()));
    }
    cols += t.cols();
  }
  Tensor<T> out(matrix_shape(value(parts[0]), rows, cols));
  int offset = 0;
  for (Var p : parts) {
    const Tensor<T>& t = val(p.id);
    for (int r = 0; r < rows; ++r) {
      std::copy(t.row(r).begin(), t.row(r).end(), out.row(r).begin() + offset);
    }
    offset += t.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Var r = push(std::move(out), "concat_cols", parts);
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, inputs, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      int off = 0;
      for (Var p : inputs) {
        const int width = val(p.id).cols();
        if (nodes_[p.id].requires_grad) {
          Tensor<T>& g = acc(p.id);
          for (int row = 0; row < g.rows(); ++row) {
            auto src = dy.row(row).subspan(off, width);
            auto dst = g.row(row);
            for (int c = 0; c < width; ++c) dst[c] += src[c];
          }
        }
        off += width;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::slice_cols(Var a, int offset, int width) {
  const Tensor<T>& A = value(a);
  if (offset < 0 || width <= 0 || offset + width > A.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(offset) + ", +" +
                         std::to_string(width) + ") outside " + shape_string(A.shape()));
  }
  Tensor<T> out(matrix_shape(A, A.rows(), width));
  for (int r = 0; r < A.rows(); ++r) {
    auto src = A.row(r).subspan(offset, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  Var r = push(std::move(out), "slice_cols", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r, offset, width] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      Tensor<T>& g = acc(a.id);
      for (int row = 0; row < g.rows(); ++row) {
        auto dst = g.row(row).subspan(offset, width);
        auto src = dy.row(row);
        for (int c = 0; c < width; ++c) dst[c] += src[c];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack_rows: no inputs");
  const int cols = value(parts[0]).cols();
  int rows = 0;
  for (Var p : parts) {
    const Tensor<T>& t = value(p);
    if (t.cols() != cols) {
      throw DimensionError("stack_rows: column count " + shape_string(t.shape()) + " vs " +
                           shape_string(value(parts[0]).shape()));
    }
    rows += t.rows();
  }
  Tensor<T> out({rows, cols});
  auto dst = out.values().begin();
  for (Var p : parts) dst = std::copy(val(p.id).values().begin(), val(p.id).values().end(), dst);
  std::vector<Var> inputs(parts.begin(), parts.end());
  Var r = push(std::move(out), "stack_rows", parts);
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, inputs, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      std::size_t off = 0;
      for (Var p : inputs) {
        const std::size_t n = val(p.id).size();
        if (nodes_[p.id].requires_grad) {
          Tensor<T>& g = acc(p.id);
          for (std::size_t i = 0; i < n; ++i) g[i] += dy[off + i];
        }
        off += n;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::span<const int> indices) {
  const Tensor<T>& W = value(table);
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  const int cols = W.cols();
  Tensor<T> out({static_cast<int>(indices.size()), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= W.rows()) {
      throw VocabularyError("index " + std::to_string(idx) + " outside table of " +
                            std::to_string(W.rows()) + " rows");
    }
    std::copy(W.row(idx).begin(), W.row(idx).end(), out.row(static_cast<int>(i)).begin());
  }
  std::vector<int> idx(indices.begin(), indices.end());
  Var r = push(std::move(out), "gather_rows", {table});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, table, r, idx = std::move(idx)] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      Tensor<T>& g = acc(table.id);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = dy.row(static_cast<int>(i));
        auto dst = g.row(idx[i]);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::blend_rows(Var on, Var off, std::span<const unsigned char> mask) {
  require_same_shape(on, off, "blend_rows");
  const Tensor<T>& A = value(on);
  const Tensor<T>& B = val(off.id);
  if (static_cast<int>(mask.size()) != A.rows()) {
    throw DimensionError("blend_rows: mask of " + std::to_string(mask.size()) +
                         " rows for " + shape_string(A.shape()));
  }
  Tensor<T> out = A;
  for (int row = 0; row < out.rows(); ++row) {
    if (!mask[row]) std::copy(B.row(row).begin(), B.row(row).end(), out.row(row).begin());
  }
  std::vector<unsigned char> m(mask.begin(), mask.end());
  Var r = push(std::move(out), "blend_rows", {on, off});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, on, off, r, m = std::move(m)] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      for (int row = 0; row < dy.rows(); ++row) {
        const Var target = m[row] ? on : off;
        if (!nodes_[target.id].requires_grad) continue;
        auto dst = acc(target.id).row(row);
        auto src = dy.row(row);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::softmax(Var logits) {
  Tensor<T> out = charnmt::softmax(value(logits));
  Var r = push(std::move(out), "softmax", {logits});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, logits, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& y = nodes_[r.id].value;
      Tensor<T>& g = acc(logits.id);
      for (int row = 0; row < y.rows(); ++row) {
        T dot = 0;
        for (int c = 0; c < y.cols(); ++c) dot += dy.at(row, c) * y.at(row, c);
        for (int c = 0; c < y.cols(); ++c) g.at(row, c) += y.at(row, c) * (dy.at(row, c) - dot);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::log_softmax(Var logits) {
  const Tensor<T>& X = value(logits);
  Tensor<T> out = X;
  for (int row = 0; row < out.rows(); ++row) {
    auto v = out.row(row);
    const T peak = *std::max_element(v.begin(), v.end());
    T total = 0;
    for (T x : v) total += std::exp(x - peak);
    const T lse = peak + std::log(total);
    for (T& x : v) x -= lse;
  }
  Var r = push(std::move(out), "log_softmax", {logits});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, logits, r] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& y = nodes_[r.id].value;
      Tensor<T>& g = acc(logits.id);
      for (int row = 0; row < y.rows(); ++row) {
        T total = 0;
        for (int c = 0; c < y.cols(); ++c) total += dy.at(row, c);
        for (int c = 0; c < y.cols(); ++c) {
          g.at(row, c) += dy.at(row, c) - std::exp(y.at(row, c)) * total;
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::masked_softmax(Var scores, std::span<const int> lengths) {
  const Tensor<T>& S = value(scores);
  if (static_cast<int>(lengths.size()) != S.rows()) {
    throw DimensionError("masked_softmax: " + std::to_string(lengths.size()) +
                         " lengths for " + shape_string(S.shape()));
  }
  Tensor<T> out(S.shape());
  for (int row = 0; row < S.rows(); ++row) {
    const int n = lengths[row];
    if (n < 1 || n > S.cols()) {
      throw DomainError("masked_softmax: length " + std::to_string(n) + " outside [1, " +
                        std::to_string(S.cols()) + "]");
    }
    auto s = S.row(row).first(n);
    auto y = out.row(row);
    const T peak = *std::max_element(s.begin(), s.end());
    T total = 0;
    for (int c = 0; c < n; ++c) {
      y[c] = std::exp(s[c] - peak);
      total += y[c];
    }
    for (int c = 0; c < n; ++c) y[c] /= total;
  }
  std::vector<int> lens(lengths.begin(), lengths.end());
  Var r = push(std::move(out), "masked_softmax", {scores});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, scores, r, lens = std::move(lens)] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& y = nodes_[r.id].value;
      Tensor<T>& g = acc(scores.id);
      for (int row = 0; row < y.rows(); ++row) {
        T dot = 0;
        for (int c = 0; c < lens[row]; ++c) dot += dy.at(row, c) * y.at(row, c);
        for (int c = 0; c < lens[row]; ++c) g.at(row, c) += y.at(row, c) * (dy.at(row, c) - dot);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::additive_scores(Var keys, Var query, Var v, int positions) {
  const Tensor<T>& K = value(keys);
  const Tensor<T>& Q = value(query);
  const Tensor<T>& V = value(v);
  const int batch = Q.rows();
  const int width = Q.cols();
  if (positions < 1 || K.rows() != positions * batch || K.cols() != width ||
      static_cast<int>(V.size()) != width) {
    throw DimensionError("additive_scores: keys " + shape_string(K.shape()) + ", query " +
                         shape_string(Q.shape()) + ", v " + shape_string(V.shape()) +
                         " with " + std::to_string(positions) + " positions");
  }
  // Hidden activations are kept for the backward pass.
  auto hidden = std::make_shared<Tensor<T>>(K.shape());
  Tensor<T> out({batch, positions});
  for (int t = 0; t < positions; ++t) {
    for (int b = 0; b < batch; ++b) {
      const int row = t * batch + b;
      const T* k = K.data() + static_cast<std::size_t>(row) * width;
      const T* q = Q.data() + static_cast<std::size_t>(b) * width;
      T* h = hidden->data() + static_cast<std::size_t>(row) * width;
      T s = 0;
      for (int a = 0; a < width; ++a) {
        h[a] = std::tanh(k[a] + q[a]);
        s += V[a] * h[a];
      }
      out.at(b, t) = s;
    }
  }
  Var r = push(std::move(out), "additive_scores", {keys, query, v});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, keys, query, v, r, hidden, positions, batch, width] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& V = val(v.id);
      Tensor<T>* dk = nodes_[keys.id].requires_grad ? &acc(keys.id) : nullptr;
      Tensor<T>* dq = nodes_[query.id].requires_grad ? &acc(query.id) : nullptr;
      Tensor<T>* dv = nodes_[v.id].requires_grad ? &acc(v.id) : nullptr;
      for (int t = 0; t < positions; ++t) {
        for (int b = 0; b < batch; ++b) {
          const int row = t * batch + b;
          const T ds = dy.at(b, t);
          if (ds == T(0)) continue;
          const T* h = hidden->data() + static_cast<std::size_t>(row) * width;
          for (int a = 0; a < width; ++a) {
            const T dpre = ds * V[a] * (T(1) - h[a] * h[a]);
            if (dk) (*dk)[static_cast<std::size_t>(row) * width + a] += dpre;
            if (dq) (*dq)[static_cast<std::size_t>(b) * width + a] += dpre;
            if (dv) (*dv)[a] += ds * h[a];
          }
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::weighted_sum(Var weights, Var values) {
  const Tensor<T>& W = value(weights);
  const Tensor<T>& Z = value(values);
  const int batch = W.rows();
  const int positions = W.cols();
  const int width = Z.cols();
  if (Z.rows() != positions * batch) {
    throw DimensionError("weighted_sum: weights " + shape_string(W.shape()) + " and values " +
                         shape_string(Z.shape()) + " do not conform");
  }
  Tensor<T> out({batch, width});
  for (int t = 0; t < positions; ++t) {
    for (int b = 0; b < batch; ++b) {
      const T w = W.at(b, t);
      if (w == T(0)) continue;
      auto z = Z.row(t * batch + b);
      auto c = out.row(b);
      for (int k = 0; k < width; ++k) c[k] += w * z[k];
    }
  }
  Var r = push(std::move(out), "weighted_sum", {weights, values});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, weights, values, r, positions, batch, width] {
      const Tensor<T>& dy = nodes_[r.id].grad;
      const Tensor<T>& W = val(weights.id);
      const Tensor<T>& Z = val(values.id);
      Tensor<T>* dw = nodes_[weights.id].requires_grad ? &acc(weights.id) : nullptr;
      Tensor<T>* dz = nodes_[values.id].requires_grad ? &acc(values.id) : nullptr;
      for (int t = 0; t < positions; ++t) {
        for (int b = 0; b < batch; ++b) {
          auto g = dy.row(b);
          const int row = t * batch + b;
          if (dw) {
            auto z = Z.row(row);
            T dot = 0;
            for (int k = 0; k < width; ++k) dot += g[k] * z[k];
            dw->at(b, t) += dot;
          }
          if (dz) {
            const T w = W.at(b, t);
            auto d = dz->row(row);
            for (int k = 0; k < width; ++k) d[k] += w * g[k];
          }
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::pick_sum(Var logp, std::span<const int> targets, std::span<const T> weights) {
  const Tensor<T>& L = value(logp);
  if (static_cast<int>(targets.size()) != L.rows() || weights.size() != targets.size()) {
    throw DimensionError("pick_sum: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(L.shape()));
  }
  T total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (weights[i] == T(0)) continue;
    if (targets[i] < 0 || targets[i] >= L.cols()) {
      throw VocabularyError("target index " + std::to_string(targets[i]) + " outside " +
                            std::to_string(L.cols()) + " classes");
    }
    total += weights[i] * L.at(static_cast<int>(i), targets[i]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<T> w(weights.begin(), weights.end());
  Var r = push(Tensor<T>({1}, std::vector<T>{total}), "pick_sum", {logp});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, logp, r, tgt = std::move(tgt), w = std::move(w)] {
      const T dy = nodes_[r.id].grad[0];
      Tensor<T>& g = acc(logp.id);
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        if (w[i] != T(0)) g.at(static_cast<int>(i), tgt[i]) += dy * w[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sum(Var a) {
  const Tensor<T>& A = value(a);
  T total = 0;
  for (T v : A.values()) total += v;
  Var r = push(Tensor<T>({1}, std::vector<T>{total}), "sum", {a});
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backprop = [this, a, r] {
      const T dy = nodes_[r.id].grad[0];
      Tensor<T>& g = acc(a.id);
      for (T& v : g.values()) v += dy;
    };
  }
  return r;
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var loss) {
  const Node& l = node(loss);
  if (val(loss.id).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        shape_string(val(loss.id).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  if (l.requires_grad) {
    acc(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.backprop && !n.grad.empty()) n.backprop();
    }
  }
  GradientMap<T> grads;
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
    const Node& n = nodes_[id];
    if (n.param_name.empty()) continue;
    Tensor<T> g = n.grad.empty() ? Tensor<T>(val(id).shape()) : n.grad;
    auto [it, inserted] = grads.emplace(n.param_name, g);
    if (!inserted) {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return grads;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace charnmt
