#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "charnmt/tensor.hpp"

namespace charnmt {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
using GradientMap = std::map<std::string, Tensor<T>>;

enum class PointwiseOp { tanh, sigmoid, multiply, add, subtract_from_one };

#ifdef NDEBUG
inline constexpr bool kCheckFiniteDefault = false;
#else
inline constexpr bool kCheckFiniteDefault = true;
#endif

// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
// topologically sorted by construction and backward is a single reverse sweep.
//
// A graph is confined to one thread. Parameter leaves reference tensors owned
// elsewhere (usually a ParameterStore) which must outlive the graph and stay
// unmodified while it is alive.
template <typename T>
class Graph {
 public:
  // With track_gradients off no leaf requires a gradient and no backward
  // closures are recorded; used for inference.
  explicit Graph(bool check_finite = kCheckFiniteDefault, bool track_gradients = true)
      : check_finite_(check_finite), track_gradients_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf without gradient.
  Var constant(Tensor<T> value);
  // Leaf that accumulates a gradient readable through grad().
  Var variable(Tensor<T> value);
  // Named leaf referencing external storage; reported by backward().
  Var parameter(const std::string& name, const Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  // Gradient after backward(); zeros when the node received none.
  Tensor<T> grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  Var matmul(Var a, Var b);
  // x W + b with b broadcast over rows.
  Var affine(Var x, Var w, Var b);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var one_minus(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var scale(Var a, T factor);
  Var pointwise(PointwiseOp op, std::span<const Var> args);

  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice_cols(Var a, int offset, int width);
  Var stack_rows(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const int> indices);
  // Row i of the result is row i of `on` when mask[i] is nonzero, else of `off`.
  Var blend_rows(Var on, Var off, std::span<const unsigned char> mask);

  Var softmax(Var logits);
  Var log_softmax(Var logits);
  // Row-wise softmax over the first lengths[row] columns; the rest get weight 0.
  Var masked_softmax(Var scores, std::span<const int> lengths);

  // keys: (positions * batch) x A laid out position-major; query: batch x A;
  // v: A x 1. Returns batch x positions with s[b,t] = v . tanh(keys[t,b] + query[b]).
  Var additive_scores(Var keys, Var query, Var v, int positions);
  // weights: batch x P; values: (P * batch) x C position-major. Returns batch x C.
  Var weighted_sum(Var weights, Var values);

  // Scalar sum_i weights[i] * logp[i, targets[i]].
  Var pick_sum(Var logp, std::span<const int> targets, std::span<const T> weights);
  Var sum(Var a);

  // Gradients of a scalar loss for every parameter leaf. Parameters the loss
  // does not depend on map to zero tensors.
  GradientMap<T> backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string param_name;
    std::function<void()> backprop;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  const Tensor<T>& val(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  Tensor<T>& acc(int id);
  Var push(Tensor<T> value, const char* op, std::initializer_list<Var> inputs);
  Var push(Tensor<T> value, const char* op, std::span<const Var> inputs);
  void require_same_shape(Var a, Var b, const char* op) const;

  bool check_finite_;
  bool track_gradients_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace charnmt
