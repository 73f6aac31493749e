#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gunet/conv.hpp"
#include "gunet/errors.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

// A named learnable array. The values live elsewhere (inside a layer's
// ConvParams); the gradient buffer is owned here and is accumulated into by
// Graph::backward. `decay` marks arrays subject to L2 regularization.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  T* data = nullptr;
  std::size_t count = 0;
  std::vector<T> grad;
  bool decay = false;

  void zero_grad() { grad.assign(count, T{}); }
};

using NodeId = int;

// Reverse-mode autodiff tape over Tensor4 values. Records are replayed in
// exact reverse order by backward(); leaf parameters referenced by conv
// records receive accumulated gradients. ConvParams and Parameter objects are
// referenced by pointer and must outlive the graph.
template <typename T>
class Graph {
 public:
  NodeId constant(Tensor4<T> v) { return push_leaf(std::move(v), false); }
  NodeId variable(Tensor4<T> v) { return push_leaf(std::move(v), true); }

  NodeId conv2d(NodeId x, const ConvParams<T>* p, Parameter<T>* w = nullptr,
                Parameter<T>* b = nullptr) {
    Tensor4<T> y = gunet::conv2d(node(x).val, *p);
    return push_op({Op::kConv, x, -1, std::move(y), p, w, b});
  }

  NodeId transpose_conv2d(NodeId x, const ConvParams<T>* p, Parameter<T>* w = nullptr,
                          Parameter<T>* b = nullptr) {
    Tensor4<T> y = gunet::transpose_conv2d(node(x).val, *p);
    return push_op({Op::kTConv, x, -1, std::move(y), p, w, b});
  }

  NodeId leaky_relu(NodeId x, T slope) {
    Tensor4<T> y = gunet::leaky_relu(node(x).val, slope);
    Record r{Op::kLeakyRelu, x, -1, std::move(y)};
    r.scalar = slope;
    return push_op(std::move(r));
  }

  NodeId sigmoid(NodeId x) {
    return push_op({Op::kSigmoid, x, -1, gunet::sigmoid(node(x).val)});
  }

  NodeId add(NodeId a, NodeId b) {
    return push_op({Op::kAdd, a, b, gunet::add(node(a).val, node(b).val)});
  }

  NodeId sub(NodeId a, NodeId b) {
    return push_op({Op::kSub, a, b, gunet::sub(node(a).val, node(b).val)});
  }

  NodeId mul(NodeId a, NodeId b) {
    return push_op({Op::kMul, a, b, gunet::mul(node(a).val, node(b).val)});
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    return push_op({Op::kConcat, a, b, gunet::concat_channels(node(a).val, node(b).val)});
  }

  NodeId scale(NodeId x, T s) {
    Record r{Op::kScale, x, -1, gunet::scale(node(x).val, s)};
    r.scalar = s;
    return push_op(std::move(r));
  }

  // Scalar (1x1x1x1) sum over all elements, accumulated sequentially.
  NodeId sum(NodeId x) {
    Tensor4<T> y(Shape4{1, 1, 1, 1});
    y[0] = static_cast<T>(gunet::sum(node(x).val));
    return push_op({Op::kSum, x, -1, std::move(y)});
  }

  // Mean squared error between two same-shape nodes, as a scalar node.
  NodeId mse(NodeId pred, NodeId target) {
    NodeId d = sub(pred, target);
    NodeId sq = mul(d, d);
    return scale(sum(sq), static_cast<T>(1.0 / static_cast<double>(node(sq).val.size())));
  }

  const Tensor4<T>& value(NodeId id) const { return node(id).val; }
  const Tensor4<T>& grad(NodeId id) const {
    const Node& n = node(id);
    if (n.grad.empty()) throw Error("graph: node has no gradient (backward not run or constant)");
    return n.grad;
  }

  // Populates gradients of all grad-requiring nodes and accumulates into the
  // referenced Parameters' grad buffers. The loss node must be scalar.
  void backward(NodeId loss) {
    Node& ln = node(loss);
    if (!(ln.val.shape() == Shape4{1, 1, 1, 1}))
      throw ShapeError("backward: loss node shape " + ln.val.shape().str() + " is not 1x1x1x1");
    for (Node& n : nodes_)
      if (n.needs_grad)
        n.grad = Tensor4<T>(n.val.shape());
      else
        n.grad = Tensor4<T>();
    if (!ln.needs_grad) return;  // loss built purely from constants
    ln.grad[0] = T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) backward_record(*it);
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    kLeaf,
    kConv,
    kTConv,
    kLeakyRelu,
    kSigmoid,
    kAdd,
    kSub,
    kMul,
    kConcat,
    kScale,
    kSum,
  };

  struct Record {
    Op op;
    NodeId a = -1, b = -1;
    Tensor4<T> val;  // moved into the node on push
    const ConvParams<T>* conv = nullptr;
    Parameter<T>* wparam = nullptr;
    Parameter<T>* bparam = nullptr;
    T scalar = T{};
    NodeId out = -1;
  };

  struct Node {
    Tensor4<T> val;
    Tensor4<T> grad;
    bool needs_grad = false;
  };

  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

  NodeId push_leaf(Tensor4<T> v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), Tensor4<T>(), needs_grad});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId push_op(Record r) {
    const bool needs = r.wparam || r.bparam || node(r.a).needs_grad ||
                       (r.b >= 0 && node(r.b).needs_grad);
    nodes_.push_back(Node{std::move(r.val), Tensor4<T>(), needs});
    const NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    r.out = id;
    tape_.push_back(std::move(r));
    return id;
  }

  void backward_record(const Record& r) {
    Node& out = node(r.out);
    if (!out.needs_grad) return;
    const Tensor4<T>& gy = out.grad;
    Node& na = node(r.a);
    Tensor4<T>* ga = na.needs_grad ? &na.grad : nullptr;
    switch (r.op) {
      case Op::kConv:
        conv2d_backward(na.val, *r.conv, gy, ga, r.wparam ? r.wparam->grad.data() : nullptr,
                        r.bparam ? r.bparam->grad.data() : nullptr);
        break;
      case Op::kTConv:
        transpose_conv2d_backward(na.val, *r.conv, gy, ga,
                                  r.wparam ? r.wparam->grad.data() : nullptr,
                                  r.bparam ? r.bparam->grad.data() : nullptr);
        break;
      case Op::kLeakyRelu:
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i)
            (*ga)[i] += gy[i] * (na.val[i] >= T(0) ? T(1) : r.scalar);
        break;
      case Op::kSigmoid:
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i)
            (*ga)[i] += gy[i] * out.val[i] * (T(1) - out.val[i]);
        break;
      case Op::kAdd: {
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
        Node& nb = node(r.b);
        if (nb.needs_grad)
          for (std::size_t i = 0; i < gy.size(); ++i) nb.grad[i] += gy[i];
        break;
      }
      case Op::kSub: {
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
        Node& nb = node(r.b);
        if (nb.needs_grad)
          for (std::size_t i = 0; i < gy.size(); ++i) nb.grad[i] -= gy[i];
        break;
      }
      case Op::kMul: {
        Node& nb = node(r.b);
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * nb.val[i];
        if (nb.needs_grad)
          for (std::size_t i = 0; i < gy.size(); ++i) nb.grad[i] += gy[i] * na.val[i];
        break;
      }
      case Op::kConcat: {
        Node& nb = node(r.b);
        const Shape4 sa = na.val.shape(), sb = nb.val.shape();
        const std::size_t plane = static_cast<std::size_t>(sa.h) * sa.w;
        for (int n = 0; n < sa.n; ++n) {
          const T* src = gy.data() + static_cast<std::size_t>(n) * (sa.c + sb.c) * plane;
          if (ga) {
            T* da = na.grad.data() + static_cast<std::size_t>(n) * sa.c * plane;
            for (std::size_t i = 0; i < sa.c * plane; ++i) da[i] += src[i];
          }
          if (nb.needs_grad) {
            T* db = nb.grad.data() + static_cast<std::size_t>(n) * sb.c * plane;
            const T* sb_src = src + sa.c * plane;
            for (std::size_t i = 0; i < sb.c * plane; ++i) db[i] += sb_src[i];
          }
        }
        break;
      }
      case Op::kScale:
        if (ga)
          for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * r.scalar;
        break;
      case Op::kSum:
        if (ga)
          for (std::size_t i = 0; i < na.grad.size(); ++i) (*ga)[i] += gy[0];
        break;
      case Op::kLeaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Record> tape_;
};

}  // namespace gunet
