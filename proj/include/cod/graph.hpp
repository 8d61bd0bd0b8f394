#pragma once

#include "cod/kernels.hpp"
#include "cod/tensor.hpp"

#include <unordered_map>
#include <vector>

namespace cod {

enum class Op {
  Input,
  Param,
  Conv1d,
  ConvT1d,
  Dense,
  SiLU,
  GroupNorm,
  Add,
  Sub,
  Scale,
  AddChannelBias,
  ConcatChannels,
  SumSquares,
  MatMul,
  Reshape,
  SwapTimeChannel,
};

using NodeId = int;

// Reverse-mode tape. Creation order is the topological order: every node's
// inputs are created before the node itself, so backward is a single reverse
// sweep. Values of all nodes are kept for the backward pass.
template <typename T>
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    int stride = 1, padding = 0, groups = 0;
    T scalar{};
    Tensor<T> aux;  // group-norm statistics
  };

  NodeId input(Tensor<T> v) { return push(Op::Input, {}, std::move(v), false); }

  NodeId param(Tensor<T> v) {
    NodeId id = push(Op::Param, {}, std::move(v), true);
    params_.push_back(id);
    return id;
  }

  NodeId conv1d(NodeId x, NodeId k, NodeId bias, int stride, int padding) {
    const Tensor<T>* b = bias >= 0 ? &value(bias) : nullptr;
    Tensor<T> y = conv1d_forward(value(x), value(k), b, stride, padding);
    std::vector<NodeId> in = {x, k};
    if (bias >= 0) in.push_back(bias);
    NodeId id = push(Op::Conv1d, std::move(in), std::move(y), any_grad({x, k, bias}));
    node(id).stride = stride;
    node(id).padding = padding;
    return id;
  }

  NodeId conv1d_transposed(NodeId x, NodeId k, NodeId bias, int stride, int padding) {
    const Tensor<T>* b = bias >= 0 ? &value(bias) : nullptr;
    Tensor<T> y = convt1d_forward(value(x), value(k), b, stride, padding);
    std::vector<NodeId> in = {x, k};
    if (bias >= 0) in.push_back(bias);
    NodeId id = push(Op::ConvT1d, std::move(in), std::move(y), any_grad({x, k, bias}));
    node(id).stride = stride;
    node(id).padding = padding;
    return id;
  }

  NodeId dense(NodeId x, NodeId w, NodeId bias) {
    const Tensor<T>* b = bias >= 0 ? &value(bias) : nullptr;
    Tensor<T> y = dense_forward(value(x), value(w), b);
    std::vector<NodeId> in = {x, w};
    if (bias >= 0) in.push_back(bias);
    return push(Op::Dense, std::move(in), std::move(y), any_grad({x, w, bias}));
  }

  NodeId silu(NodeId x) {
    Tensor<T> y;
    y.shape = value(x).shape;
    y.data = value(x).data * (T(1) / (T(1) + (-value(x).data).exp()));
    return push(Op::SiLU, {x}, std::move(y), node(x).requires_grad);
  }

  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, T eps) {
    auto r = group_norm_forward(value(x), value(gamma), value(beta), groups, eps);
    NodeId id =
        push(Op::GroupNorm, {x, gamma, beta}, std::move(r.y), any_grad({x, gamma, beta}));
    node(id).groups = groups;
    node(id).aux = std::move(r.stats);
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    check_same_shape("add", value(a), value(b));
    Tensor<T> y;
    y.shape = value(a).shape;
    y.data = value(a).data + value(b).data;
    return push(Op::Add, {a, b}, std::move(y), any_grad({a, b}));
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same_shape("sub", value(a), value(b));
    Tensor<T> y;
    y.shape = value(a).shape;
    y.data = value(a).data - value(b).data;
    return push(Op::Sub, {a, b}, std::move(y), any_grad({a, b}));
  }

  NodeId scale(NodeId x, T s) {
    Tensor<T> y;
    y.shape = value(x).shape;
    y.data = value(x).data * s;
    NodeId id = push(Op::Scale, {x}, std::move(y), node(x).requires_grad);
    node(id).scalar = s;
    return id;
  }

  // x [B,C,L] + e [B,C] broadcast along L; the embedding-injection path.
  NodeId add_channel_bias(NodeId x, NodeId e) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& ev = value(e);
    if (xv.ndim() != 3 || ev.ndim() != 2 || xv.dim(0) != ev.dim(0) || xv.dim(1) != ev.dim(1))
      throw std::invalid_argument("add_channel_bias: want [B,C,L] and [B,C], got " +
                                  shape_str(xv.shape) + " and " + shape_str(ev.shape));
    Tensor<T> y = xv;
    const int B = xv.dim(0), C = xv.dim(1), L = xv.dim(2);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(
            y.data.data() + (static_cast<std::int64_t>(b) * C + c) * L, L) += ev.at2(b, c);
    return push(Op::AddChannelBias, {x, e}, std::move(y), any_grad({x, e}));
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2))
      throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(av.shape) +
                                  " and " + shape_str(bv.shape));
    const int B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), L = av.dim(2);
    Tensor<T> y({B, Ca + Cb, L});
    const std::int64_t na = static_cast<std::int64_t>(Ca) * L;
    const std::int64_t nb = static_cast<std::int64_t>(Cb) * L;
    for (int i = 0; i < B; ++i) {
      y.data.segment(static_cast<std::int64_t>(i) * (na + nb), na) =
          av.data.segment(static_cast<std::int64_t>(i) * na, na);
      y.data.segment(static_cast<std::int64_t>(i) * (na + nb) + na, nb) =
          bv.data.segment(static_cast<std::int64_t>(i) * nb, nb);
    }
    return push(Op::ConcatChannels, {a, b}, std::move(y), any_grad({a, b}));
  }

  NodeId sum_squares(NodeId x) {
    Tensor<T> y({1});
    y.at(0) = value(x).data.square().sum();
    return push(Op::SumSquares, {x}, std::move(y), node(x).requires_grad);
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0))
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                                  shape_str(bv.shape));
    const int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
    Tensor<T> y({M, N});
    ConstRowMajorMap<T> am(av.data.data(), M, K), bm(bv.data.data(), K, N);
    RowMajorMap<T>(y.data.data(), M, N).noalias() = am * bm;
    return push(Op::MatMul, {a, b}, std::move(y), any_grad({a, b}));
  }

  NodeId reshape(NodeId x, Shape s) {
    Tensor<T> y = value(x).reshaped(std::move(s));
    return push(Op::Reshape, {x}, std::move(y), node(x).requires_grad);
  }

  // [B,A,C] -> [B,C,A]
  NodeId swap_time_channel(NodeId x) {
    const Tensor<T>& xv = value(x);
    if (xv.ndim() != 3)
      throw std::invalid_argument("swap_time_channel: want rank 3, got " + shape_str(xv.shape));
    const int B = xv.dim(0), A = xv.dim(1), C = xv.dim(2);
    Tensor<T> y({B, C, A});
    for (int b = 0; b < B; ++b) {
      ConstRowMajorMap<T> in(xv.data.data() + static_cast<std::int64_t>(b) * A * C, A, C);
      RowMajorMap<T>(y.data.data() + static_cast<std::int64_t>(b) * A * C, C, A) =
          in.transpose();
    }
    return push(Op::SwapTimeChannel, {x}, std::move(y), node(x).requires_grad);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const std::vector<NodeId>& params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    params_.clear();
  }

  // Gradients of a scalar loss w.r.t. every Param node. Params the loss does
  // not reach get zero gradients.
  std::unordered_map<NodeId, Tensor<T>> backward(NodeId loss) const {
    if (value(loss).numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(value(loss).shape));
    std::vector<Tensor<T>> grads(nodes_.size());
    std::vector<char> has_grad(nodes_.size(), 0);
    auto accumulate = [&](NodeId id, Tensor<T>&& g) {
      if (!nodes_[static_cast<std::size_t>(id)].requires_grad) return;
      if (!has_grad[static_cast<std::size_t>(id)]) {
        grads[static_cast<std::size_t>(id)] = std::move(g);
        has_grad[static_cast<std::size_t>(id)] = 1;
      } else {
        grads[static_cast<std::size_t>(id)].data += g.data;
      }
    };
    accumulate(loss, Tensor<T>::constant(value(loss).shape, T(1)));

    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || !has_grad[static_cast<std::size_t>(id)]) continue;
      const Tensor<T>& g = grads[static_cast<std::size_t>(id)];
      switch (n.op) {
        case Op::Input:
        case Op::Param:
          break;
        case Op::Conv1d: {
          const Tensor<T>& x = value(n.inputs[0]);
          const Tensor<T>& k = value(n.inputs[1]);
          if (needs(n.inputs[0]))
            accumulate(n.inputs[0],
                       conv1d_backward_data(g, k, n.stride, n.padding, x.dim(2)));
          if (needs(n.inputs[1]))
            accumulate(n.inputs[1], conv1d_backward_kernel(g, x, n.stride, n.padding, k.dim(2)));
          if (n.inputs.size() > 2 && needs(n.inputs[2])) accumulate(n.inputs[2], bias_grad(g));
          break;
        }
        case Op::ConvT1d: {
          const Tensor<T>& x = value(n.inputs[0]);
          const Tensor<T>& k = value(n.inputs[1]);
          if (needs(n.inputs[0]))
            accumulate(n.inputs[0],
                       convt1d_backward_data(g, k, n.stride, n.padding, x.dim(2)));
          if (needs(n.inputs[1]))
            accumulate(n.inputs[1], convt1d_backward_kernel(g, x, n.stride, n.padding, k.dim(2)));
          if (n.inputs.size() > 2 && needs(n.inputs[2])) accumulate(n.inputs[2], bias_grad(g));
          break;
        }
        case Op::Dense: {
          const Tensor<T>& x = value(n.inputs[0]);
          const Tensor<T>& w = value(n.inputs[1]);
          const int B = x.dim(0), I = x.dim(1), O = w.dim(0);
          ConstRowMajorMap<T> gm(g.data.data(), B, O), xm(x.data.data(), B, I),
              wm(w.data.data(), O, I);
          if (needs(n.inputs[0])) {
            Tensor<T> gx({B, I});
            RowMajorMap<T>(gx.data.data(), B, I).noalias() = gm * wm;
            accumulate(n.inputs[0], std::move(gx));
          }
          if (needs(n.inputs[1])) {
            Tensor<T> gw({O, I});
            RowMajorMap<T>(gw.data.data(), O, I).noalias() = gm.transpose() * xm;
            accumulate(n.inputs[1], std::move(gw));
          }
          if (n.inputs.size() > 2 && needs(n.inputs[2])) {
            Tensor<T> gb({O});
            for (int b = 0; b < B; ++b)
              for (int o = 0; o < O; ++o) gb.at(o) += g.at2(b, o);
            accumulate(n.inputs[2], std::move(gb));
          }
          break;
        }
        case Op::SiLU: {
          const Tensor<T>& x = value(n.inputs[0]);
          Tensor<T> gx;
          gx.shape = x.shape;
          const auto s = (T(1) / (T(1) + (-x.data).exp())).eval();
          gx.data = g.data * s * (T(1) + x.data * (T(1) - s));
          accumulate(n.inputs[0], std::move(gx));
          break;
        }
        case Op::GroupNorm: {
          Tensor<T> gx, ggamma, gbeta;
          group_norm_backward(g, value(n.inputs[0]), value(n.inputs[1]), n.aux, n.groups, gx,
                              ggamma, gbeta);
          if (needs(n.inputs[0])) accumulate(n.inputs[0], std::move(gx));
          if (needs(n.inputs[1])) accumulate(n.inputs[1], std::move(ggamma));
          if (needs(n.inputs[2])) accumulate(n.inputs[2], std::move(gbeta));
          break;
        }
        case Op::Add: {
          if (needs(n.inputs[0])) accumulate(n.inputs[0], Tensor<T>(g));
          if (needs(n.inputs[1])) accumulate(n.inputs[1], Tensor<T>(g));
          break;
        }
        case Op::Sub: {
          if (needs(n.inputs[0])) accumulate(n.inputs[0], Tensor<T>(g));
          if (needs(n.inputs[1])) {
            Tensor<T> ng;
            ng.shape = g.shape;
            ng.data = -g.data;
            accumulate(n.inputs[1], std::move(ng));
          }
          break;
        }
        case Op::Scale: {
          Tensor<T> gx;
          gx.shape = g.shape;
          gx.data = g.data * n.scalar;
          accumulate(n.inputs[0], std::move(gx));
          break;
        }
        case Op::AddChannelBias: {
          if (needs(n.inputs[0])) accumulate(n.inputs[0], Tensor<T>(g));
          if (needs(n.inputs[1])) {
            const int B = g.dim(0), C = g.dim(1), L = g.dim(2);
            Tensor<T> ge({B, C});
            for (int b = 0; b < B; ++b)
              for (int c = 0; c < C; ++c)
                ge.at2(b, c) = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(
                                   g.data.data() + (static_cast<std::int64_t>(b) * C + c) * L, L)
                                   .sum();
            accumulate(n.inputs[1], std::move(ge));
          }
          break;
        }
        case Op::ConcatChannels: {
          const Tensor<T>& a = value(n.inputs[0]);
          const int B = g.dim(0), Ca = a.dim(1), Cb = g.dim(1) - a.dim(1), L = g.dim(2);
          const std::int64_t na = static_cast<std::int64_t>(Ca) * L;
          const std::int64_t nb = static_cast<std::int64_t>(Cb) * L;
          if (needs(n.inputs[0])) {
            Tensor<T> ga({B, Ca, L});
            for (int b = 0; b < B; ++b)
              ga.data.segment(static_cast<std::int64_t>(b) * na, na) =
                  g.data.segment(static_cast<std::int64_t>(b) * (na + nb), na);
            accumulate(n.inputs[0], std::move(ga));
          }
          if (needs(n.inputs[1])) {
            Tensor<T> gb({B, Cb, L});
            for (int b = 0; b < B; ++b)
              gb.data.segment(static_cast<std::int64_t>(b) * nb, nb) =
                  g.data.segment(static_cast<std::int64_t>(b) * (na + nb) + na, nb);
            accumulate(n.inputs[1], std::move(gb));
          }
          break;
        }
        case Op::SumSquares: {
          const Tensor<T>& x = value(n.inputs[0]);
          Tensor<T> gx;
          gx.shape = x.shape;
          gx.data = x.data * (T(2) * g.at(0));
          accumulate(n.inputs[0], std::move(gx));
          break;
        }
        case Op::MatMul: {
          const Tensor<T>& a = value(n.inputs[0]);
          const Tensor<T>& b = value(n.inputs[1]);
          const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
          ConstRowMajorMap<T> gm(g.data.data(), M, N), am(a.data.data(), M, K),
              bm(b.data.data(), K, N);
          if (needs(n.inputs[0])) {
            Tensor<T> ga({M, K});
            RowMajorMap<T>(ga.data.data(), M, K).noalias() = gm * bm.transpose();
            accumulate(n.inputs[0], std::move(ga));
          }
          if (needs(n.inputs[1])) {
            Tensor<T> gb({K, N});
            RowMajorMap<T>(gb.data.data(), K, N).noalias() = am.transpose() * gm;
            accumulate(n.inputs[1], std::move(gb));
          }
          break;
        }
        case Op::Reshape: {
          accumulate(n.inputs[0], g.reshaped(value(n.inputs[0]).shape));
          break;
        }
        case Op::SwapTimeChannel: {
          const int B = g.dim(0), C = g.dim(1), A = g.dim(2);
          Tensor<T> gx({B, A, C});
          for (int b = 0; b < B; ++b) {
            ConstRowMajorMap<T> in(g.data.data() + static_cast<std::int64_t>(b) * A * C, C, A);
            RowMajorMap<T>(gx.data.data() + static_cast<std::int64_t>(b) * A * C, A, C) =
                in.transpose();
          }
          accumulate(n.inputs[0], std::move(gx));
          break;
        }
      }
    }

    std::unordered_map<NodeId, Tensor<T>> out;
    for (NodeId p : params_) {
      if (has_grad[static_cast<std::size_t>(p)])
        out.emplace(p, std::move(grads[static_cast<std::size_t>(p)]));
      else
        out.emplace(p, Tensor<T>::zeros(value(p).shape));
    }
    return out;
  }

 private:
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }

  bool needs(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  bool any_grad(std::initializer_list<NodeId> ids) const {
    for (NodeId id : ids)
      if (id >= 0 && needs(id)) return true;
    return false;
  }

  static Tensor<T> bias_grad(const Tensor<T>& g) {
    const int B = g.dim(0), C = g.dim(1), L = g.dim(2);
    Tensor<T> gb({C});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        gb.at(c) += Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(
                        g.data.data() + (static_cast<std::int64_t>(b) * C + c) * L, L)
                        .sum();
    return gb;
  }

  static void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                  " vs " + shape_str(b.shape));
  }

  NodeId push(Op op, std::vector<NodeId> inputs, Tensor<T> value, bool rg) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

}  // namespace cod
