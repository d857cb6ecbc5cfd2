#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "poserec/tensor.hpp"

namespace poserec {

// A learnable tensor plus its gradient and Adam state. Owned by a ParamStore;
// addresses are stable for the life of the store.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  Parameter(std::string n, std::vector<std::size_t> dims)
      : name(std::move(n)), value(dims), grad(dims), adam_m(dims), adam_v(std::move(dims)) {}
};

class ParamStore {
 public:
  Parameter& create(std::string name, std::vector<std::size_t> dims) {
    if (index_.count(name)) throw UsageError("parameter name already registered: " + name);
    params_.push_back(std::make_unique<Parameter>(name, std::move(dims)));
    index_[params_.back()->name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }

  void zero_grads() {
    for (auto& p : params_) std::fill(p->grad.data().begin(), p->grad.data().end(), 0.0);
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reverse-mode tape. Each op records enough to replay its local backward;
// a backward() sweep in reverse creation order accumulates gradients into
// every Parameter leaf. A tape is built for one forward pass and discarded.
//
// Confinement: a tape (and the parameters it writes gradients into) belongs
// to one worker; building tapes over the same ParamStore from several threads
// is not supported. Forward-only evaluation on separate tapes is safe as long
// as nothing mutates the parameters underneath.
class Tape {
 public:
  using VarId = std::uint32_t;

  // --- leaves ---

  VarId input(Tensor value) {
    Node n;
    n.op = Op::kInput;
    n.value = std::move(value);
    n.needs_grad = false;
    return push(std::move(n));
  }

  VarId param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::kParam;
    n.param = &p;
    n.needs_grad = true;
    VarId id = push(std::move(n));
    param_nodes_[&p] = id;
    return id;
  }

  // --- ops ---

  VarId matmul(VarId a, VarId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
      throw ShapeError("matmul: incompatible operands " + ta.dims_str() + " and " + tb.dims_str());
    }
    Node n = binary(Op::kMatMul, a, b);
    n.value = Tensor({ta.dim(0), tb.dim(1)});
    detail::mm_accum(ta.raw(), tb.raw(), n.value.raw(), ta.dim(0), ta.dim(1), tb.dim(1));
    return push(std::move(n));
  }

  VarId add(VarId a, VarId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_dims(tb)) {
      throw ShapeError("add: dims " + ta.dims_str() + " vs " + tb.dims_str());
    }
    Node n = binary(Op::kAdd, a, b);
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value[i] += tb[i];
    return push(std::move(n));
  }

  VarId sub(VarId a, VarId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_dims(tb)) {
      throw ShapeError("sub: dims " + ta.dims_str() + " vs " + tb.dims_str());
    }
    Node n = binary(Op::kSub, a, b);
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value[i] -= tb[i];
    return push(std::move(n));
  }

  VarId scale(VarId a, double c) {
    Node n = unary(Op::kScale, a);
    n.scalar0 = c;
    n.value = value(a);
    for (double& v : n.value.data()) v *= c;
    return push(std::move(n));
  }

  VarId relu(VarId a) {
    Node n = unary(Op::kRelu, a);
    n.value = value(a);
    for (double& v : n.value.data()) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
  }

  // y = W x + b with W [m x n], x [n], b [m].
  VarId affine(VarId w, VarId x, VarId b) {
    const Tensor& tw = value(w);
    const Tensor& tx = value(x);
    const Tensor& tb = value(b);
    if (tw.rank() != 2 || tx.rank() != 1 || tb.rank() != 1 || tw.dim(1) != tx.size() ||
        tw.dim(0) != tb.size()) {
      throw ShapeError("affine: W " + tw.dims_str() + ", x " + tx.dims_str() + ", b " +
                       tb.dims_str());
    }
    Node n;
    n.op = Op::kAffine;
    n.in = {w, x, b};
    n.n_in = 3;
    n.needs_grad = any_needs_grad(n);
    n.value = tb;
    const std::size_t m = tw.dim(0), nn = tw.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      n.value[i] += detail::dot({tw.raw() + i * nn, nn}, tx.data());
    }
    return push(std::move(n));
  }

  // Spatial half of an ST-GCN layer: y = A x W applied frame-wise.
  // x [C,T,N], adj [N,N] (an input var), W [C,Cout]; y [Cout,T,N].
  VarId spatial_gcn(VarId x, VarId adj, VarId w) {
    const Tensor& tx = value(x);
    const Tensor& ta = value(adj);
    const Tensor& tw = value(w);
    if (tx.rank() != 3 || ta.rank() != 2 || tw.rank() != 2 || ta.dim(0) != ta.dim(1) ||
        tx.dim(2) != ta.dim(0) || tw.dim(0) != tx.dim(0)) {
      throw ShapeError("spatial_gcn: x " + tx.dims_str() + ", adj " + ta.dims_str() + ", W " +
                       tw.dims_str());
    }
    const std::size_t c = tx.dim(0), t = tx.dim(1), nn = tx.dim(2), cout = tw.dim(1);
    Node n;
    n.op = Op::kSpatialGcn;
    n.in = {x, adj, w};
    n.n_in = 3;
    n.needs_grad = any_needs_grad(n);
    // ag(c,t,:) = A * x(c,t,:)  ==  flat(CT x N) * A^T
    n.aux = Tensor({c, t, nn});
    detail::mm_abt_accum(tx.raw(), ta.raw(), n.aux.raw(), c * t, nn, nn);
    // y(Cout x TN) = W^T * ag(C x TN)
    n.value = Tensor({cout, t, nn});
    detail::mm_atb_accum(tw.raw(), n.aux.raw(), n.value.raw(), cout, c, t * nn);
    return push(std::move(n));
  }

  // Depthwise temporal convolution over the T axis, symmetric zero padding,
  // odd kernel. x [C,T,N], w [C,k], b [C]; y [C, ceil(T/stride), N].
  VarId temporal_conv(VarId x, VarId w, VarId b, std::size_t stride) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    const Tensor& tb = value(b);
    if (tx.rank() != 3 || tw.rank() != 2 || tb.rank() != 1 || tw.dim(0) != tx.dim(0) ||
        tb.size() != tx.dim(0) || tw.dim(1) % 2 == 0 || stride == 0) {
      throw ShapeError("temporal_conv: x " + tx.dims_str() + ", w " + tw.dims_str() + ", b " +
                       tb.dims_str());
    }
    const std::size_t c = tx.dim(0), t = tx.dim(1), nn = tx.dim(2), k = tw.dim(1);
    const std::size_t tout = (t + stride - 1) / stride;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
    Node n;
    n.op = Op::kTemporalConv;
    n.in = {x, w, b};
    n.n_in = 3;
    n.needs_grad = any_needs_grad(n);
    n.index0 = stride;
    n.value = Tensor({c, tout, nn});
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t to = 0; to < tout; ++to) {
        double* yrow = n.value.raw() + (ci * tout + to) * nn;
        for (std::size_t j = 0; j < nn; ++j) yrow[j] = tb[ci];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::ptrdiff_t ti =
              static_cast<std::ptrdiff_t>(to * stride + kk) - pad;
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(t)) continue;
          const double wv = tw.at(ci, kk);
          const double* xrow = tx.raw() + (ci * t + static_cast<std::size_t>(ti)) * nn;
          for (std::size_t j = 0; j < nn; ++j) yrow[j] += wv * xrow[j];
        }
      }
    }
    return push(std::move(n));
  }

  // Mean over the time and node axes: x [C,T,N] -> [C].
  VarId mean_pool_tn(VarId x) {
    const Tensor& tx = value(x);
    if (tx.rank() != 3) throw ShapeError("mean_pool_tn: x " + tx.dims_str());
    const std::size_t c = tx.dim(0), tn = tx.dim(1) * tx.dim(2);
    Node n = unary(Op::kMeanPoolTN, x);
    n.value = Tensor({c});
    for (std::size_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      const double* row = tx.raw() + ci * tn;
      for (std::size_t i = 0; i < tn; ++i) acc += row[i];
      n.value[ci] = acc / static_cast<double>(tn);
    }
    return push(std::move(n));
  }

  // Contiguous slice of a vector; the chunk view of a shared embedding.
  VarId chunk(VarId x, std::size_t offset, std::size_t len) {
    const Tensor& tx = value(x);
    if (tx.rank() != 1 || offset + len > tx.size()) {
      throw ShapeError("chunk: [" + std::to_string(offset) + "," + std::to_string(offset + len) +
                       ") of " + tx.dims_str());
    }
    Node n = unary(Op::kChunk, x);
    n.index0 = offset;
    n.value = Tensor({len});
    std::copy(tx.raw() + offset, tx.raw() + offset + len, n.value.raw());
    return push(std::move(n));
  }

  VarId softmax(VarId x) {
    const Tensor& tx = value(x);
    Node n = unary(Op::kSoftmax, x);
    n.value = poserec::softmax(tx);
    return push(std::move(n));
  }

  // Scalar cosine similarity; degenerate inputs throw at forward time.
  VarId cosine(VarId a, VarId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 1 || !ta.same_dims(tb)) {
      throw ShapeError("cosine: operands " + ta.dims_str() + " and " + tb.dims_str());
    }
    const double na = detail::norm(ta.data());
    const double nb = detail::norm(tb.data());
    if (na < kDegenerateNorm || nb < kDegenerateNorm) {
      throw NumericError("cosine: degenerate vector (norm below 1e-12)");
    }
    Node n = binary(Op::kCosine, a, b);
    n.scalar0 = na;
    n.scalar1 = nb;
    n.value = Tensor::scalar(detail::dot(ta.data(), tb.data()) / (na * nb));
    return push(std::move(n));
  }

  VarId dot(VarId a, VarId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 1 || !ta.same_dims(tb)) {
      throw ShapeError("dot: operands " + ta.dims_str() + " and " + tb.dims_str());
    }
    Node n = binary(Op::kDot, a, b);
    n.value = Tensor::scalar(detail::dot(ta.data(), tb.data()));
    return push(std::move(n));
  }

  // Scalars -> vector.
  VarId stack(const std::vector<VarId>& xs) {
    if (xs.empty()) throw ShapeError("stack: empty input");
    Node n;
    n.op = Op::kStack;
    n.multi = xs;
    n.value = Tensor({xs.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Tensor& tv = value(xs[i]);
      if (tv.size() != 1) throw ShapeError("stack: input " + std::to_string(i) + " not scalar");
      n.value[i] = tv[0];
      n.needs_grad = n.needs_grad || nodes_[xs[i]].needs_grad;
    }
    return push(std::move(n));
  }

  // Sum of scalars -> scalar.
  VarId sum(const std::vector<VarId>& xs) {
    if (xs.empty()) throw ShapeError("sum: empty input");
    Node n;
    n.op = Op::kSum;
    n.multi = xs;
    double acc = 0.0;
    for (VarId id : xs) {
      const Tensor& tv = value(id);
      if (tv.size() != 1) throw ShapeError("sum: non-scalar input");
      acc += tv[0];
      n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
    }
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
  }

  // Max/min over a vector; subgradient goes to the first extremal entry.
  VarId max_elem(VarId x) { return extremum(x, /*is_max=*/true); }
  VarId min_elem(VarId x) { return extremum(x, /*is_max=*/false); }

  // Scalar-valued weighted sum over every entry of x.
  VarId weighted_sum(VarId x, Tensor weights) {
    const Tensor& tx = value(x);
    if (!tx.same_dims(weights)) {
      throw ShapeError("weighted_sum: x " + tx.dims_str() + ", weights " + weights.dims_str());
    }
    Node n = unary(Op::kWeightedSum, x);
    n.aux = std::move(weights);
    n.value = Tensor::scalar(detail::dot(tx.data(), n.aux.data()));
    return push(std::move(n));
  }

  // Summed binary cross entropy on logits against fixed targets in [0,1].
  // Stabilized as max(s,0) - s*t + log1p(exp(-|s|)).
  VarId bce_with_logits(VarId scores, Tensor targets) {
    const Tensor& ts = value(scores);
    if (ts.rank() != 1 || !ts.same_dims(targets)) {
      throw ShapeError("bce_with_logits: scores " + ts.dims_str() + ", targets " +
                       targets.dims_str());
    }
    for (double t : targets.data()) {
      if (!(t >= 0.0 && t <= 1.0)) {
        throw DataError("bce_with_logits: target outside [0,1]");
      }
    }
    Node n = unary(Op::kBceSum, scores);
    n.aux = std::move(targets);
    double acc = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double s = ts[i];
      acc += std::max(s, 0.0) - s * n.aux[i] + std::log1p(std::exp(-std::abs(s)));
    }
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
  }

  // Weighted sum of factor rows: w [F], factors [F x dim] (input var),
  // mask bit j enables factor j. At least one factor must stay enabled.
  VarId factor_merge(VarId w, VarId factors, std::uint32_t mask) {
    const Tensor& tw = value(w);
    const Tensor& tf = value(factors);
    if (tw.rank() != 1 || tf.rank() != 2 || tf.dim(0) != tw.size()) {
      throw ShapeError("factor_merge: w " + tw.dims_str() + ", factors " + tf.dims_str());
    }
    if (tw.size() > 32) throw ShapeError("factor_merge: more than 32 factors");
    if ((mask & ((1u << tw.size()) - 1u)) == 0) {
      throw DataError("factor_merge: all factors masked out");
    }
    Node n = binary(Op::kFactorMerge, w, factors);
    n.index0 = mask;
    const std::size_t dim = tf.dim(1);
    n.value = Tensor({dim});
    for (std::size_t j = 0; j < tw.size(); ++j) {
      if (!(mask >> j & 1u)) continue;
      const double wv = tw[j];
      const double* row = tf.raw() + j * dim;
      for (std::size_t i = 0; i < dim; ++i) n.value[i] += wv * row[i];
    }
    return push(std::move(n));
  }

  // --- access ---

  const Tensor& value(VarId id) const {
    const Node& n = nodes_.at(id);
    return n.op == Op::kParam ? n.param->value : n.value;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(root)=1 and sweeps the tape once in reverse creation order,
  // accumulating into Parameter::grad at the leaves. root must be scalar.
  void backward(VarId root) {
    if (value(root).size() != 1) {
      throw ShapeError("backward: root is not scalar, dims " + value(root).dims_str());
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_at(root) = Tensor::scalar(1.0);
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || grads_[i].size() == 0) continue;
      if (n.op == Op::kParam) {
        Tensor& g = n.param->grad;
        const Tensor& local = grads_[i];
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += local[j];
        continue;
      }
      propagate(static_cast<VarId>(i));
    }
    grads_.clear();
  }

 private:
  enum class Op : std::uint8_t {
    kInput,
    kParam,
    kMatMul,
    kAdd,
    kSub,
    kScale,
    kRelu,
    kAffine,
    kSpatialGcn,
    kTemporalConv,
    kMeanPoolTN,
    kChunk,
    kSoftmax,
    kCosine,
    kDot,
    kStack,
    kSum,
    kMaxElem,
    kMinElem,
    kBceSum,
    kFactorMerge,
    kWeightedSum,
  };

  struct Node {
    Op op = Op::kInput;
    std::array<VarId, 3> in{};
    std::uint8_t n_in = 0;
    bool needs_grad = false;
    Tensor value;
    Tensor aux;                 // op-specific cache (AG product, BCE targets)
    double scalar0 = 0.0;       // scale factor / cached norm
    double scalar1 = 0.0;
    std::size_t index0 = 0;     // chunk offset / stride / argext / mask
    Parameter* param = nullptr;
    std::vector<VarId> multi;   // stack / sum fan-in
  };

  VarId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
  }

  Node unary(Op op, VarId a) {
    Node n;
    n.op = op;
    n.in = {a, 0, 0};
    n.n_in = 1;
    n.needs_grad = nodes_[a].needs_grad;
    return n;
  }

  Node binary(Op op, VarId a, VarId b) {
    Node n;
    n.op = op;
    n.in = {a, b, 0};
    n.n_in = 2;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return n;
  }

  bool any_needs_grad(const Node& n) const {
    for (std::uint8_t i = 0; i < n.n_in; ++i) {
      if (nodes_[n.in[i]].needs_grad) return true;
    }
    return false;
  }

  VarId extremum(VarId x, bool is_max) {
    const Tensor& tx = value(x);
    if (tx.rank() != 1 || tx.size() == 0) throw ShapeError("extremum: x " + tx.dims_str());
    std::size_t arg = 0;
    for (std::size_t i = 1; i < tx.size(); ++i) {
      if (is_max ? tx[i] > tx[arg] : tx[i] < tx[arg]) arg = i;
    }
    Node n = unary(is_max ? Op::kMaxElem : Op::kMinElem, x);
    n.index0 = arg;
    n.value = Tensor::scalar(tx[arg]);
    return push(std::move(n));
  }

  Tensor& grad_at(VarId id) {
    Tensor& g = grads_[id];
    if (g.size() == 0) g = Tensor(value(id).dims());
    return g;
  }

  void add_grad(VarId id, std::size_t flat_index, double v) {
    if (!nodes_[id].needs_grad) return;
    grad_at(id)[flat_index] += v;
  }

  void propagate(VarId id) {
    Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kMatMul: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
        if (nodes_[n.in[0]].needs_grad) {
          detail::mm_abt_accum(g.raw(), b.raw(), grad_at(n.in[0]).raw(), m, nn, k);
        }
        if (nodes_[n.in[1]].needs_grad) {
          detail::mm_atb_accum(a.raw(), g.raw(), grad_at(n.in[1]).raw(), k, m, nn);
        }
        break;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          if (!nodes_[n.in[s]].needs_grad) continue;
          Tensor& dst = grad_at(n.in[s]);
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        if (nodes_[n.in[0]].needs_grad) {
          Tensor& dst = grad_at(n.in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
        if (nodes_[n.in[1]].needs_grad) {
          Tensor& dst = grad_at(n.in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& dst = grad_at(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += n.scalar0 * g[i];
        break;
      }
      case Op::kRelu: {
        const Tensor& x = value(n.in[0]);
        Tensor& dst = grad_at(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > 0.0) dst[i] += g[i];
        }
        break;
      }
      case Op::kAffine: {
        const Tensor& w = value(n.in[0]);
        const Tensor& x = value(n.in[1]);
        const std::size_t m = w.dim(0), nn = w.dim(1);
        if (nodes_[n.in[0]].needs_grad) {
          Tensor& dw = grad_at(n.in[0]);
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            double* row = dw.raw() + i * nn;
            for (std::size_t j = 0; j < nn; ++j) row[j] += gi * x[j];
          }
        }
        if (nodes_[n.in[1]].needs_grad) {
          Tensor& dx = grad_at(n.in[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* row = w.raw() + i * nn;
            for (std::size_t j = 0; j < nn; ++j) dx[j] += gi * row[j];
          }
        }
        if (nodes_[n.in[2]].needs_grad) {
          Tensor& db = grad_at(n.in[2]);
          for (std::size_t i = 0; i < m; ++i) db[i] += g[i];
        }
        break;
      }
      case Op::kSpatialGcn: {
        const Tensor& x = value(n.in[0]);
        const Tensor& adj = value(n.in[1]);
        const Tensor& w = value(n.in[2]);
        const std::size_t c = x.dim(0), t = x.dim(1), nn = x.dim(2), cout = w.dim(1);
        // dW += AG (C x TN) * g^T (TN x Cout)
        if (nodes_[n.in[2]].needs_grad) {
          detail::mm_abt_accum(n.aux.raw(), g.raw(), grad_at(n.in[2]).raw(), c, t * nn, cout);
        }
        if (nodes_[n.in[0]].needs_grad) {
          // dAG (C x TN) = W (C x Cout) * g (Cout x TN); dX = dAG_flat(CT x N) * A
          Tensor dag({c, t, nn});
          detail::mm_accum(w.raw(), g.raw(), dag.raw(), c, cout, t * nn);
          detail::mm_accum(dag.raw(), adj.raw(), grad_at(n.in[0]).raw(), c * t, nn, nn);
        }
        break;
      }
      case Op::kTemporalConv: {
        const Tensor& x = value(n.in[0]);
        const Tensor& w = value(n.in[1]);
        const std::size_t c = x.dim(0), t = x.dim(1), nn = x.dim(2), k = w.dim(1);
        const std::size_t stride = n.index0, tout = n.value.dim(1);
        const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
        const bool want_x = nodes_[n.in[0]].needs_grad;
        const bool want_w = nodes_[n.in[1]].needs_grad;
        const bool want_b = nodes_[n.in[2]].needs_grad;
        Tensor* dx = want_x ? &grad_at(n.in[0]) : nullptr;
        Tensor* dw = want_w ? &grad_at(n.in[1]) : nullptr;
        Tensor* db = want_b ? &grad_at(n.in[2]) : nullptr;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t to = 0; to < tout; ++to) {
            const double* grow = g.raw() + (ci * tout + to) * nn;
            if (db) {
              double acc = 0.0;
              for (std::size_t j = 0; j < nn; ++j) acc += grow[j];
              (*db)[ci] += acc;
            }
            for (std::size_t kk = 0; kk < k; ++kk) {
              const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride + kk) - pad;
              if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(t)) continue;
              const std::size_t xoff = (ci * t + static_cast<std::size_t>(ti)) * nn;
              if (dw) {
                const double* xrow = x.raw() + xoff;
                double acc = 0.0;
                for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * xrow[j];
                dw->at(ci, kk) += acc;
              }
              if (dx) {
                const double wv = w.at(ci, kk);
                double* xrow = dx->raw() + xoff;
                for (std::size_t j = 0; j < nn; ++j) xrow[j] += wv * grow[j];
              }
            }
          }
        }
        break;
      }
      case Op::kMeanPoolTN: {
        const Tensor& x = value(n.in[0]);
        const std::size_t c = x.dim(0), tn = x.dim(1) * x.dim(2);
        Tensor& dst = grad_at(n.in[0]);
        const double inv = 1.0 / static_cast<double>(tn);
        for (std::size_t ci = 0; ci < c; ++ci) {
          const double gv = g[ci] * inv;
          double* row = dst.raw() + ci * tn;
          for (std::size_t i = 0; i < tn; ++i) row[i] += gv;
        }
        break;
      }
      case Op::kChunk: {
        Tensor& dst = grad_at(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dst[n.index0 + i] += g[i];
        break;
      }
      case Op::kSoftmax: {
        const Tensor& y = n.value;
        Tensor& dst = grad_at(n.in[0]);
        double inner = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) inner += y[i] * g[i];
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += y[i] * (g[i] - inner);
        break;
      }
      case Op::kCosine: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        const double na = n.scalar0, nb = n.scalar1, c = n.value[0], gv = g[0];
        if (nodes_[n.in[0]].needs_grad) {
          Tensor& da = grad_at(n.in[0]);
          const double s = 1.0 / (na * nb), q = c / (na * na);
          for (std::size_t i = 0; i < a.size(); ++i) da[i] += gv * (b[i] * s - q * a[i]);
        }
        if (nodes_[n.in[1]].needs_grad) {
          Tensor& db = grad_at(n.in[1]);
          const double s = 1.0 / (na * nb), q = c / (nb * nb);
          for (std::size_t i = 0; i < b.size(); ++i) db[i] += gv * (a[i] * s - q * b[i]);
        }
        break;
      }
      case Op::kDot: {
        const Tensor& a = value(n.in[0]);
        const Tensor& b = value(n.in[1]);
        const double gv = g[0];
        if (nodes_[n.in[0]].needs_grad) {
          Tensor& da = grad_at(n.in[0]);
          for (std::size_t i = 0; i < a.size(); ++i) da[i] += gv * b[i];
        }
        if (nodes_[n.in[1]].needs_grad) {
          Tensor& db = grad_at(n.in[1]);
          for (std::size_t i = 0; i < b.size(); ++i) db[i] += gv * a[i];
        }
        break;
      }
      case Op::kStack: {
        for (std::size_t i = 0; i < n.multi.size(); ++i) add_grad(n.multi[i], 0, g[i]);
        break;
      }
      case Op::kSum: {
        for (VarId src : n.multi) add_grad(src, 0, g[0]);
        break;
      }
      case Op::kMaxElem:
      case Op::kMinElem: {
        add_grad(n.in[0], n.index0, g[0]);
        break;
      }
      case Op::kWeightedSum: {
        Tensor& dst = grad_at(n.in[0]);
        const double gv = g[0];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv * n.aux[i];
        break;
      }
      case Op::kBceSum: {
        const Tensor& s = value(n.in[0]);
        Tensor& dst = grad_at(n.in[0]);
        const double gv = g[0];
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double sig = 1.0 / (1.0 + std::exp(-s[i]));
          dst[i] += gv * (sig - n.aux[i]);
        }
        break;
      }
      case Op::kFactorMerge: {
        if (!nodes_[n.in[0]].needs_grad) break;
        const Tensor& w = value(n.in[0]);
        const Tensor& f = value(n.in[1]);
        const std::size_t dim = f.dim(1);
        Tensor& dw = grad_at(n.in[0]);
        for (std::size_t j = 0; j < w.size(); ++j) {
          if (!(n.index0 >> j & 1u)) continue;
          dw[j] += detail::dot({f.raw() + j * dim, dim}, g.data());
        }
        break;
      }
    }
  }

  std::deque<Node> nodes_;  // deque: references from value() stay valid as ops append
  std::vector<Tensor> grads_;
  std::unordered_map<Parameter*, VarId> param_nodes_;
};

}  // namespace poserec
