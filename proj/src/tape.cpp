#include "gnmt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gnmt/errors.hpp"

namespace gnmt {

namespace {
constexpr double kLogClamp = 1e-12;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Param: return "param";
    case Op::Matmul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::SliceCols: return "slice_cols";
    case Op::Embed: return "embedding-lookup";
    case Op::Transpose: return "transpose";
  }
  return "?";
}

Val Tape::push(Op op, Tensor value, std::vector<TapeNode*> inputs, std::vector<int64_t> aux) {
  nodes_.push_back(TapeNode{op, std::move(value), Tensor(), std::move(inputs), std::move(aux), 1.0, {}});
  return Val{&nodes_.back()};
}

Tensor& Tape::ensure_grad(TapeNode& n) {
  if (n.grad.numel() != n.value.numel() || n.grad.shape != n.value.shape)
    n.grad = Tensor::zeros(n.value.rows(), n.value.cols());
  return n.grad;
}

Val Tape::leaf(Tensor t) { return push(Op::Leaf, std::move(t), {}); }

Val Tape::param(ParameterStore& store, const std::string& name) {
  if (store_ && store_ != &store)
    throw std::logic_error("tape: parameters from two stores on one tape");
  store_ = &store;
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Val{it->second};
  Val v = push(Op::Param, store.value(name), {});
  v.node->param_name = name;
  param_nodes_.emplace(name, v.node);
  return v;
}

Val Tape::matmul(Val a, Val b) {
  const Tensor& A = a.v();
  const Tensor& B = b.v();
  check_shapes(A.cols() == B.rows(), "matmul", A, B);
  Tensor C = Tensor::zeros(A.rows(), B.cols());
  const int64_t r = A.rows(), k = A.cols(), c = B.cols();
  for (int64_t i = 0; i < r; ++i) {
    double* crow = &C.data[static_cast<size_t>(i * c)];
    const double* arow = &A.data[static_cast<size_t>(i * k)];
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &B.data[static_cast<size_t>(p * c)];
      for (int64_t j = 0; j < c; ++j) crow[j] += av * brow[j];
    }
  }
  return push(Op::Matmul, std::move(C), {a.node, b.node});
}

Val Tape::add(Val a, Val b) {
  const Tensor& A = a.v();
  const Tensor& B = b.v();
  const bool same = A.same_shape(B);
  const bool bcast_row = B.rows() == 1 && B.cols() == A.cols();
  const bool bcast_scalar = B.numel() == 1;
  check_shapes(same || bcast_row || bcast_scalar, "add", A, B);
  Tensor C = A;
  if (same) {
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
  } else if (bcast_scalar) {
    for (double& v : C.data) v += B.data[0];
  } else {
    for (int64_t i = 0; i < A.rows(); ++i)
      for (int64_t j = 0; j < A.cols(); ++j) C.at(i, j) += B.data[static_cast<size_t>(j)];
  }
  return push(Op::Add, std::move(C), {a.node, b.node});
}

Val Tape::mul(Val a, Val b) {
  const Tensor& A = a.v();
  const Tensor& B = b.v();
  const bool same = A.same_shape(B);
  const bool bcast_row = B.rows() == 1 && B.cols() == A.cols();
  const bool bcast_scalar = B.numel() == 1;
  check_shapes(same || bcast_row || bcast_scalar, "elementwise-multiply", A, B);
  Tensor C = A;
  if (same) {
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
  } else if (bcast_scalar) {
    for (double& v : C.data) v *= B.data[0];
  } else {
    for (int64_t i = 0; i < A.rows(); ++i)
      for (int64_t j = 0; j < A.cols(); ++j) C.at(i, j) *= B.data[static_cast<size_t>(j)];
  }
  return push(Op::Mul, std::move(C), {a.node, b.node});
}

Val Tape::scale(Val a, double s) {
  Tensor C = a.v();
  for (double& v : C.data) v *= s;
  Val out = push(Op::Scale, std::move(C), {a.node});
  out.node->scale = s;
  return out;
}

Val Tape::concat(std::span<const Val> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = parts[0].v();
  int64_t rows = first.rows(), cols = first.cols();
  for (size_t i = 1; i < parts.size(); ++i) {
    const Tensor& t = parts[i].v();
    if (axis == 1) {
      check_shapes(t.rows() == rows, "concat", first, t);
      cols += t.cols();
    } else {
      check_shapes(t.cols() == cols, "concat", first, t);
      rows += t.rows();
    }
  }
  Tensor C = Tensor::zeros(rows, cols);
  if (axis == 1) {
    int64_t off = 0;
    for (const Val& p : parts) {
      const Tensor& t = p.v();
      for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < t.cols(); ++j) C.at(i, off + j) = t.at(i, j);
      off += t.cols();
    }
  } else {
    int64_t off = 0;
    for (const Val& p : parts) {
      const Tensor& t = p.v();
      std::copy(t.data.begin(), t.data.end(), C.data.begin() + off * cols);
      off += t.rows();
    }
  }
  std::vector<TapeNode*> ins;
  ins.reserve(parts.size());
  for (const Val& p : parts) ins.push_back(p.node);
  return push(Op::Concat, std::move(C), std::move(ins), {axis});
}

Val Tape::tanh(Val a) {
  Tensor C = a.v();
  for (double& v : C.data) v = std::tanh(v);
  return push(Op::Tanh, std::move(C), {a.node});
}

Val Tape::sigmoid(Val a) {
  Tensor C = a.v();
  for (double& v : C.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(Op::Sigmoid, std::move(C), {a.node});
}

Val Tape::exp(Val a) {
  Tensor C = a.v();
  for (double& v : C.data) v = std::exp(v);
  return push(Op::Exp, std::move(C), {a.node});
}

Val Tape::log(Val a) {
  Tensor C = a.v();
  for (double& v : C.data) v = std::log(std::max(v, kLogClamp));
  return push(Op::Log, std::move(C), {a.node});
}

Val Tape::softmax(Val a) {
  Tensor C = a.v();
  for (int64_t i = 0; i < C.rows(); ++i) {
    double mx = C.at(i, 0);
    for (int64_t j = 1; j < C.cols(); ++j) mx = std::max(mx, C.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < C.cols(); ++j) {
      C.at(i, j) = std::exp(C.at(i, j) - mx);
      sum += C.at(i, j);
    }
    for (int64_t j = 0; j < C.cols(); ++j) C.at(i, j) /= sum;
  }
  return push(Op::Softmax, std::move(C), {a.node});
}

Val Tape::log_softmax(Val a) {
  Tensor C = a.v();
  for (int64_t i = 0; i < C.rows(); ++i) {
    double mx = C.at(i, 0);
    for (int64_t j = 1; j < C.cols(); ++j) mx = std::max(mx, C.at(i, j));
    double sum = 0.0;
    for (int64_t j = 0; j < C.cols(); ++j) sum += std::exp(C.at(i, j) - mx);
    const double lse = mx + std::log(sum);
    for (int64_t j = 0; j < C.cols(); ++j) C.at(i, j) -= lse;
  }
  return push(Op::LogSoftmax, std::move(C), {a.node});
}

Val Tape::mean(Val a, int axis) {
  Val s = sum(a, axis);
  const double n = axis == 0 ? static_cast<double>(a.v().rows()) : static_cast<double>(a.v().cols());
  return scale(s, 1.0 / n);
}

Val Tape::sum(Val a, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  const Tensor& A = a.v();
  Tensor C = axis == 0 ? Tensor::zeros(1, A.cols()) : Tensor::zeros(A.rows(), 1);
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = 0; j < A.cols(); ++j) {
      if (axis == 0)
        C.at(0, j) += A.at(i, j);
      else
        C.at(i, 0) += A.at(i, j);
    }
  return push(Op::Sum, std::move(C), {a.node}, {axis});
}

Val Tape::slice_cols(Val a, int64_t lo, int64_t hi) {
  const Tensor& A = a.v();
  if (lo < 0 || hi > A.cols() || lo >= hi)
    throw ShapeError("slice_cols: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") out of " + A.shape_str());
  Tensor C = Tensor::zeros(A.rows(), hi - lo);
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = lo; j < hi; ++j) C.at(i, j - lo) = A.at(i, j);
  return push(Op::SliceCols, std::move(C), {a.node}, {lo, hi});
}

Val Tape::embed(Val table, std::span<const int> ids) {
  const Tensor& T = table.v();
  Tensor C = Tensor::zeros(static_cast<int64_t>(ids.size()), T.cols());
  std::vector<int64_t> aux;
  aux.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= T.rows())
      throw ShapeError("embedding-lookup: id " + std::to_string(id) + " out of table " +
                       T.shape_str());
    for (int64_t j = 0; j < T.cols(); ++j) C.at(static_cast<int64_t>(i), j) = T.at(id, j);
    aux.push_back(id);
  }
  return push(Op::Embed, std::move(C), {table.node}, std::move(aux));
}

Val Tape::transpose(Val a) {
  const Tensor& A = a.v();
  Tensor C = Tensor::zeros(A.cols(), A.rows());
  for (int64_t i = 0; i < A.rows(); ++i)
    for (int64_t j = 0; j < A.cols(); ++j) C.at(j, i) = A.at(i, j);
  return push(Op::Transpose, std::move(C), {a.node});
}

void Tape::backward(Val root) {
  if (backward_done_) throw std::logic_error("tape: backward already ran on this tape");
  if (!root.node || root.v().numel() != 1)
    throw ShapeError("backward: root must be scalar, got " +
                     (root.node ? root.v().shape_str() : std::string("null")));
  backward_done_ = true;
  if (store_) store_->zero_grads();
  ensure_grad(*root.node).data[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TapeNode& n = *it;
    if (n.grad.numel() == 0) continue;  // unreachable from root
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Param:
        if (store_) store_->grad(n.param_name).add_scaled(g, 1.0);
        break;
      case Op::Matmul: {
        const Tensor& A = n.inputs[0]->value;
        const Tensor& B = n.inputs[1]->value;
        Tensor& dA = ensure_grad(*n.inputs[0]);
        Tensor& dB = ensure_grad(*n.inputs[1]);
        const int64_t r = A.rows(), k = A.cols(), c = B.cols();
        for (int64_t i = 0; i < r; ++i) {
          const double* grow = &g.data[static_cast<size_t>(i * c)];
          double* darow = &dA.data[static_cast<size_t>(i * k)];
          const double* arow = &A.data[static_cast<size_t>(i * k)];
          for (int64_t p = 0; p < k; ++p) {
            const double* brow = &B.data[static_cast<size_t>(p * c)];
            double acc = 0.0;
            for (int64_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
            darow[p] += acc;
            const double av = arow[p];
            if (av != 0.0) {
              double* dbrow = &dB.data[static_cast<size_t>(p * c)];
              for (int64_t j = 0; j < c; ++j) dbrow[j] += av * grow[j];
            }
          }
        }
        break;
      }
      case Op::Add: {
        const Tensor& B = n.inputs[1]->value;
        Tensor& dA = ensure_grad(*n.inputs[0]);
        Tensor& dB = ensure_grad(*n.inputs[1]);
        for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i];
        if (B.same_shape(n.value)) {
          for (size_t i = 0; i < g.data.size(); ++i) dB.data[i] += g.data[i];
        } else if (B.numel() == 1) {
          for (double v : g.data) dB.data[0] += v;
        } else {
          for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) dB.data[static_cast<size_t>(j)] += g.at(i, j);
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = n.inputs[0]->value;
        const Tensor& B = n.inputs[1]->value;
        Tensor& dA = ensure_grad(*n.inputs[0]);
        Tensor& dB = ensure_grad(*n.inputs[1]);
        if (B.same_shape(A)) {
          for (size_t i = 0; i < g.data.size(); ++i) {
            dA.data[i] += g.data[i] * B.data[i];
            dB.data[i] += g.data[i] * A.data[i];
          }
        } else if (B.numel() == 1) {
          for (size_t i = 0; i < g.data.size(); ++i) {
            dA.data[i] += g.data[i] * B.data[0];
            dB.data[0] += g.data[i] * A.data[i];
          }
        } else {
          for (int64_t i = 0; i < g.rows(); ++i)
            for (int64_t j = 0; j < g.cols(); ++j) {
              dA.at(i, j) += g.at(i, j) * B.data[static_cast<size_t>(j)];
              dB.data[static_cast<size_t>(j)] += g.at(i, j) * A.at(i, j);
            }
        }
        break;
      }
      case Op::Scale: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i] * n.scale;
        break;
      }
      case Op::Concat: {
        const int axis = static_cast<int>(n.aux[0]);
        int64_t off = 0;
        for (TapeNode* in : n.inputs) {
          Tensor& dI = ensure_grad(*in);
          if (axis == 1) {
            for (int64_t i = 0; i < dI.rows(); ++i)
              for (int64_t j = 0; j < dI.cols(); ++j) dI.at(i, j) += g.at(i, off + j);
            off += dI.cols();
          } else {
            for (int64_t i = 0; i < dI.rows(); ++i)
              for (int64_t j = 0; j < dI.cols(); ++j) dI.at(i, j) += g.at(off + i, j);
            off += dI.rows();
          }
        }
        break;
      }
      case Op::Tanh: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < g.data.size(); ++i)
          dA.data[i] += g.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < g.data.size(); ++i)
          dA.data[i] += g.data[i] * n.value.data[i] * (1.0 - n.value.data[i]);
        break;
      }
      case Op::Exp: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < g.data.size(); ++i) dA.data[i] += g.data[i] * n.value.data[i];
        break;
      }
      case Op::Log: {
        const Tensor& A = n.inputs[0]->value;
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < g.data.size(); ++i)
          dA.data[i] += g.data[i] / std::max(A.data[i], kLogClamp);
        break;
      }
      case Op::Softmax: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (int64_t i = 0; i < g.rows(); ++i) {
          double dot = 0.0;
          for (int64_t j = 0; j < g.cols(); ++j) dot += g.at(i, j) * n.value.at(i, j);
          for (int64_t j = 0; j < g.cols(); ++j)
            dA.at(i, j) += n.value.at(i, j) * (g.at(i, j) - dot);
        }
        break;
      }
      case Op::LogSoftmax: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (int64_t i = 0; i < g.rows(); ++i) {
          double gsum = 0.0;
          for (int64_t j = 0; j < g.cols(); ++j) gsum += g.at(i, j);
          for (int64_t j = 0; j < g.cols(); ++j)
            dA.at(i, j) += g.at(i, j) - std::exp(n.value.at(i, j)) * gsum;
        }
        break;
      }
      case Op::Mean:
        break;  // lowered to Sum + Scale at construction
      case Op::Sum: {
        const int axis = static_cast<int>(n.aux[0]);
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (int64_t i = 0; i < dA.rows(); ++i)
          for (int64_t j = 0; j < dA.cols(); ++j)
            dA.at(i, j) += axis == 0 ? g.at(0, j) : g.at(i, 0);
        break;
      }
      case Op::SliceCols: {
        const int64_t lo = n.aux[0];
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (int64_t i = 0; i < g.rows(); ++i)
          for (int64_t j = 0; j < g.cols(); ++j) dA.at(i, lo + j) += g.at(i, j);
        break;
      }
      case Op::Embed: {
        Tensor& dT = ensure_grad(*n.inputs[0]);
        for (size_t i = 0; i < n.aux.size(); ++i) {
          const int64_t id = n.aux[i];
          for (int64_t j = 0; j < g.cols(); ++j)
            dT.at(id, j) += g.at(static_cast<int64_t>(i), j);
        }
        break;
      }
      case Op::Transpose: {
        Tensor& dA = ensure_grad(*n.inputs[0]);
        for (int64_t i = 0; i < g.rows(); ++i)
          for (int64_t j = 0; j < g.cols(); ++j) dA.at(j, i) += g.at(i, j);
        break;
      }
    }
  }
}

Tensor Tape::grad_of(Val v) const {
  if (!v.node) throw std::logic_error("grad_of: null handle");
  if (v.node->grad.numel() == 0) return Tensor::zeros(v.v().rows(), v.v().cols());
  return v.node->grad;
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

LstmOut lstm_step(Tape& t, Val weights, Val bias, int64_t hidden_dim, Val prev_hidden,
                  Val prev_cell, std::span<const Val> inputs) {
  std::vector<Val> parts;
  parts.reserve(inputs.size() + 1);
  parts.push_back(prev_hidden);
  for (const Val& in : inputs) parts.push_back(in);
  Val x = t.concat(parts, 1);
  if (x.v().cols() != weights.v().rows())
    throw ShapeError("lstm_step: input width " + x.v().shape_str() + " vs weights " +
                     weights.v().shape_str());
  Val gates = t.add(t.matmul(x, weights), bias);
  const int64_t h = hidden_dim;
  Val gi = t.sigmoid(t.slice_cols(gates, 0, h));
  Val gf = t.sigmoid(t.slice_cols(gates, h, 2 * h));
  Val gc = t.tanh(t.slice_cols(gates, 2 * h, 3 * h));
  Val go = t.sigmoid(t.slice_cols(gates, 3 * h, 4 * h));
  Val cell = t.add(t.mul(gf, prev_cell), t.mul(gi, gc));
  Val hidden = t.mul(go, t.tanh(cell));
  return {hidden, cell};
}

Val reparameterize(Tape& t, Val mu, Val logvar, const Tensor& eps) {
  check_shapes(mu.v().same_shape(logvar.v()), "reparameterize", mu.v(), logvar.v());
  check_shapes(mu.v().same_shape(eps), "reparameterize", mu.v(), eps);
  Val sigma = t.exp(t.scale(logvar, 0.5));
  return t.add(mu, t.mul(sigma, t.leaf(eps)));
}

}  // namespace gnmt
