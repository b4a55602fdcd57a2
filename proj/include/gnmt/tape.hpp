#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gnmt/param_store.hpp"
#include "gnmt/tensor.hpp"

namespace gnmt {

enum class Op : uint8_t {
  Leaf,
  Param,
  Matmul,
  Add,       // broadcast of the second operand over the leading axis (1xC or 1x1)
  Mul,       // elementwise; second operand may be 1xC or 1x1
  Scale,     // multiply by a compile-time constant
  Concat,    // along aux axis (0 or 1)
  Tanh,
  Sigmoid,
  Exp,
  Log,       // input clamped at 1e-12
  Softmax,   // last axis, max-subtracted
  LogSoftmax,
  Mean,      // aux axis
  Sum,
  SliceCols,  // columns [aux0, aux1)
  Embed,      // rows of input 0 selected by aux indices
  Transpose,
};

const char* op_name(Op op);

struct TapeNode {
  Op op;
  Tensor value;
  Tensor grad;  // same shape as value; empty until backward touches it (semantically zero)
  std::vector<TapeNode*> inputs;
  std::vector<int64_t> aux;  // axis / slice bounds / embedding ids
  double scale = 1.0;        // Scale payload
  std::string param_name;    // Param nodes only
};

// Lightweight handle into a Tape.
struct Val {
  TapeNode* node = nullptr;
  const Tensor& v() const { return node->value; }
  explicit operator bool() const { return node != nullptr; }
};

// Reverse-mode differentiation record. One tape per training step; nodes are
// appended in topological order, so backward is a single reverse sweep that
// visits each node exactly once. backward() may be called once per tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Val leaf(Tensor t);
  Val constant(double v) { return leaf(Tensor::scalar(v)); }
  // Leaf bound to a named parameter; value is snapshotted at call time and
  // the node is reused if the same name is requested again on this tape.
  Val param(ParameterStore& store, const std::string& name);

  Val matmul(Val a, Val b);
  Val add(Val a, Val b);
  Val sub(Val a, Val b) { return add(a, scale(b, -1.0)); }
  Val mul(Val a, Val b);
  Val scale(Val a, double s);
  Val concat(std::span<const Val> parts, int axis);
  Val concat(std::initializer_list<Val> parts, int axis) {
    return concat(std::span<const Val>(parts.begin(), parts.size()), axis);
  }
  Val tanh(Val a);
  Val sigmoid(Val a);
  Val exp(Val a);
  Val log(Val a);
  Val softmax(Val a);
  Val log_softmax(Val a);
  Val mean(Val a, int axis);
  Val sum(Val a, int axis);
  Val sum_all(Val a) { return sum(sum(a, 0), 1); }
  Val slice_cols(Val a, int64_t lo, int64_t hi);
  Val embed(Val table, std::span<const int> ids);
  Val transpose(Val a);

  // Propagates d(root)/d(node) through the tape. root must be 1x1. Every
  // parameter gradient in the bound ParameterStore is zeroed first, then
  // reachable parameters accumulate their gradients; a second call on the
  // same tape throws std::logic_error.
  void backward(Val root);

  // Gradient of any node after backward (zeros if the node was unreachable).
  Tensor grad_of(Val v) const;

  size_t size() const { return nodes_.size(); }
  void reset();

 private:
  Val push(Op op, Tensor value, std::vector<TapeNode*> inputs, std::vector<int64_t> aux = {});
  static Tensor& ensure_grad(TapeNode& n);

  std::deque<TapeNode> nodes_;
  std::unordered_map<std::string, TapeNode*> param_nodes_;
  ParameterStore* store_ = nullptr;
  bool backward_done_ = false;
};

// Standard LSTM step. Extra inputs are concatenated after prev_hidden, gate
// layout is (input, forget, candidate, output); weights shape
// (hidden + sum(inputs)) x 4*hidden, bias 1 x 4*hidden.
struct LstmOut {
  Val hidden;
  Val cell;
};
LstmOut lstm_step(Tape& t, Val weights, Val bias, int64_t hidden_dim, Val prev_hidden,
                  Val prev_cell, std::span<const Val> inputs);

// z = mu + exp(0.5 * logvar) * eps. Gradients flow to mu and logvar only.
Val reparameterize(Tape& t, Val mu, Val logvar, const Tensor& eps);

}  // namespace gnmt
