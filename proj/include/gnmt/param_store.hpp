#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gnmt/tensor.hpp"

namespace gnmt {

// Optimizer/RNG bookkeeping carried inside a checkpoint so training can
// resume and reproduce the exact update sequence of an uninterrupted run.
struct TrainStateBlob {
  uint64_t iteration = 0;
  double best_validation = 0.0;
  bool has_best = false;
  std::array<uint64_t, 4> rng_state{};
};

// Holds every named trainable tensor plus per-parameter auxiliary state
// (gradients, optimizer moments). Names are unique; iteration order is
// lexicographic, which fixes serialization and update order.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return values_.count(name) > 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;

  // Gradient buffer for a parameter, zero-initialized on first access.
  Tensor& grad(const std::string& name);
  void zero_grads();

  // Auxiliary per-parameter tensor (e.g. "adam_m"), zero-initialized.
  Tensor& aux(const std::string& kind, const std::string& name);

  std::vector<std::string> names() const;
  int64_t total_params() const;
  double grad_global_norm() const;
  void scale_grads(double s);
  bool grads_finite() const;

  // Checkpoint I/O. Layout (all integers little-endian, doubles raw IEEE-754
  // little-endian; documented in docs/formats.md):
  //   magic "GNMTCKP1" | u32 config_len | config JSON bytes
  //   u64 n_params    | per tensor: u16 name_len, name, u64 rows, u64 cols, f64 data[]
  //   u8 has_state    | if 1: u64 iteration, u8 has_best, f64 best, u64 rng[4],
  //                     u64 n_aux | aux tensors encoded as above with "kind/name" names
  void save(std::ostream& os, const std::string& config_json,
            const TrainStateBlob* state = nullptr) const;
  // Returns the embedded config JSON; fills `state` if the checkpoint has one.
  std::string load(std::istream& is, std::optional<TrainStateBlob>* state = nullptr);

  void save_file(const std::string& path, const std::string& config_json,
                 const TrainStateBlob* state = nullptr) const;
  std::string load_file(const std::string& path, std::optional<TrainStateBlob>* state = nullptr);

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> grads_;
  std::map<std::string, Tensor> aux_;  // key: kind + "/" + name
};

}  // namespace gnmt
