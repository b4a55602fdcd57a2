#include "gnmt/param_store.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gnmt/errors.hpp"

namespace gnmt {

namespace {

constexpr char kMagic[8] = {'G', 'N', 'M', 'T', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated stream");
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<uint64_t>(os, static_cast<uint64_t>(t.rows()));
  write_pod<uint64_t>(os, static_cast<uint64_t>(t.cols()));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_tensor(std::istream& is) {
  const auto name_len = read_pod<uint16_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const auto rows = static_cast<int64_t>(read_pod<uint64_t>(is));
  const auto cols = static_cast<int64_t>(read_pod<uint64_t>(is));
  Tensor t = Tensor::zeros(rows, cols);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!is) throw DataError("checkpoint: truncated tensor " + name);
  return {std::move(name), std::move(t)};
}

}  // namespace

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
  auto [it, inserted] = values_.emplace(name, std::move(init));
  if (!inserted) throw ConfigError("parameter already exists: " + name);
  return it->second;
}

Tensor& ParameterStore::value(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::value(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParameterStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    const Tensor& v = value(name);
    it = grads_.emplace(name, Tensor::zeros(v.rows(), v.cols())).first;
  }
  return it->second;
}

void ParameterStore::zero_grads() {
  for (const auto& [name, v] : values_) grad(name).fill(0.0);
}

Tensor& ParameterStore::aux(const std::string& kind, const std::string& name) {
  const std::string key = kind + "/" + name;
  auto it = aux_.find(key);
  if (it == aux_.end()) {
    const Tensor& v = value(name);
    it = aux_.emplace(key, Tensor::zeros(v.rows(), v.cols())).first;
  }
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [name, v] : values_) out.push_back(name);
  return out;
}

int64_t ParameterStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, v] : values_) n += v.numel();
  return n;
}

double ParameterStore::grad_global_norm() const {
  double sq = 0.0;
  for (const auto& [key, g] : grads_)
    for (double v : g.data) sq += v * v;
  return std::sqrt(sq);
}

void ParameterStore::scale_grads(double s) {
  for (auto& [key, g] : grads_)
    for (double& v : g.data) v *= s;
}

bool ParameterStore::grads_finite() const {
  for (const auto& [key, g] : grads_)
    if (!g.all_finite()) return false;
  return true;
}

void ParameterStore::save(std::ostream& os, const std::string& config_json,
                          const TrainStateBlob* state) const {
  os.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(os, static_cast<uint32_t>(config_json.size()));
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  write_pod<uint64_t>(os, values_.size());
  for (const auto& [name, t] : values_) write_tensor(os, name, t);
  write_pod<uint8_t>(os, state ? 1 : 0);
  if (state) {
    write_pod<uint64_t>(os, state->iteration);
    write_pod<uint8_t>(os, state->has_best ? 1 : 0);
    write_pod<double>(os, state->best_validation);
    for (uint64_t w : state->rng_state) write_pod<uint64_t>(os, w);
    write_pod<uint64_t>(os, aux_.size());
    for (const auto& [key, t] : aux_) write_tensor(os, key, t);
  }
}

std::string ParameterStore::load(std::istream& is, std::optional<TrainStateBlob>* state) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic (not a checkpoint file?)");
  const auto config_len = read_pod<uint32_t>(is);
  std::string config_json(config_len, '\0');
  is.read(config_json.data(), config_len);
  values_.clear();
  grads_.clear();
  aux_.clear();
  const auto n = read_pod<uint64_t>(is);
  for (uint64_t i = 0; i < n; ++i) {
    auto [name, t] = read_tensor(is);
    values_.emplace(std::move(name), std::move(t));
  }
  const auto has_state = read_pod<uint8_t>(is);
  if (state) state->reset();
  if (has_state) {
    TrainStateBlob ts;
    ts.iteration = read_pod<uint64_t>(is);
    ts.has_best = read_pod<uint8_t>(is) != 0;
    ts.best_validation = read_pod<double>(is);
    for (auto& w : ts.rng_state) w = read_pod<uint64_t>(is);
    const auto n_aux = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < n_aux; ++i) {
      auto [key, t] = read_tensor(is);
      aux_.emplace(std::move(key), std::move(t));
    }
    if (state) *state = ts;
  }
  return config_json;
}

void ParameterStore::save_file(const std::string& path, const std::string& config_json,
                               const TrainStateBlob* state) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  save(os, config_json, state);
}

std::string ParameterStore::load_file(const std::string& path,
                                      std::optional<TrainStateBlob>* state) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint: " + path);
  return load(is, state);
}

}  // namespace gnmt
