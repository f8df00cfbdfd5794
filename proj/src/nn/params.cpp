#include "ctn/nn/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ctn/error.hpp"
#include "ctn/util/sha256.hpp"

namespace ctn::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

Tensor ParamStore::normal(const std::string& name, std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return adopt(name, Tensor::from(rows, cols, std::move(v), true));
}

Tensor ParamStore::constant(const std::string& name, std::size_t rows, std::size_t cols, double value) {
  return adopt(name, Tensor::from(rows, cols, std::vector<double>(rows * cols, value), true));
}

Tensor ParamStore::adopt(const std::string& name, Tensor t) {
  if (index_.count(name)) throw Error(ErrorCode::invariant_violation, "duplicate parameter " + name);
  t.node()->requires_grad = true;
  index_[name] = entries_.size();
  entries_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::missing_asset, "no parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::set_trainable(bool trainable) {
  for (auto& [_, t] : entries_) {
    t.node()->requires_grad = trainable;
    t.zero_grad();
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, t] : entries_) {
    Tensor src = other.get(name);
    if (src.rows() != t.rows() || src.cols() != t.cols())
      throw Error(ErrorCode::dimension_mismatch, "shape mismatch copying " + name);
    std::copy(src.values().begin(), src.values().end(), t.mutable_values().begin());
  }
}

std::string ParamStore::hash() const {
  util::Sha256 h;
  for (const auto& [name, t] : entries_) {
    h.update(name);
    const std::uint64_t shape[2] = {t.rows(), t.cols()};
    h.update(std::span(reinterpret_cast<const unsigned char*>(shape), sizeof shape));
    h.update(std::span(reinterpret_cast<const unsigned char*>(t.values().data()), t.size() * sizeof(double)));
  }
  return h.hex_digest();
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.node()->grad.empty()) continue;
    const auto& g = p.node()->grad;
    auto values = p.mutable_values();
    for (std::size_t j = 0; j < values.size(); ++j) {
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g[j];
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      values[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    p.zero_grad();
  }
}

namespace {

constexpr char kMagic[8] = {'C', 'T', 'N', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error(ErrorCode::parse_error, "truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, t.rows());
    put<std::uint64_t>(out, t.cols());
    out.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw Error(ErrorCode::parse_error, "not a checkpoint: " + path.string());
  Checkpoint ck;
  const auto meta_len = take<std::uint64_t>(in, path);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  ck.metadata = nlohmann::json::parse(meta);
  const auto count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = take<std::uint64_t>(in, path);
    const auto cols = take<std::uint64_t>(in, path);
    std::vector<double> v(rows * cols);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw Error(ErrorCode::parse_error, "truncated tensor " + name);
    ck.tensors.emplace_back(name, Tensor::from(rows, cols, std::move(v)));
  }
  return ck;
}

Checkpoint Checkpoint::from_store(const ParamStore& store, nlohmann::json metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& [name, t] : store.entries()) ck.tensors.emplace_back(name, t.detach());
  return ck;
}

void Checkpoint::restore_into(ParamStore& store) const {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (const auto& [name, t] : store.entries()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::missing_asset, "checkpoint lacks " + name);
    const Tensor& src = *it->second;
    if (src.rows() != t.rows() || src.cols() != t.cols())
      throw Error(ErrorCode::dimension_mismatch, "checkpoint shape mismatch for " + name);
    Tensor dst = t;
    std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
  }
}

}  // namespace ctn::nn
