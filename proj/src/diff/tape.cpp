#include "mvr/diff/tape.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mvr::diff {

int ParamStore::add(const std::string& name, Tensor init) {
  require(!contains(name), errc::parameter, "param store: duplicate name " + name);
  Param p;
  p.name = name;
  p.grad = Tensor::zeros(init.shape);
  p.m = Tensor::zeros(init.shape);
  p.v = Tensor::zeros(init.shape);
  p.value = std::move(init);
  items_.push_back(std::move(p));
  const int idx = static_cast<int>(items_.size()) - 1;
  index_[name] = idx;
  return idx;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), errc::parameter, "param store: unknown name " + name);
  return it->second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : items_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

double ParamStore::clip_grad_norm(double max_norm) {
  require(max_norm > 0.0, errc::parameter, "clip_grad_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto& p : items_)
    for (double g : p.grad.data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : items_)
      for (double& g : p.grad.data) g *= scale;
  }
  return norm;
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps) {
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (auto& p : items_) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
      p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
      const double mhat = p.m[i] / bc1;
      const double vhat = p.v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

void write_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.good(), errc::data, "checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void ParamStore::save(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::binary);
  require(os.good(), errc::data, "checkpoint: cannot open " + file.string());
  os.write("MVP1", 4);
  write_u32(os, static_cast<std::uint32_t>(items_.size()));
  for (const auto& p : items_) {
    write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<std::uint32_t>(p.value.shape.size()));
    for (int d : p.value.shape) write_u32(os, static_cast<std::uint32_t>(d));
    std::vector<float> payload(p.value.numel());
    for (std::size_t i = 0; i < payload.size(); ++i)
      payload[i] = static_cast<float>(p.value[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  }
  require(os.good(), errc::data, "checkpoint: write failed for " + file.string());
}

void ParamStore::load(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  require(is.good(), errc::data, "checkpoint: cannot open " + file.string());
  char magic[4];
  is.read(magic, 4);
  require(is.good() && std::memcmp(magic, "MVP1", 4) == 0, errc::data,
          "checkpoint: bad magic in " + file.string());
  const std::uint32_t count = read_u32(is);
  const bool fresh = items_.empty();
  require(fresh || count == items_.size(), errc::data, "checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    std::vector<float> payload(numel_of(shape));
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    require(is.good(), errc::data, "checkpoint: truncated payload in " + file.string());
    Tensor t(shape);
    for (std::size_t j = 0; j < payload.size(); ++j) t[j] = static_cast<double>(payload[j]);
    if (fresh) {
      add(name, std::move(t));
    } else {
      Param& p = at(name);
      require(p.value.shape == shape, errc::data, "checkpoint: shape mismatch for " + name);
      p.value = std::move(t);
    }
  }
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const std::string& name) {
  require(store_ != nullptr, errc::parameter, "tape: no parameter store bound");
  auto it = bound_params_.find(name);
  if (it != bound_params_.end()) return Var{it->second};
  Node n;
  n.value = store_->at(name).value;
  n.requires_grad = true;
  n.param_index = store_->index_of(name);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  bound_params_[name] = id;
  return Var{id};
}

Var Tape::make(Tensor value, std::vector<Var> parents, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents)
    if (nodes_[static_cast<std::size_t>(p.id)].requires_grad) n.requires_grad = true;
  n.parents = std::move(parents);
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar(Var v) const {
  const Tensor& t = val(v);
  require(t.numel() == 1, errc::parameter, "tape: scalar() on non-scalar node");
  return t[0];
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  require(val(loss).numel() == 1, errc::parameter, "backward: loss must be scalar");
  grad(loss)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.numel() == 0) continue;
    if (n.back) n.back(*this, id);
  }
  if (store_ == nullptr) return;
  for (auto& [name, id] : bound_params_) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() == 0) continue;
    Param& p = store_->item(n.param_index);
    for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += n.grad[i];
  }
}

}  // namespace mvr::diff
