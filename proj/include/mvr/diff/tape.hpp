#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvr/diff/tensor.hpp"

namespace mvr::diff {

/// Named parameter with gradient accumulator and Adam moments.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

/// Ordered collection of parameters. Iteration order is insertion order, so
/// optimizer updates are deterministic.
class ParamStore {
 public:
  int add(const std::string& name, Tensor init);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;
  Param& at(const std::string& name) { return items_[static_cast<std::size_t>(index_of(name))]; }
  const Param& at(const std::string& name) const {
    return items_[static_cast<std::size_t>(index_of(name))];
  }
  Param& item(int i) { return items_[static_cast<std::size_t>(i)]; }
  const Param& item(int i) const { return items_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(items_.size()); }
  std::size_t total_elements() const;

  void zero_grad();

  /// Scales all gradients down when their global L2 norm exceeds max_norm.
  /// Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

  /// Standard bias-corrected adaptive-moment update over all parameters.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  long long adam_steps() const { return adam_t_; }

  /// Checkpoint container: "MVP1", u32 count, then per parameter
  /// (u32 name length, name bytes, u32 rank, u32 dims..., float32 payload),
  /// all little-endian.
  void save(const std::filesystem::path& file) const;
  /// Loads a checkpoint. If the store is non-empty, names and shapes must
  /// match; otherwise parameters are created in file order.
  void load(const std::filesystem::path& file);

 private:
  std::vector<Param> items_;
  std::unordered_map<std::string, int> index_;
  long long adam_t_ = 0;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Dynamic reverse-mode tape. Nodes are created eagerly by the op functions
/// in ops.hpp; creation order is a valid topological order for backward.
class Tape {
 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  /// Leaf that does not require gradients.
  Var constant(Tensor value);
  /// Leaf that accumulates gradients (used by gradient checks on inputs).
  Var input(Tensor value);
  /// Leaf bound to a store parameter; memoized per tape so repeated uses
  /// share one node and gradients accumulate.
  Var param(const std::string& name);

  /// Registers an op node. `back` receives the tape and the node id and must
  /// scatter the node's gradient into its parents' gradients.
  Var make(Tensor value, std::vector<Var> parents, std::function<void(Tape&, int)> back);

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  double scalar(Var v) const;
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient tensor of a node, allocated (zeros) on first access.
  Tensor& grad(Var v);

  /// Reverse sweep from a scalar loss; accumulates parameter gradients into
  /// the bound store.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }
  ParamStore* store() const { return store_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched
    std::vector<Var> parents;
    std::function<void(Tape&, int)> back;
    bool requires_grad = false;
    int param_index = -1;
  };

  std::vector<Node> nodes_;
  ParamStore* store_ = nullptr;
  std::unordered_map<std::string, int> bound_params_;
};

}  // namespace mvr::diff
