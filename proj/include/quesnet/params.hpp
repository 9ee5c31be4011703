#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace quesnet {

// Ordered name -> tensor registry. Registration order is the canonical
// parameter order used by the optimizer and the checkpoint writer, so it
// must be deterministic across runs.
class ParamMap {
 public:
  // Returns a handle sharing storage with the stored entry (Tensor is a
  // shared pointer to its node), so callers may keep the copy. Registered
  // tensors always require gradients; training-time freezing is the
  // optimizer's concern, not the registry's.
  Tensor add(const std::string& name, Tensor t) {
    if (has(name)) throw UsageError("params: duplicate name " + name);
    t.node()->requires_grad = true;
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  bool has(const std::string& name) const {
    for (auto& e : entries_)
      if (e.first == name) return true;
    return false;
  }

  Tensor at(const std::string& name) const {
    for (auto& e : entries_)
      if (e.first == name) return e.second;
    throw UsageError("params: no parameter named " + name);
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // Plain value copies in registration order, for best-so-far tracking.
  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    out.reserve(entries_.size());
    for (auto& e : entries_) out.push_back(e.second.data());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != entries_.size())
      throw UsageError("params: snapshot entry count mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].size() != entries_[i].second.size())
        throw UsageError("params: snapshot size mismatch at " +
                         entries_[i].first);
      entries_[i].second.data() = snap[i];
    }
  }

  // Copies values for every name present in src; shapes must agree.
  void copy_values_from(const ParamMap& src) {
    for (const auto& [name, tensor] : src) {
      if (!has(name)) continue;
      Tensor dst = at(name);
      if (dst.shape() != tensor.shape())
        throw DimensionError("params: shape mismatch installing " + name +
                             ": " + shape_str(dst.shape()) + " vs " +
                             shape_str(tensor.shape()));
      dst.data() = tensor.data();
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace quesnet
