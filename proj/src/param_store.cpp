#include "vcdi/param_store.hpp"

#include "vcdi/errors.hpp"

namespace vcdi {

void ParamStore::register_param(const std::string& name, std::size_t rows,
                                std::size_t cols) {
  if (entries_.count(name) > 0) {
    throw ValidationError("duplicate parameter name: " + name);
  }
  Entry e;
  e.value = Mat(rows, cols);
  e.grad = Mat(rows, cols);
  entries_.emplace(name, std::move(e));
}

Mat& ParamStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second.value;
}

const Mat& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second.value;
}

Mat& ParamStore::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second.grad;
}

const Mat& ParamStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("unknown parameter: " + name);
  return it->second.grad;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

}  // namespace vcdi
