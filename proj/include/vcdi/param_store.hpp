#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vcdi/mat.hpp"

namespace vcdi {

// Named parameter arrays with paired gradient buffers. Names are unique and
// shapes are immutable after registration. Iteration order is the sorted name
// order, which keeps every sweep over parameters deterministic.
class ParamStore {
 public:
  void register_param(const std::string& name, std::size_t rows, std::size_t cols);

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  Mat& value(const std::string& name);
  const Mat& value(const std::string& name) const;
  Mat& grad(const std::string& name);
  const Mat& grad(const std::string& name) const;

  void zero_grads();
  std::vector<std::string> names() const;
  std::size_t param_count() const { return entries_.size(); }
  std::size_t total_size() const;

 private:
  struct Entry {
    Mat value;
    Mat grad;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace vcdi
