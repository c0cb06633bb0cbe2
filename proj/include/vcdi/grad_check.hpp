#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vcdi/param_store.hpp"
#include "vcdi/tape.hpp"

namespace vcdi {

// A scalar-valued computation: builds its graph on the given tape, reading
// parameters from the store, and returns the 1x1 root node.
using ScalarFn = std::function<TapeValue(Tape&, ParamStore&)>;

// Runs fn on a fresh tape and backpropagates; gradients are accumulated into
// the store (zero it first if accumulation is not wanted). Returns the value.
double evaluate_with_gradients(ParamStore& store, const ScalarFn& fn);

struct GradReport {
  struct Coord {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
  };

  // Per-parameter worst relative error |a - n| / max(|a|, |n|, 1e-5) over the
  // checked coordinates, and pass/fail against the tolerance. The 1e-5 floor
  // marks the resolution of central differences at the default epsilon:
  // gradients smaller than it are judged absolutely, at floor * tolerance.
  std::map<std::string, double> max_rel_error;
  std::map<std::string, bool> param_pass;
  std::vector<Coord> failures;
  std::size_t coords_checked = 0;
  double worst_rel_error = 0.0;
  double epsilon = 0.0;
  double tolerance = 0.0;
  bool pass = true;

  std::string summary() const;
};

// Central-difference verification of the analytic gradient. Every coordinate
// is checked when the store holds at most full_sweep_limit values; otherwise a
// seeded sample of about sample_coords coordinates is drawn, with at least one
// coordinate per parameter so the report covers every registered name.
GradReport grad_check(ParamStore& store, const ScalarFn& fn,
                      double epsilon = 1e-5, double tolerance = 1e-4,
                      std::size_t full_sweep_limit = 1000,
                      std::size_t sample_coords = 400,
                      std::uint64_t seed = 20240601ULL);

}  // namespace vcdi
