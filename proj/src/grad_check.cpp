#include "vcdi/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vcdi/errors.hpp"
#include "vcdi/rng.hpp"

namespace vcdi {

double evaluate_with_gradients(ParamStore& store, const ScalarFn& fn) {
  Tape tape;
  const TapeValue root = fn(tape, store);
  const double value = tape.scalar(root);
  tape.backward(root);
  return value;
}

namespace {

double forward_only(ParamStore& store, const ScalarFn& fn) {
  Tape tape;
  return tape.scalar(fn(tape, store));
}

}  // namespace

std::string GradReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << ": " << coords_checked
     << " coordinates, worst rel error " << worst_rel_error << " (tolerance "
     << tolerance << ")";
  if (!failures.empty()) {
    os << "; " << failures.size() << " failing, first at " << failures[0].param
       << "[" << failures[0].index << "] analytic=" << failures[0].analytic
       << " numeric=" << failures[0].numeric;
  }
  return os.str();
}

GradReport grad_check(ParamStore& store, const ScalarFn& fn, double epsilon,
                      double tolerance, std::size_t full_sweep_limit,
                      std::size_t sample_coords, std::uint64_t seed) {
  if (epsilon <= 0.0 || tolerance <= 0.0) {
    throw ValidationError("grad_check: epsilon and tolerance must be positive");
  }
  GradReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;

  store.zero_grads();
  evaluate_with_gradients(store, fn);
  std::map<std::string, Mat> analytic;
  for (const std::string& name : store.names()) {
    analytic.emplace(name, store.grad(name));
  }

  const std::size_t total = store.total_size();
  const bool full_sweep = total <= full_sweep_limit;
  Rng rng(seed);

  for (const std::string& name : store.names()) {
    Mat& value = store.value(name);
    const Mat& a = analytic.at(name);

    std::vector<std::size_t> indices;
    if (full_sweep) {
      indices.resize(value.size());
      for (std::size_t i = 0; i < value.size(); ++i) indices[i] = i;
    } else {
      // Proportional share of the sample budget, at least one coordinate so
      // every parameter appears in the report.
      std::size_t want = (sample_coords * value.size() + total - 1) / total;
      want = std::clamp<std::size_t>(want, 1, value.size());
      std::vector<std::size_t> pool(value.size());
      for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
      for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        indices.push_back(pool[i]);
      }
      std::sort(indices.begin(), indices.end());
    }

    double worst = 0.0;
    for (const std::size_t i : indices) {
      const double saved = value.d[i];
      value.d[i] = saved + epsilon;
      const double f_plus = forward_only(store, fn);
      value.d[i] = saved - epsilon;
      const double f_minus = forward_only(store, fn);
      value.d[i] = saved;

      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double an = a.d[i];
      // Central differences resolve a derivative only to about
      // |f| * eps_machine / epsilon in absolute terms (~1e-10 for O(10)
      // losses at the default epsilon). Gradients below the floor are
      // therefore compared absolutely: floor * tolerance is the smallest
      // discrepancy the check can attribute to a wrong gradient rather
      // than to cancellation noise.
      constexpr double kRelFloor = 1e-5;
      const double rel = std::abs(an - numeric) /
                         std::max({std::abs(an), std::abs(numeric), kRelFloor});
      worst = std::max(worst, rel);
      ++report.coords_checked;
      if (rel > tolerance) {
        report.failures.push_back({name, i, an, numeric, rel});
      }
    }
    report.max_rel_error[name] = worst;
    report.param_pass[name] = worst <= tolerance;
    report.worst_rel_error = std::max(report.worst_rel_error, worst);
    if (worst > tolerance) report.pass = false;
  }

  std::sort(report.failures.begin(), report.failures.end(),
            [](const GradReport::Coord& x, const GradReport::Coord& y) {
              return x.rel_error > y.rel_error;
            });
  return report;
}

}  // namespace vcdi
