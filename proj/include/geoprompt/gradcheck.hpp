#pragma once

#include "geoprompt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace geoprompt {

struct GradCheckResult {
  double max_relative_error = 0.0;
  Index checked = 0;
  /// Coordinates whose +/- perturbation changed a discrete selection.
  Index skipped = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
/// turning finite-difference rounding noise into large ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

/// Compares the reverse-mode gradient of a scalar function at x against
/// central differences. Coordinates whose perturbation flips a recorded
/// selection (see Tape::note_selection) are skipped and counted.
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&, const Var<double>&)>& f,
                                  const Tensor<double>& x, double step) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  Tape<double> tape;
  Var<double> xv = tape.variable(x);
  Var<double> y = f(tape, xv);
  if (y.value().size() != 1) {
    throw std::invalid_argument("grad_check: function must be scalar, got shape " + shape_string(y.shape()));
  }
  tape.backward(y);
  const Tensor<double> analytic = xv.grad();
  const std::uint64_t digest = tape.selection_digest();

  GradCheckResult result;
  Tensor<double> probe = x;
  auto eval = [&](double& out) {
    Tape<double> t;
    Var<double> r = f(t, t.variable(probe));
    out = r.value().item();
    return t.selection_digest() == digest;
  };
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe.values()[i];
    double plus = 0, minus = 0;
    probe.values()[i] = orig + step;
    const bool same_plus = eval(plus);
    probe.values()[i] = orig - step;
    const bool same_minus = eval(minus);
    probe.values()[i] = orig;
    if (!same_plus || !same_minus) {
      ++result.skipped;
      continue;
    }
    const double numeric = (plus - minus) / (2 * step);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic.values()[i], numeric));
    ++result.checked;
  }
  return result;
}

struct ParameterGradCheck {
  std::string name;
  GradCheckResult result;
};

/// Gradient check over parameter values. `loss` builds the scalar loss on a
/// fresh tape from the current parameter values. With `max_coords` > 0 only
/// that many evenly strided coordinates of each tensor are probed.
inline std::vector<ParameterGradCheck> grad_check_parameters(const std::function<Var<double>(Tape<double>&)>& loss,
                                                             const std::vector<Parameter<double>*>& params,
                                                             double step, Index max_coords = 0) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  Tape<double> tape;
  Var<double> y = loss(tape);
  if (y.value().size() != 1) {
    throw std::invalid_argument("grad_check: loss must be scalar, got shape " + shape_string(y.shape()));
  }
  for (auto* p : params) p->zero_grad();
  tape.backward(y);
  tape.accumulate_parameter_grads();
  const std::uint64_t digest = tape.selection_digest();

  auto eval = [&](double& out) {
    Tape<double> t;
    out = loss(t).value().item();
    return t.selection_digest() == digest;
  };
  std::vector<ParameterGradCheck> out;
  for (auto* p : params) {
    ParameterGradCheck check{p->name, {}};
    const Index size = p->value.size();
    const Index probes = max_coords > 0 ? std::min(max_coords, size) : size;
    for (Index k = 0; k < probes; ++k) {
      const Index i = k * size / probes;
      double& slot = p->value.values()[i];
      const double orig = slot;
      double plus = 0, minus = 0;
      slot = orig + step;
      const bool same_plus = eval(plus);
      slot = orig - step;
      const bool same_minus = eval(minus);
      slot = orig;
      if (!same_plus || !same_minus) {
        ++check.result.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2 * step);
      check.result.max_relative_error =
          std::max(check.result.max_relative_error, relative_error(p->grad.values()[i], numeric));
      ++check.result.checked;
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace geoprompt
