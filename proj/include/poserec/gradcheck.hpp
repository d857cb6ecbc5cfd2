#pragma once

#include <chrono>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "poserec/autodiff.hpp"
#include "poserec/rng.hpp"

namespace poserec {

struct GradcheckOptions {
  double h = 1e-5;                       // central difference step
  double tolerance = 1e-4;
  std::size_t max_entries_per_param = 12;  // entries sampled per parameter
  std::uint64_t sample_seed = 0x5eedu;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  bool ok = true;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  double max_rel_err = 0.0;
  bool ok = true;
  double seconds = 0.0;

  const ParamCheck* worst() const {
    const ParamCheck* w = nullptr;
    for (const auto& p : params) {
      if (!w || p.max_rel_err > w->max_rel_err) w = &p;
    }
    return w;
  }
};

namespace detail {

// |a - fd| / max(|a|, |fd|, 1): relative where gradients are large, absolute
// where they vanish, so finite-difference noise on near-zero entries does
// not raise false alarms.
inline double rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1.0});
  return std::abs(analytic - fd) / denom;
}

inline std::vector<std::size_t> sample_indices(std::size_t total, std::size_t want,
                                               std::uint64_t seed) {
  std::vector<std::size_t> all(total);
  for (std::size_t i = 0; i < total; ++i) all[i] = i;
  if (total <= want) return all;
  auto g = rng::engine(seed);
  return rng::sample_without_replacement(all, want, g);
}

}  // namespace detail

// Compares the given analytic gradients against central finite differences of
// `loss` (a deterministic () -> double closure evaluated at the store's
// current values). Exposed separately so a deliberately corrupted gradient
// can be fed in as a negative control.
template <typename LossFn>
GradcheckReport gradcheck_against(ParamStore& params, const std::vector<Tensor>& analytic,
                                  LossFn&& loss, const GradcheckOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params.at(pi);
    ParamCheck check;
    check.name = p.name;
    const auto idx = detail::sample_indices(
        p.value.size(), opts.max_entries_per_param,
        rng::derive(opts.sample_seed, "gradcheck", static_cast<std::uint64_t>(pi)));
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.h;
      const double lp = loss();
      p.value[i] = saved - opts.h;
      const double lm = loss();
      p.value[i] = saved;
      const double fd = (lp - lm) / (2.0 * opts.h);
      check.max_rel_err = std::max(check.max_rel_err, detail::rel_err(analytic[pi][i], fd));
      ++check.entries_checked;
    }
    check.ok = check.max_rel_err < opts.tolerance;
    report.max_rel_err = std::max(report.max_rel_err, check.max_rel_err);
    report.ok = report.ok && check.ok;
    report.params.push_back(std::move(check));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Full check: `build` constructs the scalar loss on a fresh tape at the
// store's current values. The closure is run twice up front; if the two loss
// values differ at the bit level the forward pass is nondeterministic and no
// finite-difference comparison can be trusted.
template <typename BuildFn>
GradcheckReport gradcheck(ParamStore& params, BuildFn&& build,
                          const GradcheckOptions& opts = {}) {
  auto loss_value = [&]() -> double {
    Tape tape;
    return tape.value(build(tape))[0];
  };
  const double l0 = loss_value();
  const double l1 = loss_value();
  if (std::memcmp(&l0, &l1, sizeof(double)) != 0) {
    throw NumericError("gradcheck: forward closure is nondeterministic");
  }

  params.zero_grads();
  {
    Tape tape;
    tape.backward(build(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) analytic.push_back(params.at(pi).grad);
  params.zero_grads();

  return gradcheck_against(params, analytic, loss_value, opts);
}

}  // namespace poserec
