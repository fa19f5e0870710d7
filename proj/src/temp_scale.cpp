#include "calkit/temp_scale.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

void check_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw DomainError("temperature must be a finite value > 0, got " + std::to_string(t));
}

// -log softmax(l / T)[gold]
double gold_nll(const LabeledLogits& d, double inv_t) {
  double top = -std::numeric_limits<double>::infinity();
  for (double l : d.logits) top = std::max(top, l * inv_t);
  double z = 0.0;
  for (double l : d.logits) z += std::exp(l * inv_t - top);
  return top + std::log(z) - d.logits[d.gold] * inv_t;
}

}  // namespace

std::vector<LabeledLogits> labeled_logits(std::span<const ResponseRecord> records) {
  std::vector<LabeledLogits> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.option_logits) throw ValidationError("option_logits", "record " + r.id + " has no logits");
    if (!r.gold_index) throw ValidationError("gold_index", "record " + r.id + " has no gold answer");
    out.push_back({*r.option_logits, *r.gold_index});
  }
  return out;
}

double nll(std::span<const LabeledLogits> data, double temperature, std::size_t jobs) {
  check_temperature(temperature);
  for (const auto& d : data)
    if (d.logits.empty() || d.gold >= d.logits.size())
      throw ValidationError("gold_index", "gold outside the logit vector");
  const double inv_t = 1.0 / temperature;
  std::vector<double> terms(data.size());
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t end = std::min(data.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) terms[i] = gold_nll(data[i], inv_t);
  });
  return pairwise_sum(terms);
}

double nll(std::span<const ResponseRecord> records, double temperature) {
  check_temperature(temperature);
  const auto data = labeled_logits(records);
  return nll(data, temperature);
}

TemperatureFit fit_temperature(std::span<const LabeledLogits> data, const FitOptions& opt) {
  if (data.empty()) throw EmptyInputError("no records to fit a temperature on");
  if (!(opt.lo > 0.0) || !(opt.lo < opt.hi)) throw DomainError("temperature bracket needs 0 < lo < hi");

  TemperatureFit fit;
  fit.lo = opt.lo;
  fit.hi = opt.hi;
  auto objective = [&](double log_t) {
    const double v = nll(data, std::exp(log_t), opt.jobs);
    if (!std::isfinite(v))
      throw NumericError("non-finite NLL at T = " + std::to_string(std::exp(log_t)));
    return v;
  };

  const double a0 = std::log(opt.lo), b0 = std::log(opt.hi);

  // Flat objective (e.g. every record has uniform logits): identity calibration.
  constexpr int kProbes = 17;
  double probe_min = std::numeric_limits<double>::infinity();
  double probe_max = -probe_min;
  for (int i = 0; i < kProbes; ++i) {
    const double v = objective(a0 + (b0 - a0) * i / (kProbes - 1));
    probe_min = std::min(probe_min, v);
    probe_max = std::max(probe_max, v);
  }
  if (probe_max - probe_min <= opt.tol * static_cast<double>(data.size())) {
    fit.temperature = std::clamp(1.0, opt.lo, opt.hi);
    fit.nll_at_t = objective(std::log(fit.temperature));
    fit.converged = true;
    fit.flat = true;
    return fit;
  }

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = a0, b = b0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = objective(c), fd = objective(d);
  std::size_t it = 0;
  while (b - a >= opt.tol && it < opt.max_iterations) {
    ++it;
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = objective(d);
    }
  }
  fit.iterations = it;
  fit.converged = (b - a) < opt.tol;

  double best_log_t = 0.5 * (a + b);
  double best = objective(best_log_t);
  // A minimum pinned against the bracket edge is reported at the edge itself.
  for (double edge : {a0, b0}) {
    const double v = objective(edge);
    if (v < best) {
      best = v;
      best_log_t = edge;
    }
  }
  fit.temperature = std::exp(best_log_t);
  if (best_log_t == a0) fit.temperature = opt.lo;
  if (best_log_t == b0) fit.temperature = opt.hi;
  fit.nll_at_t = best;
  return fit;
}

TemperatureFit fit_temperature(std::span<const ResponseRecord> records, const FitOptions& options) {
  const auto data = labeled_logits(records);
  return fit_temperature(data, options);
}

std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  check_temperature(temperature);
  return softmax(scale_logits(logits, temperature));
}

std::vector<double> scale_logits(std::span<const double> logits, double temperature) {
  check_temperature(temperature);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& l : out) l /= temperature;
  return out;
}

ResponseRecord scale_record(const ResponseRecord& record, double temperature) {
  ResponseRecord out = record;
  if (out.option_logits) out.option_logits = scale_logits(*out.option_logits, temperature);
  return out;
}

}  // namespace calkit
