#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "calkit/record_store.hpp"

namespace calkit {

struct LabeledLogits {
  std::vector<double> logits;
  std::size_t gold = 0;
};

// Extracts (logits, gold) pairs; throws ValidationError for a record lacking either.
std::vector<LabeledLogits> labeled_logits(std::span<const ResponseRecord> records);

/// Summed negative log-likelihood of the gold options under softmax(l / T).
/// Terms are reduced pairwise, so the value does not depend on `jobs`.
double nll(std::span<const LabeledLogits> data, double temperature, std::size_t jobs = 1);
double nll(std::span<const ResponseRecord> records, double temperature);

struct FitOptions {
  double lo = 0.05;
  double hi = 20.0;
  double tol = 1e-4;  // on log T
  std::size_t max_iterations = 200;
  std::size_t jobs = 1;
};

struct TemperatureFit {
  double temperature = 1.0;
  double nll_at_t = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool flat = false;  // objective constant across the bracket; T set to 1
  double lo = 0.0;
  double hi = 0.0;
};

/// Golden-section search on log T over [lo, hi].
TemperatureFit fit_temperature(std::span<const LabeledLogits> data, const FitOptions& options = {});
TemperatureFit fit_temperature(std::span<const ResponseRecord> records, const FitOptions& options = {});

// softmax(l / T)
std::vector<double> apply_temperature(std::span<const double> logits, double temperature);

// l / T, for rewriting records so downstream metrics apply unchanged.
std::vector<double> scale_logits(std::span<const double> logits, double temperature);
ResponseRecord scale_record(const ResponseRecord& record, double temperature);

}  // namespace calkit
