#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "calkit/record_store.hpp"

namespace calkit {

struct PredictionPoint {
  double confidence;  // in (0, 1]
  bool correct;
};

enum class BinScheme { equal_width, equal_mass };

std::string_view to_string(BinScheme scheme);
BinScheme parse_bin_scheme(std::string_view text);  // "width"/"equal_width", "mass"/"equal_mass"

struct ReliabilityBin {
  std::size_t count = 0;
  double conf_mean = 0.0;
  double acc_mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Per-bin reliability statistics. Equal-width bins cover (lower, upper];
/// equal-mass bins hold contiguous runs of the confidence-sorted points and
/// report the confidence range they actually span.
struct ReliabilityTable {
  std::size_t bin_count = 0;
  BinScheme scheme = BinScheme::equal_width;
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;
};

struct CalibrationSummary {
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double ence = 0.0;
  std::size_t count = 0;
};

struct OptionConfidence {
  double confidence;
  std::size_t predicted_index;  // lowest index wins ties
};

std::vector<double> softmax(std::span<const double> logits);
OptionConfidence confidence_of(std::span<const double> option_logits);

// Index of the equal-width bin (lower, upper] containing `confidence`.
std::size_t equal_width_bin(double confidence, std::size_t bins);

ReliabilityTable bin_predictions(std::span<const PredictionPoint> points, std::size_t bins,
                                 BinScheme scheme = BinScheme::equal_width);

double ece(const ReliabilityTable& table);
double mce(const ReliabilityTable& table);
double ence(const ReliabilityTable& table);

CalibrationSummary summarize_points(std::span<const PredictionPoint> points, std::size_t bins = 10,
                                    BinScheme scheme = BinScheme::equal_width);

struct RecordPoints {
  std::vector<PredictionPoint> points;
  std::vector<std::string> skipped_ids;
};

/// Confidence/correctness of every record with logits and a gold index.
/// Under fail_fast a record missing either throws ValidationError.
RecordPoints prediction_points(std::span<const ResponseRecord> records,
                               ErrorPolicy policy = ErrorPolicy::fail_fast);

CalibrationSummary summarize(std::span<const ResponseRecord> records, std::size_t bins = 10,
                             BinScheme scheme = BinScheme::equal_width,
                             ErrorPolicy policy = ErrorPolicy::fail_fast);

}  // namespace calkit
