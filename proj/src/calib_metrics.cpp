#include "calkit/calib_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "calkit/errors.hpp"

namespace calkit {

std::string_view to_string(BinScheme scheme) {
  return scheme == BinScheme::equal_width ? "equal_width" : "equal_mass";
}

BinScheme parse_bin_scheme(std::string_view text) {
  if (text == "width" || text == "equal_width") return BinScheme::equal_width;
  if (text == "mass" || text == "equal_mass") return BinScheme::equal_mass;
  throw DomainError("unknown bin scheme: " + std::string(text));
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("softmax of an empty logit vector");
  double top = logits[0];
  for (double l : logits) {
    if (!std::isfinite(l)) throw DomainError("non-finite logit");
    top = std::max(top, l);
  }
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

OptionConfidence confidence_of(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("confidence_of needs K >= 1 logits");
  std::size_t best = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw DomainError("non-finite logit at option " + std::to_string(i));
    if (logits[i] > logits[best]) best = i;
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l - logits[best]);
  return {1.0 / z, best};
}

std::size_t equal_width_bin(double c, std::size_t bins) {
  const double m = static_cast<double>(bins);
  auto idx = static_cast<std::ptrdiff_t>(std::ceil(c * m)) - 1;
  idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bins) - 1);
  // c*m can round across a boundary; settle against the same edges the table reports.
  while (idx > 0 && c <= static_cast<double>(idx) / m) --idx;
  while (idx + 1 < static_cast<std::ptrdiff_t>(bins) && c > static_cast<double>(idx + 1) / m) ++idx;
  return static_cast<std::size_t>(idx);
}

namespace {

void check_point(const PredictionPoint& p) {
  if (!std::isfinite(p.confidence) || p.confidence <= 0.0 || p.confidence > 1.0)
    throw DomainError("confidence must lie in (0, 1], got " + std::to_string(p.confidence));
}

void require_rows(const ReliabilityTable& t) {
  if (t.total == 0) throw EmptyInputError("reliability table is empty");
}

}  // namespace

ReliabilityTable bin_predictions(std::span<const PredictionPoint> points, std::size_t bins,
                                 BinScheme scheme) {
  if (bins == 0) throw DomainError("bin count must be >= 1");
  if (points.empty()) throw EmptyInputError("no prediction points to bin");
  for (const auto& p : points) check_point(p);

  ReliabilityTable table;
  table.bin_count = bins;
  table.scheme = scheme;
  table.total = points.size();
  table.bins.resize(bins);
  std::vector<double> conf_sum(bins, 0.0), hits(bins, 0.0);

  if (scheme == BinScheme::equal_width) {
    const double m = static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      table.bins[b].lower = static_cast<double>(b) / m;
      table.bins[b].upper = static_cast<double>(b + 1) / m;
    }
    for (const auto& p : points) {
      const std::size_t b = equal_width_bin(p.confidence, bins);
      ++table.bins[b].count;
      conf_sum[b] += p.confidence;
      hits[b] += p.correct ? 1.0 : 0.0;
    }
  } else {
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return points[a].confidence < points[b].confidence;
    });
    const std::size_t n = points.size();
    double prev_upper = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t begin = b * n / bins;
      const std::size_t end = (b + 1) * n / bins;
      auto& bin = table.bins[b];
      bin.lower = prev_upper;
      bin.upper = prev_upper;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& p = points[order[i]];
        ++bin.count;
        conf_sum[b] += p.confidence;
        hits[b] += p.correct ? 1.0 : 0.0;
        bin.upper = p.confidence;
      }
      prev_upper = bin.upper;
    }
  }

  for (std::size_t b = 0; b < bins; ++b) {
    auto& bin = table.bins[b];
    if (bin.count == 0) continue;
    const double n = static_cast<double>(bin.count);
    bin.conf_mean = conf_sum[b] / n;
    bin.acc_mean = hits[b] / n;
    // summation rounding must not push the mean past the closed upper edge
    if (scheme == BinScheme::equal_width) bin.conf_mean = std::min(bin.conf_mean, bin.upper);
  }
  return table;
}

double ece(const ReliabilityTable& t) {
  require_rows(t);
  const double n = static_cast<double>(t.total);
  double err = 0.0;
  for (const auto& b : t.bins) {
    if (b.count == 0) continue;
    err += (static_cast<double>(b.count) / n) * std::abs(b.acc_mean - b.conf_mean);
  }
  return err;
}

double mce(const ReliabilityTable& t) {
  require_rows(t);
  double worst = 0.0;
  for (const auto& b : t.bins)
    if (b.count > 0) worst = std::max(worst, std::abs(b.acc_mean - b.conf_mean));
  return worst;
}

double ence(const ReliabilityTable& t) {
  require_rows(t);
  const double n = static_cast<double>(t.total);
  double err = 0.0;
  for (const auto& b : t.bins) {
    if (b.count == 0) continue;
    if (b.conf_mean <= 0.0) throw DomainError("degenerate bin: non-empty bin with zero mean confidence");
    err += (static_cast<double>(b.count) / n) * std::abs(b.acc_mean - b.conf_mean) / b.conf_mean;
  }
  return err;
}

CalibrationSummary summarize_points(std::span<const PredictionPoint> points, std::size_t bins,
                                    BinScheme scheme) {
  const ReliabilityTable table = bin_predictions(points, bins, scheme);
  CalibrationSummary s;
  s.count = points.size();
  double hits = 0.0, conf = 0.0;
  for (const auto& p : points) {
    hits += p.correct ? 1.0 : 0.0;
    conf += p.confidence;
  }
  s.accuracy = hits / static_cast<double>(points.size());
  s.mean_confidence = conf / static_cast<double>(points.size());
  s.ece = ece(table);
  s.mce = mce(table);
  s.ence = ence(table);
  return s;
}

RecordPoints prediction_points(std::span<const ResponseRecord> records, ErrorPolicy policy) {
  RecordPoints out;
  out.points.reserve(records.size());
  for (const auto& r : records) {
    if (!r.has_labeled_logits()) {
      if (policy == ErrorPolicy::fail_fast)
        throw ValidationError(r.option_logits ? "gold_index" : "option_logits",
                              "record " + r.id + " cannot be scored");
      out.skipped_ids.push_back(r.id);
      continue;
    }
    const auto c = confidence_of(*r.option_logits);
    out.points.push_back({c.confidence, c.predicted_index == *r.gold_index});
  }
  return out;
}

CalibrationSummary summarize(std::span<const ResponseRecord> records, std::size_t bins,
                             BinScheme scheme, ErrorPolicy policy) {
  const RecordPoints rp = prediction_points(records, policy);
  return summarize_points(rp.points, bins, scheme);
}

}  // namespace calkit
