#pragma once

// Reference implementations used only by tests. Each one is written the
// slow, obvious way (long double, linear scans, brute force) so it shares no
// code path with the library it checks.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "calkit/calib_metrics.hpp"
#include "calkit/record_store.hpp"
#include "calkit/temp_scale.hpp"

namespace oracle {

struct Gap {
  double ece = 0, mce = 0, ence = 0;
};

// Bin m holds m/M < c <= (m+1)/M, found by scanning the edges.
inline Gap binned_gaps(const std::vector<calkit::PredictionPoint>& pts, std::size_t M) {
  std::vector<long double> conf(M, 0), acc(M, 0);
  std::vector<std::size_t> n(M, 0);
  for (const auto& p : pts) {
    std::size_t bin = 0;
    for (std::size_t m = 0; m < M; ++m) {
      const long double lo = static_cast<long double>(m) / M;
      const long double hi = static_cast<long double>(m + 1) / M;
      if (p.confidence > lo && p.confidence <= hi) {
        bin = m;
        break;
      }
    }
    conf[bin] += p.confidence;
    acc[bin] += p.correct ? 1 : 0;
    ++n[bin];
  }
  Gap g;
  long double e = 0, en = 0, mx = 0;
  for (std::size_t m = 0; m < M; ++m) {
    if (n[m] == 0) continue;
    const long double c = conf[m] / n[m], a = acc[m] / n[m];
    const long double w = static_cast<long double>(n[m]) / pts.size();
    const long double gap = std::fabs(a - c);
    e += w * gap;
    en += w * gap / c;
    if (gap > mx) mx = gap;
  }
  g.ece = static_cast<double>(e);
  g.mce = static_cast<double>(mx);
  g.ence = static_cast<double>(en);
  return g;
}

inline long double max_softmax(const std::vector<double>& logits) {
  long double z = 0;
  long double top = logits[0];
  for (double l : logits) top = std::max<long double>(top, l);
  for (double l : logits) z += std::exp(static_cast<long double>(l) - top);
  return 1.0L / z;
}

inline long double nll(const std::vector<calkit::LabeledLogits>& data, double T) {
  long double total = 0;
  for (const auto& d : data) {
    // double exp, long double accumulation: the grid search calls this a lot
    double top = d.logits[0] / T;
    for (double l : d.logits) top = std::max(top, l / T);
    double z = 0;
    for (double l : d.logits) z += std::exp(l / T - top);
    total -= static_cast<long double>(d.logits[d.gold] / T - top - std::log(z));
  }
  return total;
}

// Exhaustive scan of T = lo, lo+step, ..., hi.
inline double grid_search_temperature(const std::vector<calkit::LabeledLogits>& data, double lo, double hi,
                                      double step) {
  double best_t = lo;
  long double best = nll(data, lo);
  const auto steps = static_cast<std::size_t>(std::llround((hi - lo) / step));
  for (std::size_t i = 1; i <= steps; ++i) {
    const double t = lo + static_cast<double>(i) * step;
    const long double v = nll(data, t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  return best_t;
}

inline double entropy_of_sizes(const std::vector<std::size_t>& sizes) {
  long double total = 0, h = 0;
  for (auto s : sizes) total += s;
  for (auto s : sizes)
    if (s) h -= (s / total) * std::log(s / total);
  return static_cast<double>(h);
}

// --- seeded generators for property tests ---------------------------------

inline std::vector<calkit::PredictionPoint> random_points(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<calkit::PredictionPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    double c = u(rng);
    if (c <= 0.0) c = 1e-9;
    if (i % 17 == 0) c = 1.0;  // keep the top edge exercised
    pts.push_back({c, u(rng) < 0.5});
  }
  return pts;
}

inline std::vector<double> random_logits(std::mt19937_64& rng, std::size_t k, double spread = 8.0) {
  std::normal_distribution<double> nd(0.0, spread);
  std::vector<double> l(k);
  for (auto& x : l) x = nd(rng);
  return l;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;:!?'\"\\/\t\n{}[]-_";
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[pick(rng)];
  // a few multi-byte characters
  if (n % 5 == 0) s += "\xC3\xA9\xE2\x80\x99";
  return s;
}

// A valid record with a random subset of optional fields.
inline calkit::ResponseRecord random_record(std::mt19937_64& rng, std::size_t index) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> kdist(1, 6);
  calkit::ResponseRecord r;
  r.id = "r" + std::to_string(index) + random_text(rng, 4);
  r.question = random_text(rng, 40);
  if (r.question.empty()) r.question = "q";
  const bool mc = coin(rng) != 0;
  if (mc) {
    const std::size_t k = kdist(rng);
    r.options = std::vector<std::string>();
    for (std::size_t i = 0; i < k; ++i) r.options->push_back(random_text(rng, 12) + "#" + std::to_string(i));
    if (coin(rng)) r.gold_index = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    if (coin(rng)) r.option_logits = random_logits(rng, k);
  }
  if (coin(rng)) r.image_ref = "img/" + std::to_string(index) + ".png";
  if (coin(rng)) r.description_sentences = std::vector<std::string>{random_text(rng, 20) + ".", "Second."};
  if (coin(rng)) {
    r.samples = std::vector<calkit::SampledAnswer>();
    const std::size_t n = kdist(rng);
    for (std::size_t i = 0; i < n; ++i) {
      calkit::SampledAnswer s;
      s.text = random_text(rng, 10) + "x";
      if (coin(rng)) s.correct = coin(rng) != 0;
      s.temperature = 1.0;
      s.top_p = coin(rng) ? 0.95 : 1.0;
      r.samples->push_back(s);
    }
  }
  if (!r.option_logits && !r.samples) r.samples = std::vector<calkit::SampledAnswer>{{"fallback", true, 1.0, 1.0}};
  r.model_id = coin(rng) ? "llava-7b" : "";
  r.condition = coin(rng) ? "prompting" : "";
  if (coin(rng)) r.metadata["source"] = random_text(rng, 8);
  if (coin(rng)) r.metadata["nested"] = {{"a", 1}, {"b", {1.5, "x"}}};
  return r;
}

}  // namespace oracle
