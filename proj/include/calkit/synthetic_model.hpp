#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/model_client.hpp"
#include "calkit/record_store.hpp"

namespace calkit {

/// Accuracy-given-confidence curve g: [0,1] -> [0,1].
struct AccuracyCurve {
  enum class Kind { identity, power, affine } kind = Kind::identity;
  double a = 1.0;  // power exponent, or affine slope
  double b = 0.0;  // affine intercept

  double operator()(double confidence) const;
  static AccuracyCurve parse(std::string_view text);  // "identity", "power:2", "affine:0.9,0.05"
  std::string describe() const;
};

/// Distribution of the target confidence; draws are kept inside (1/K, 1).
struct ConfidenceDistribution {
  enum class Kind { uniform, fixed, beta } kind = Kind::uniform;
  double p1 = 0.0;  // uniform lo | fixed value | beta alpha
  double p2 = 1.0;  // uniform hi | beta beta

  static ConfidenceDistribution parse(std::string_view text);  // "uniform:0.5,1", "fixed:0.8", "beta:2,5"
  std::string describe() const;
};

struct SyntheticModelSpec {
  std::size_t option_count = 4;
  AccuracyCurve accuracy;
  // uniform over (1/K, 1) when left at the default
  ConfidenceDistribution confidence{ConfidenceDistribution::Kind::uniform, -1.0, 1.0};
  std::uint64_t seed = 0;
  double logit_offset = 0.0;

  void validate() const;
};

struct SyntheticDraw {
  std::vector<double> logits;
  std::size_t gold_index;
  double target_confidence;
};

/// Simulated multiple-choice model with known calibration.
///
/// Each draw picks a target confidence c, emits logits whose softmax maximum
/// is exactly c (top: ln c, others: ln((1-c)/(K-1)), all times `scale`), and
/// places the gold option on top with probability g(c). With scale s != 1,
/// dividing the logits by T = s restores the calibrated confidences.
///
/// As a client, the gold option is read from the payload's "gold_index" tag;
/// the draw is seeded from (seed, prompt text, tags) so identical requests
/// get identical answers regardless of call order.
class SyntheticModel : public ModelClient {
 public:
  explicit SyntheticModel(SyntheticModelSpec spec, double scale = 1.0);

  const SyntheticModelSpec& spec() const { return spec_; }
  double scale() const { return scale_; }

  SyntheticDraw draw(std::mt19937_64& rng, std::size_t gold_index) const;
  SyntheticDraw draw(std::mt19937_64& rng) const;  // gold uniform over K

  // n labeled records (ids "syn-0".."syn-<n-1>"), reproducible from spec().seed.
  std::vector<ResponseRecord> generate_records(std::size_t n, const std::string& model_id = "synthetic") const;

 protected:
  std::vector<double> do_query_options(const PromptPayload& payload, std::span<const std::string> options) override;
  std::vector<std::string> do_sample_answers(const PromptPayload& payload, std::size_t n, double temperature,
                                             double top_p) override;

 private:
  double draw_confidence(std::mt19937_64& rng) const;
  std::mt19937_64 payload_rng(const PromptPayload& payload) const;
  std::size_t gold_from(const PromptPayload& payload) const;

  SyntheticModelSpec spec_;
  double scale_;
};

SyntheticModel synthetic_model(const SyntheticModelSpec& spec);
SyntheticModel scaled_synthetic(const SyntheticModelSpec& spec, double scale);

}  // namespace calkit
