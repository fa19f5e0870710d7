#include "calkit/synthetic_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "calkit/errors.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

std::vector<double> parse_params(std::string_view text, std::size_t expected, std::string_view what) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw DomainError("bad parameter '" + part + "' in " + std::string(what));
    }
  }
  if (out.size() != expected)
    throw DomainError(std::string(what) + " expects " + std::to_string(expected) + " parameter(s)");
  return out;
}

std::pair<std::string_view, std::string_view> split_head(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) return {text, {}};
  return {text.substr(0, colon), text.substr(colon + 1)};
}

}  // namespace

double AccuracyCurve::operator()(double c) const {
  double v = c;
  switch (kind) {
    case Kind::identity: v = c; break;
    case Kind::power: v = std::pow(c, a); break;
    case Kind::affine: v = a * c + b; break;
  }
  return std::clamp(v, 0.0, 1.0);
}

AccuracyCurve AccuracyCurve::parse(std::string_view text) {
  const auto [head, params] = split_head(text);
  if (head == "identity") return {};
  if (head == "power") {
    const auto p = parse_params(params, 1, "power");
    if (!(p[0] > 0.0)) throw DomainError("power exponent must be > 0");
    return {Kind::power, p[0], 0.0};
  }
  if (head == "affine") {
    const auto p = parse_params(params, 2, "affine");
    return {Kind::affine, p[0], p[1]};
  }
  throw DomainError("unknown accuracy curve: " + std::string(text));
}

std::string AccuracyCurve::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::identity: os << "identity"; break;
    case Kind::power: os << "power:" << a; break;
    case Kind::affine: os << "affine:" << a << "," << b; break;
  }
  return os.str();
}

ConfidenceDistribution ConfidenceDistribution::parse(std::string_view text) {
  const auto [head, params] = split_head(text);
  if (head == "uniform") {
    if (params.empty()) return {Kind::uniform, -1.0, 1.0};
    const auto p = parse_params(params, 2, "uniform");
    return {Kind::uniform, p[0], p[1]};
  }
  if (head == "fixed") return {Kind::fixed, parse_params(params, 1, "fixed")[0], 0.0};
  if (head == "beta") {
    const auto p = parse_params(params, 2, "beta");
    return {Kind::beta, p[0], p[1]};
  }
  throw DomainError("unknown confidence distribution: " + std::string(text));
}

std::string ConfidenceDistribution::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::uniform:
      if (p1 < 0.0) os << "uniform";
      else os << "uniform:" << p1 << "," << p2;
      break;
    case Kind::fixed: os << "fixed:" << p1; break;
    case Kind::beta: os << "beta:" << p1 << "," << p2; break;
  }
  return os.str();
}

void SyntheticModelSpec::validate() const {
  if (option_count == 0) throw DomainError("synthetic model needs K >= 1");
  const double floor = 1.0 / static_cast<double>(option_count);
  switch (confidence.kind) {
    case ConfidenceDistribution::Kind::uniform:
      if (confidence.p1 >= 0.0 && (confidence.p1 < floor || confidence.p2 > 1.0 || confidence.p1 >= confidence.p2))
        throw DomainError("uniform confidence support must lie within [1/K, 1]");
      break;
    case ConfidenceDistribution::Kind::fixed:
      if (option_count > 1 && (confidence.p1 <= floor || confidence.p1 > 1.0))
        throw DomainError("fixed confidence must lie in (1/K, 1]");
      break;
    case ConfidenceDistribution::Kind::beta:
      if (!(confidence.p1 > 0.0 && confidence.p2 > 0.0)) throw DomainError("beta parameters must be > 0");
      break;
  }
}

SyntheticModel::SyntheticModel(SyntheticModelSpec spec, double scale) : spec_(std::move(spec)), scale_(scale) {
  spec_.validate();
  if (!(scale_ > 0.0) || !std::isfinite(scale_)) throw DomainError("logit scale must be > 0");
}

double SyntheticModel::draw_confidence(std::mt19937_64& rng) const {
  const double k = static_cast<double>(spec_.option_count);
  const double floor = 1.0 / k;
  const auto& d = spec_.confidence;
  double c = 0.0;
  switch (d.kind) {
    case ConfidenceDistribution::Kind::uniform: {
      const double lo = d.p1 < 0.0 ? floor : d.p1;
      c = std::uniform_real_distribution<double>(lo, d.p2)(rng);
      break;
    }
    case ConfidenceDistribution::Kind::fixed: c = d.p1; break;
    case ConfidenceDistribution::Kind::beta: {
      const double x = std::gamma_distribution<double>(d.p1, 1.0)(rng);
      const double y = std::gamma_distribution<double>(d.p2, 1.0)(rng);
      c = floor + (1.0 - floor) * x / (x + y);
      break;
    }
  }
  // keep every non-top logit finite and the top strictly above the rest
  const double eps = 1e-12;
  return std::clamp(c, floor + eps, 1.0 - eps);
}

SyntheticDraw SyntheticModel::draw(std::mt19937_64& rng, std::size_t gold) const {
  const std::size_t k = spec_.option_count;
  if (gold >= k) throw DomainError("gold index outside the synthetic option set");
  SyntheticDraw out;
  out.gold_index = gold;
  if (k == 1) {
    out.logits = {spec_.logit_offset * scale_};
    out.target_confidence = 1.0;
    return out;
  }
  const double c = draw_confidence(rng);
  out.target_confidence = c;
  std::size_t top = gold;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= spec_.accuracy(c)) {
    // uniformly among the K-1 non-gold options
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, k - 2)(rng);
    top = pick >= gold ? pick + 1 : pick;
  }
  const double hi = std::log(c) + spec_.logit_offset;
  const double lo = std::log((1.0 - c) / static_cast<double>(k - 1)) + spec_.logit_offset;
  out.logits.assign(k, lo * scale_);
  out.logits[top] = hi * scale_;
  return out;
}

SyntheticDraw SyntheticModel::draw(std::mt19937_64& rng) const {
  const std::size_t gold = std::uniform_int_distribution<std::size_t>(0, spec_.option_count - 1)(rng);
  return draw(rng, gold);
}

std::vector<ResponseRecord> SyntheticModel::generate_records(std::size_t n, const std::string& model_id) const {
  std::mt19937_64 rng(spec_.seed);
  std::vector<std::string> options;
  for (std::size_t i = 0; i < spec_.option_count; ++i) options.push_back("option " + option_letter(i));
  std::vector<ResponseRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticDraw d = draw(rng);
    ResponseRecord r;
    r.id = "syn-" + std::to_string(i);
    r.question = "synthetic question " + std::to_string(i);
    r.options = options;
    r.gold_index = d.gold_index;
    r.option_logits = std::move(d.logits);
    r.model_id = model_id;
    r.condition = "scale=" + std::to_string(scale_);
    r.metadata["target_confidence"] = d.target_confidence;
    out.push_back(std::move(r));
  }
  return out;
}

std::mt19937_64 SyntheticModel::payload_rng(const PromptPayload& payload) const {
  std::uint64_t h = hash_combine(spec_.seed, fnv1a64(payload.text));
  for (const auto& [key, value] : payload.tags) h = hash_combine(h, fnv1a64(value, fnv1a64(key)));
  return std::mt19937_64(h);
}

std::size_t SyntheticModel::gold_from(const PromptPayload& payload) const {
  const auto g = payload.tag("gold_index");
  if (!g) throw CapabilityError("synthetic model needs the gold_index tag on the payload");
  return static_cast<std::size_t>(std::stoul(*g));
}

std::vector<double> SyntheticModel::do_query_options(const PromptPayload& payload,
                                                     std::span<const std::string> options) {
  if (options.size() != spec_.option_count)
    throw CapabilityError("synthetic model is configured for K = " + std::to_string(spec_.option_count));
  auto rng = payload_rng(payload);
  return draw(rng, gold_from(payload)).logits;
}

std::vector<std::string> SyntheticModel::do_sample_answers(const PromptPayload& payload, std::size_t n, double,
                                                           double) {
  auto rng = payload_rng(payload);
  const std::size_t gold = gold_from(payload);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SyntheticDraw d = draw(rng, gold);
    const auto top = static_cast<std::size_t>(
        std::max_element(d.logits.begin(), d.logits.end()) - d.logits.begin());
    out.push_back(option_letter(top));
  }
  return out;
}

SyntheticModel synthetic_model(const SyntheticModelSpec& spec) { return SyntheticModel(spec, 1.0); }

SyntheticModel scaled_synthetic(const SyntheticModelSpec& spec, double scale) { return SyntheticModel(spec, scale); }

}  // namespace calkit
