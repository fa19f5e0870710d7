#include "calkit/prompt_opt.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/prompts.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size()))
    text.replace(pos, from.size(), to);
  return text;
}

// First non-empty line, without surrounding whitespace or quotes.
std::string clean_variant(std::string_view raw) {
  std::string line;
  for (const auto& l : split(raw, '\n')) {
    line = trim(l);
    if (!line.empty()) break;
  }
  while (line.size() >= 2 && (line.front() == '"' || line.front() == '\'') && line.back() == line.front())
    line = trim(line.substr(1, line.size() - 2));
  return line;
}

struct Evaluated {
  std::vector<SuffixCandidate> ok;
  std::vector<std::string> failed;
};

Evaluated evaluate_all(std::vector<SuffixCandidate> pending, SuffixEvaluator& evaluator, std::size_t jobs) {
  std::vector<std::optional<SuffixScore>> scores(pending.size());
  parallel_for(pending.size(), jobs, [&](std::size_t i) {
    try {
      scores[i] = evaluator.evaluate(pending[i].text);
    } catch (const ClientError&) {
    } catch (const DomainError&) {
    }
  });
  Evaluated out;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (!scores[i]) {
      out.failed.push_back(pending[i].text);
      continue;
    }
    pending[i].accuracy = scores[i]->accuracy;
    pending[i].ece = scores[i]->ece;
    out.ok.push_back(std::move(pending[i]));
  }
  return out;
}

}  // namespace

void OptParams::validate() const {
  if (k == 0 || m == 0 || n == 0) throw DomainError("k, m and n must all be >= 1");
  if (!(band_width > 0.0) || !std::isfinite(band_width)) throw DomainError("band width must be > 0");
}

std::string normalize_suffix(std::string_view suffix) {
  std::string out;
  bool space = false;
  for (const char ch : to_lower_ascii(suffix)) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += ch;
  }
  return out;
}

std::string paraphrase_prompt(std::string_view suffix, std::string_view templ) {
  return replace_all(std::string(templ), "{suffix}", suffix);
}

std::vector<std::string> generate_variants(std::string_view suffix, std::size_t m, ModelClient& generator,
                                           std::set<std::string>& seen, std::string_view templ) {
  if (m == 0) throw DomainError("m must be >= 1");
  PromptPayload p;
  p.text = paraphrase_prompt(suffix, templ);
  p.tags["suffix"] = std::string(suffix);
  std::vector<std::string> out;
  for (const auto& raw : generator.sample_answers(p, m, 1.0, 0.95)) {
    std::string v = clean_variant(raw);
    const std::string key = normalize_suffix(v);
    if (key.empty() || !seen.insert(key).second) continue;
    out.push_back(std::move(v));
    if (out.size() == m) break;
  }
  return out;
}

SuffixEvaluator::SuffixEvaluator(std::vector<ResponseRecord> records, ModelClient& client, int retries)
    : records_(std::move(records)), client_(client), retries_(retries) {
  if (records_.empty()) throw EmptyInputError("suffix evaluation needs at least one record");
  std::uint64_t h = fnv1a64("calkit-eval");
  for (const auto& r : records_) {
    if (!r.options || r.options->empty() || !r.gold_index)
      throw ValidationError("options", "eval record " + r.id + " needs options and a gold index");
    h = hash_combine(h, fnv1a64(serialize_record(r)));
  }
  fingerprint_ = h;
}

SuffixScore SuffixEvaluator::evaluate(const std::string& suffix) {
  const auto key = std::make_pair(suffix, fingerprint_);
  {
    std::lock_guard lock(mutex_);
    if (const auto it = cache_.find(key); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  std::vector<PredictionPoint> points;
  points.reserve(records_.size());
  for (const auto& r : records_) {
    PromptPayload p = question_prompt(r, suffix);
    p.tags["suffix"] = suffix;
    std::vector<double> logits;
    for (int attempt = 0;; ++attempt) {
      {
        std::lock_guard lock(mutex_);
        ++queries_;
      }
      try {
        logits = client_.query_options(p, *r.options);
        break;
      } catch (const ClientError&) {
        if (attempt >= retries_) throw;
      }
    }
    const OptionConfidence oc = confidence_of(logits);
    points.push_back({oc.confidence, oc.predicted_index == *r.gold_index});
  }
  const CalibrationSummary s = summarize_points(points, 10);
  const SuffixScore score{s.accuracy, s.ece};
  std::lock_guard lock(mutex_);
  cache_.emplace(key, score);
  return score;
}

std::size_t SuffixEvaluator::model_queries() const {
  std::lock_guard lock(mutex_);
  return queries_;
}

std::size_t SuffixEvaluator::cache_hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::size_t SuffixEvaluator::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

std::int64_t accuracy_band(double accuracy, double band_width) {
  // the epsilon keeps 0.80 / 0.02 in band 40 despite binary rounding
  return static_cast<std::int64_t>(std::floor(accuracy / band_width + 1e-9));
}

bool ranks_ahead(const SuffixCandidate& a, const SuffixCandidate& b, double band_width) {
  const auto ba = accuracy_band(a.accuracy, band_width);
  const auto bb = accuracy_band(b.accuracy, band_width);
  if (ba != bb) return ba > bb;
  return a.ece < b.ece;
}

std::vector<SuffixCandidate> rank_candidates(std::vector<SuffixCandidate> candidates, double band_width) {
  if (!(band_width > 0.0)) throw DomainError("band width must be > 0");
  std::stable_sort(candidates.begin(), candidates.end(), [&](const SuffixCandidate& a, const SuffixCandidate& b) {
    if (ranks_ahead(a, b, band_width)) return true;
    if (ranks_ahead(b, a, band_width)) return false;
    return a.text < b.text;
  });
  return candidates;
}

OptState optimize(std::span<const std::string> seeds, const OptParams& params, SuffixEvaluator& evaluator,
                  ModelClient& generator, std::string_view templ) {
  params.validate();
  if (seeds.empty()) throw EmptyInputError("prompt optimization needs at least one seed");

  OptState state;
  state.params = params;
  std::set<std::string> seen;
  std::vector<SuffixCandidate> pending;
  for (const auto& s : seeds) {
    const std::string t = trim(s);
    if (t.empty() || !seen.insert(normalize_suffix(t)).second) continue;
    pending.push_back({t, 0.0, 0.0, 0, std::nullopt});
  }
  if (pending.empty()) throw EmptyInputError("all seeds are blank or duplicates");

  auto keep_top = [&](std::vector<SuffixCandidate> pool) {
    pool = rank_candidates(std::move(pool), params.band_width);
    if (pool.size() > params.k) pool.resize(params.k);
    return pool;
  };

  IterationRecord rec;
  rec.iteration = 0;
  rec.generated = pending.size();
  Evaluated ev = evaluate_all(std::move(pending), evaluator, params.jobs);
  rec.evaluated = ev.ok.size();
  rec.failed = ev.failed;
  if (ev.ok.empty()) {
    state.aborted = true;
    state.abort_reason = "every seed evaluation failed";
    state.history.push_back(std::move(rec));
    return state;
  }
  state.G = keep_top(std::move(ev.ok));
  state.best = state.G.front();
  rec.best = state.best;
  rec.top_k = state.G;
  state.history.push_back(std::move(rec));

  for (std::size_t it = 1; it <= params.n; ++it) {
    IterationRecord r;
    r.iteration = it;
    std::vector<SuffixCandidate> fresh;
    for (const auto& p : state.G) {
      for (auto& v : generate_variants(p.text, params.m, generator, seen, templ))
        fresh.push_back({std::move(v), 0.0, 0.0, it, p.text});
    }
    r.generated = fresh.size();
    if (fresh.empty()) {
      r.drought = true;
      state.G = keep_top(std::move(state.G));
    } else {
      Evaluated e = evaluate_all(std::move(fresh), evaluator, params.jobs);
      r.evaluated = e.ok.size();
      r.failed = e.failed;
      if (e.ok.empty()) {
        state.aborted = true;
        state.abort_reason = "every evaluation in iteration " + std::to_string(it) + " failed";
        r.best = state.best;
        r.top_k = state.G;
        state.history.push_back(std::move(r));
        return state;
      }
      state.G = keep_top(std::move(e.ok));
    }
    if (ranks_ahead(state.G.front(), state.best, params.band_width)) state.best = state.G.front();
    r.best = state.best;
    r.top_k = state.G;
    state.history.push_back(std::move(r));
  }
  return state;
}

Json candidate_to_json(const SuffixCandidate& c) {
  Json j{{"text", c.text}, {"accuracy", c.accuracy}, {"ece", c.ece}, {"generation", c.generation}};
  j["parent"] = c.parent ? Json(*c.parent) : Json(nullptr);
  return j;
}

Json trace_json(const OptState& state) {
  Json j;
  j["params"] = {{"k", state.params.k},
                 {"m", state.params.m},
                 {"n", state.params.n},
                 {"band_width", state.params.band_width}};
  j["best"] = state.history.empty() || state.history.front().top_k.empty() ? Json(nullptr)
                                                                           : candidate_to_json(state.best);
  j["aborted"] = state.aborted;
  if (state.aborted) j["abort_reason"] = state.abort_reason;
  j["iterations"] = Json::array();
  for (const auto& r : state.history) {
    Json it{{"iteration", r.iteration},
            {"generated", r.generated},
            {"evaluated", r.evaluated},
            {"drought", r.drought},
            {"failed", r.failed}};
    it["best"] = r.top_k.empty() ? Json(nullptr) : candidate_to_json(r.best);
    it["top_k"] = Json::array();
    for (const auto& c : r.top_k) it["top_k"].push_back(candidate_to_json(c));
    j["iterations"].push_back(std::move(it));
  }
  return j;
}

}  // namespace calkit
