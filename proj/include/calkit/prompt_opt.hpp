#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/model_client.hpp"
#include "calkit/record_store.hpp"

namespace calkit {

struct SuffixCandidate {
  std::string text;
  double accuracy = 0.0;
  double ece = 0.0;
  std::size_t generation = 0;  // 0 for seeds
  std::optional<std::string> parent;
};

struct OptParams {
  std::size_t k = 4;   // prompts kept per iteration
  std::size_t m = 5;   // variants requested per kept prompt
  std::size_t n = 10;  // iterations
  double band_width = 0.02;
  std::size_t jobs = 1;  // concurrent candidate evaluations

  void validate() const;
};

struct IterationRecord {
  std::size_t iteration = 0;  // 0 = seed evaluation
  SuffixCandidate best;       // best seen so far, after this iteration
  std::vector<SuffixCandidate> top_k;
  std::size_t generated = 0;
  std::size_t evaluated = 0;
  std::vector<std::string> failed;  // suffixes whose evaluation failed
  bool drought = false;             // no novel variants; G was only re-ranked
};

struct OptState {
  std::vector<SuffixCandidate> G;
  SuffixCandidate best;
  std::vector<IterationRecord> history;
  OptParams params;
  bool aborted = false;
  std::string abort_reason;
};

// Lowercase, collapsed whitespace, trimmed. Used for the seen-set.
std::string normalize_suffix(std::string_view suffix);

// "{suffix}" is replaced by the suffix being paraphrased.
inline constexpr std::string_view kParaphraseTemplate =
    "Below is a phrase placed right before a model's answer to a multiple-choice question:\n"
    "\"{suffix}\"\n"
    "Write a variation of this phrase that keeps its role but may make the model express its "
    "confidence more honestly. Reply with the new phrase only.";

std::string paraphrase_prompt(std::string_view suffix, std::string_view templ = kParaphraseTemplate);

/// Asks `generator` for m completions of the paraphrase prompt and keeps the
/// novel ones (in order received). Accepted texts are added to `seen`.
std::vector<std::string> generate_variants(std::string_view suffix, std::size_t m, ModelClient& generator,
                                           std::set<std::string>& seen,
                                           std::string_view templ = kParaphraseTemplate);

struct SuffixScore {
  double accuracy = 0.0;
  double ece = 0.0;
};

/// Scores a suffix on a fixed labeled eval set: the suffix closes every
/// record's question prompt, option logits come from `client`, and accuracy
/// plus 10-bin ECE are computed. Results are cached under
/// (suffix, dataset fingerprint); failures are not cached.
class SuffixEvaluator {
 public:
  SuffixEvaluator(std::vector<ResponseRecord> records, ModelClient& client, int retries = 2);

  SuffixScore evaluate(const std::string& suffix);

  std::uint64_t fingerprint() const { return fingerprint_; }
  std::size_t model_queries() const;
  std::size_t cache_hits() const;
  std::size_t cache_size() const;

 private:
  std::vector<ResponseRecord> records_;
  ModelClient& client_;
  int retries_;
  std::uint64_t fingerprint_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::uint64_t>, SuffixScore> cache_;
  std::size_t queries_ = 0;
  std::size_t hits_ = 0;
};

std::int64_t accuracy_band(double accuracy, double band_width);

// True iff a ranks strictly ahead of b on (band desc, ece asc), ignoring text.
bool ranks_ahead(const SuffixCandidate& a, const SuffixCandidate& b, double band_width);

// Band descending, then ECE ascending, then text.
std::vector<SuffixCandidate> rank_candidates(std::vector<SuffixCandidate> candidates, double band_width);

/// Seeds are scored first; each iteration then paraphrases every member of G,
/// scores the new set, keeps its top k as G and updates the running best. The
/// best only changes when a candidate ranks strictly ahead of it, so ties keep
/// the earlier (seed) winner. An iteration with no novel variant re-ranks G.
/// If every evaluation of a set fails the run stops with `aborted` set.
OptState optimize(std::span<const std::string> seeds, const OptParams& params, SuffixEvaluator& evaluator,
                  ModelClient& generator, std::string_view templ = kParaphraseTemplate);

Json candidate_to_json(const SuffixCandidate& c);
Json trace_json(const OptState& state);

}  // namespace calkit
