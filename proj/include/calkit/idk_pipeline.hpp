#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/model_client.hpp"
#include "calkit/record_store.hpp"

namespace calkit {

struct Trial {
  std::string answer;
  bool correct = false;
  bool failed = false;  // the client never produced an answer for this trial
};

struct TrialSet {
  std::string record_id;
  std::vector<Trial> trials;

  std::size_t n_trials() const { return trials.size(); }
};

enum class Knowledge { ik, idk };

struct KnowledgeLabel {
  Knowledge label = Knowledge::idk;
  double trial_accuracy = 0.0;
  double threshold = 1.0;
};

std::string_view to_string(Knowledge k);

// IK iff (correct trials / n_trials) >= threshold. Failed trials count as wrong.
KnowledgeLabel segment_known(const TrialSet& trials, double threshold = 1.0);

// Trials recorded on a logged record's samples (each needs `correct`).
TrialSet trials_from_record(const ResponseRecord& record);

const std::vector<std::string>& default_refusal_phrases();

// True iff a (normalized) phrase occurs in the normalized answer.
bool detect_refusal(std::string_view answer, std::span<const std::string> phrases = default_refusal_phrases());

/// Quadrant names are <behaviour>-<knowledge>: the first token says whether the
/// model's behaviour matched its knowledge, the second is the ground truth.
enum class Quadrant { ik_idk, idk_idk, ik_ik, idk_ik };

std::string_view to_string(Quadrant q);
Quadrant classify_quadrant(const KnowledgeLabel& knowledge, bool refused);

/// Tallies of the four cells. OOD data has no IK ground truth, so its
/// ik_ik / idk_ik cells are absent rather than zero.
struct QuadrantCounts {
  std::size_t ik_idk = 0;
  std::size_t idk_idk = 0;
  std::optional<std::size_t> ik_ik = 0;
  std::optional<std::size_t> idk_ik = 0;

  static QuadrantCounts ood(std::size_t ik_idk, std::size_t idk_idk);
  bool is_ood() const { return !ik_ik.has_value(); }
  std::size_t total() const;
  void add(Quadrant q);
};

double truthful_score(const QuadrantCounts& counts);

// Multiple-choice correctness: normalized exact match on the option letter or the option text.
bool mc_answer_matches(const ResponseRecord& record, std::string_view answer);

using CorrectnessJudge = std::function<bool(const ResponseRecord&, std::string_view answer)>;

struct TrialOptions {
  std::size_t n = 10;
  double temperature = 1.0;
  double top_p = 0.95;
  int retries = 2;
  std::size_t jobs = 1;
  std::string instruction;  // empty -> form default
};

struct RecordFailure {
  std::string record_id;
  std::string message;
};

struct TrialRun {
  std::vector<TrialSet> trial_sets;  // sorted by record_id
  std::vector<RecordFailure> failures;
};

/// Asks `client` each question n times (one completion per call so a failing
/// call costs one trial). A record whose trials all fail is reported in
/// `failures` instead of producing a TrialSet. Open-ended records need `judge`.
TrialRun run_trials(std::span<const ResponseRecord> records, ModelClient& client, const TrialOptions& options = {},
                    const CorrectnessJudge& judge = {});

// JSONL, one line per trial, sorted by (record_id, trial_index).
void write_trials_jsonl(std::ostream& out, std::span<const TrialSet> trial_sets);
std::vector<TrialSet> read_trials_jsonl(std::istream& in);

// --- OOD multiple-choice construction ---------------------------------------

struct Article {
  std::string id;
  std::string text;
  std::string image_ref;
};

struct OodMcqItem {
  std::string id;
  std::string question;
  std::array<std::string, 4> options;
  std::size_t answer_index = 0;
  std::string image_ref;
  std::string source_article_id;
};

struct OodBuild {
  std::vector<OodMcqItem> items;
  std::vector<std::string> rejected;  // one validation message per dropped candidate
};

Article article_from_json(const Json& obj);
std::string ood_generation_prompt(const Article& article, std::size_t k_questions);

// Extracts MCQ candidates from generator text (JSON array or JSON lines,
// optionally fenced) and validates each one.
OodBuild parse_generated_mcqs(std::string_view generator_text, const Article& article, std::size_t k_questions);

OodBuild build_ood_mcq(const Article& article, ModelClient& generator, std::size_t k_questions);

Json ood_item_to_json(const OodMcqItem& item);

}  // namespace calkit
