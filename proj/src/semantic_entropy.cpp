#include "calkit/semantic_entropy.hpp"

#include <cctype>
#include <cmath>

#include "calkit/errors.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

constexpr std::string_view kTerminalPunct = ".,!?;:";

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string s(text);
  // typographic apostrophe U+2019 -> '
  for (std::size_t pos; (pos = s.find("\xE2\x80\x99")) != std::string::npos;) s.replace(pos, 3, "'");
  s = collapse_whitespace(to_lower_ascii(s));

  bool changed = true;
  while (changed) {
    changed = false;
    while (!s.empty() && kTerminalPunct.find(s.back()) != std::string_view::npos) {
      s.pop_back();
      changed = true;
    }
    if (!s.empty() && s.back() == ' ') {
      s.pop_back();
      changed = true;
    }
    for (std::string_view article : {"a ", "an ", "the "}) {
      if (s.size() > article.size() && s.compare(0, article.size(), article) == 0) {
        s.erase(0, article.size());
        changed = true;
        break;
      }
    }
  }
  return s;
}

std::vector<std::size_t> ClusterPartition::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back(c.members.size());
  return out;
}

EquivalenceJudge::EquivalenceJudge(Kind kind, std::shared_ptr<ModelClient> client, std::string question)
    : kind_(kind), client_(std::move(client)), question_(std::move(question)) {}

EquivalenceJudge EquivalenceJudge::normalized_exact() { return {Kind::normalized_exact, nullptr, {}}; }

EquivalenceJudge EquivalenceJudge::client_judged(std::shared_ptr<ModelClient> client, std::string question) {
  if (!client) throw DomainError("client-judged equivalence requires a live client");
  return {Kind::client_judged, std::move(client), std::move(question)};
}

std::string equivalence_prompt(std::string_view question, std::string_view a, std::string_view b) {
  std::string p;
  if (!question.empty()) p += "Question: " + std::string(question) + "\n";
  p += "Answer 1: " + std::string(a) + "\nAnswer 2: " + std::string(b) +
       "\nDo these two answers mean the same thing? Reply with yes or no.";
  return p;
}

bool EquivalenceJudge::equivalent(std::string_view a, std::string_view b) const {
  if (kind_ == Kind::normalized_exact) return normalize_answer(a) == normalize_answer(b);
  PromptPayload payload{equivalence_prompt(question_, a, b),
                        std::nullopt,
                        {{"purpose", "equivalence"}, {"answer_a", std::string(a)}, {"answer_b", std::string(b)}}};
  const auto reply = client_->sample_answers(payload, 1, 1.0, 1.0);
  return normalize_answer(reply.front()).rfind("yes", 0) == 0;
}

ClusterPartition cluster_samples(std::span<const std::string> samples, const EquivalenceJudge& judge) {
  if (samples.empty()) throw EmptyInputError("no samples to cluster");
  ClusterPartition p;
  p.total = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool placed = false;
    for (auto& cluster : p.clusters) {
      bool same = false;
      try {
        same = judge.equivalent(cluster.representative, samples[i]);
      } catch (const ClientError& e) {
        throw ClientError("equivalence judge failed on sample " + std::to_string(i) + ": " + e.what());
      }
      if (same) {
        cluster.members.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) p.clusters.push_back({samples[i], {i}});
  }
  return p;
}

double semantic_entropy(std::span<const std::size_t> sizes) {
  std::size_t total = 0;
  for (auto n : sizes) total += n;
  if (total == 0) throw EmptyInputError("semantic entropy of an empty partition");
  const double t = static_cast<double>(total);
  double h = 0.0;
  for (auto n : sizes) {
    if (n == 0) continue;
    const double p = static_cast<double>(n) / t;
    h -= p * std::log(p);
  }
  return h;
}

double semantic_entropy(const ClusterPartition& partition) {
  const auto sizes = partition.sizes();
  return semantic_entropy(sizes);
}

}  // namespace calkit
