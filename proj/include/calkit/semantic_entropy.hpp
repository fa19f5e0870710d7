#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/model_client.hpp"

namespace calkit {

/// Lowercase, collapse whitespace, drop terminal punctuation and leading
/// articles (a/an/the). Repeats until nothing changes, so it is idempotent.
std::string normalize_answer(std::string_view text);

struct AnswerCluster {
  std::string representative;
  std::vector<std::size_t> members;
};

struct ClusterPartition {
  std::vector<AnswerCluster> clusters;
  std::size_t total = 0;

  std::vector<std::size_t> sizes() const;
};

class EquivalenceJudge {
 public:
  enum class Kind { normalized_exact, client_judged };

  static EquivalenceJudge normalized_exact();
  // Asks `client` whether two answers mean the same thing; a reply starting
  // with "yes" counts as equivalent.
  static EquivalenceJudge client_judged(std::shared_ptr<ModelClient> client, std::string question = {});

  Kind kind() const { return kind_; }
  bool equivalent(std::string_view a, std::string_view b) const;

 private:
  EquivalenceJudge(Kind kind, std::shared_ptr<ModelClient> client, std::string question);

  Kind kind_;
  std::shared_ptr<ModelClient> client_;
  std::string question_;
};

std::string equivalence_prompt(std::string_view question, std::string_view a, std::string_view b);

/// Greedy single pass: each sample joins the first cluster whose
/// representative it is equivalent to, else founds a new one.
ClusterPartition cluster_samples(std::span<const std::string> samples, const EquivalenceJudge& judge);

// Entropy of the cluster mass fractions, in nats.
double semantic_entropy(const ClusterPartition& partition);
double semantic_entropy(std::span<const std::size_t> cluster_sizes);

}  // namespace calkit
