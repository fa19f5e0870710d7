#include <cmath>

#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/prompt_opt.hpp"
#include "calkit/prompts.hpp"
#include "calkit/synthetic_model.hpp"
#include "doctest.h"
#include "paraphrase_graph.hpp"

using namespace calkit;

namespace {

SuffixCandidate cand(std::string text, double acc, double ece) { return {std::move(text), acc, ece, 0, std::nullopt}; }

FunctionClient graph_eval() { return FunctionClient(graph::eval_logits, nullptr); }
FunctionClient graph_gen() {
  return FunctionClient(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    return graph::paraphrases(p, n);
  });
}

}  // namespace

TEST_CASE("variants: novel, cleaned, in order") {
  FunctionClient gen(nullptr, [](const PromptPayload&, std::size_t n, double, double) {
    const std::vector<std::string> cycle{"v1", "\"v2\"", "\n  V3 \nextra"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(cycle[i % cycle.size()]);
    return out;
  });
  std::set<std::string> seen;
  CHECK(generate_variants("Answer:", 5, gen, seen) == std::vector<std::string>{"v1", "v2", "V3"});
  CHECK(seen.size() == 3);
  CHECK(generate_variants("Answer:", 5, gen, seen).empty());
  std::set<std::string> fresh;
  CHECK(generate_variants("Answer:", 1, gen, fresh).size() == 1);
  CHECK_THROWS_AS(generate_variants("Answer:", 0, gen, fresh), DomainError);
  CHECK(paraphrase_prompt("Answer:").find("\"Answer:\"") != std::string::npos);
  CHECK(normalize_suffix("  Final   ANSWER: ") == "final answer:");
}

TEST_CASE("evaluator: suffix-invariant model scores every suffix the same") {
  SyntheticModelSpec spec;
  spec.seed = 3;
  const auto records = synthetic_model(spec).generate_records(200);
  FunctionClient client([&](const PromptPayload& p, std::span<const std::string>) {
    const auto id = *p.tag("record_id");
    for (const auto& r : records)
      if (r.id == id) return *r.option_logits;
    throw CapabilityError("unknown record");
  },
                        nullptr);
  SuffixEvaluator ev(records, client);
  const auto a = ev.evaluate("Answer:");
  const auto b = ev.evaluate("Reply:");
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.ece == b.ece);
  CHECK(a.ece == doctest::Approx(summarize(records).ece).epsilon(1e-12));
}

TEST_CASE("evaluator: keyword-sharpened model matches direct metrics") {
  SyntheticModelSpec spec;
  spec.seed = 6;
  const auto records = synthetic_model(spec).generate_records(300);
  auto sharpen = [](const std::string& suffix) { return suffix.find("sure") != std::string::npos ? 2.5 : 1.0; };
  FunctionClient client([&](const PromptPayload& p, std::span<const std::string>) {
    const auto idx = std::stoul(p.tag("record_id")->substr(4));
    auto l = *records[idx].option_logits;
    for (auto& v : l) v *= sharpen(*p.tag("suffix"));
    return l;
  },
                        nullptr);
  SuffixEvaluator ev(records, client);
  for (const std::string suffix : {"Answer:", "Be sure. Answer:"}) {
    std::vector<PredictionPoint> pts;
    for (const auto& r : records) {
      auto l = *r.option_logits;
      for (auto& v : l) v *= sharpen(suffix);
      const auto c = confidence_of(l);
      pts.push_back({c.confidence, c.predicted_index == *r.gold_index});
    }
    const auto direct = summarize_points(pts, 10);
    const auto score = ev.evaluate(suffix);
    CHECK(score.ece == direct.ece);
    CHECK(score.accuracy == direct.accuracy);
  }
  CHECK(ev.evaluate("Be sure. Answer:").ece > ev.evaluate("Answer:").ece);
}

TEST_CASE("evaluator: cache hits cost no model calls; failures are not cached") {
  auto client = graph_eval();
  SuffixEvaluator ev(graph::eval_records(), client);
  ev.evaluate("Answer:");
  const auto calls = client.option_calls();
  CHECK(calls == graph::kRecords);
  const auto again = ev.evaluate("Answer:");
  CHECK(client.option_calls() == calls);
  CHECK(ev.cache_hits() == 1);
  CHECK(again.ece == doctest::Approx(0.20).epsilon(1e-9));
  CHECK(again.accuracy == doctest::Approx(0.70));
  CHECK_THROWS_AS(ev.evaluate("nonsense"), CapabilityError);
  CHECK(ev.cache_size() == 1);

  CHECK_THROWS_AS(SuffixEvaluator({}, client), EmptyInputError);
  ResponseRecord open;
  open.id = "o";
  open.question = "q";
  CHECK_THROWS_AS(SuffixEvaluator({open}, client), ValidationError);
}

TEST_CASE("ranking hand example and ties") {
  const auto ranked = rank_candidates({cand("c", 0.76, 0.01), cand("b", 0.81, 0.10), cand("a", 0.80, 0.04)}, 0.02);
  CHECK(ranked[0].text == "a");
  CHECK(ranked[1].text == "b");
  CHECK(ranked[2].text == "c");
  CHECK(accuracy_band(0.80, 0.02) == 40);
  CHECK(accuracy_band(0.81, 0.02) == 40);
  CHECK(accuracy_band(0.76, 0.02) == 38);

  const auto tied = rank_candidates({cand("zeta", 0.5, 0.1), cand("alpha", 0.5, 0.1)}, 0.02);
  CHECK(tied[0].text == "alpha");
  CHECK_FALSE(ranks_ahead(tied[0], tied[1], 0.02));
  CHECK_FALSE(ranks_ahead(tied[1], tied[0], 0.02));
  CHECK_THROWS_AS(rank_candidates({}, 0.0), DomainError);
}

TEST_CASE("optimize finds the optimum two hops away, with a monotone best") {
  auto eval_client = graph_eval();
  auto gen = graph_gen();
  SuffixEvaluator ev(graph::eval_records(), eval_client);
  OptParams p;
  p.k = 3;
  p.m = 3;
  p.n = 5;
  p.jobs = 2;
  const std::vector<std::string> seeds{"Answer:", "Final answer:"};
  const auto st = optimize(seeds, p, ev, gen);
  CHECK_FALSE(st.aborted);
  CHECK(st.best.text == graph::kOptimum);
  CHECK(st.best.generation == 2);
  CHECK(*st.best.parent == "Your answer:");
  REQUIRE(st.history.size() == 6);
  for (std::size_t i = 1; i < st.history.size(); ++i)
    CHECK_FALSE(ranks_ahead(st.history[i - 1].best, st.history[i].best, p.band_width));
  CHECK(st.history[1].best.text == "Your answer:");
  CHECK(st.history[4].drought);
  for (const auto& rec : st.history) CHECK(rec.top_k.size() <= 3);
  // "The answer is" has low ECE but a lower accuracy band
  for (const auto& c : st.history[1].top_k) CHECK(c.text != "The answer is");

  const Json trace = trace_json(st);
  CHECK(trace.at("best").at("text") == graph::kOptimum);
  CHECK(trace.at("iterations").size() == 6);
}

TEST_CASE("optimize: k = 1 keeps a single prompt") {
  auto eval_client = graph_eval();
  auto gen = graph_gen();
  SuffixEvaluator ev(graph::eval_records(), eval_client);
  OptParams p;
  p.k = 1;
  p.m = 3;
  p.n = 3;
  const std::vector<std::string> seeds{"Answer:", "Final answer:"};
  const auto st = optimize(seeds, p, ev, gen);
  for (const auto& rec : st.history) CHECK(rec.top_k.size() == 1);
  CHECK(st.best.text == graph::kOptimum);
}

TEST_CASE("optimize: suffix-invariant model keeps the lexicographically first seed") {
  FixedLogitsClient flat({1, 0.5, 0, 0});
  auto gen = graph_gen();
  SuffixEvaluator ev(graph::eval_records(), flat);
  OptParams p;
  p.k = 2;
  p.m = 3;
  p.n = 3;
  const std::vector<std::string> seeds{"Final answer:", "Answer:"};
  const auto st = optimize(seeds, p, ev, gen);
  CHECK(st.best.text == "Answer:");
  CHECK(st.best.generation == 0);
}

TEST_CASE("optimize: drought when nothing novel comes back") {
  auto eval_client = graph_eval();
  FunctionClient parrot(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    return std::vector<std::string>(n, *p.tag("suffix"));
  });
  SuffixEvaluator ev(graph::eval_records(), eval_client);
  OptParams p;
  p.n = 2;
  const std::vector<std::string> seeds{"Answer:", "Final answer:"};
  const auto st = optimize(seeds, p, ev, parrot);
  CHECK(st.history[1].drought);
  CHECK(st.history[2].drought);
  CHECK(st.best.text == "Answer:");
  CHECK(ev.cache_size() == 2);
}

TEST_CASE("optimize: aborts when every evaluation fails, keeping the history") {
  FunctionClient down([](const PromptPayload&, std::span<const std::string>) -> std::vector<double> {
    throw TransportError("down");
  },
                      nullptr);
  auto gen = graph_gen();
  SuffixEvaluator ev(graph::eval_records(), down, 0);
  const std::vector<std::string> seeds{"Answer:"};
  const auto st = optimize(seeds, OptParams{}, ev, gen);
  CHECK(st.aborted);
  REQUIRE(st.history.size() == 1);
  CHECK(st.history[0].failed == std::vector<std::string>{"Answer:"});

  // seeds evaluate, every generated suffix fails
  FunctionClient seeds_only([](const PromptPayload& p, std::span<const std::string>) {
    if (*p.tag("suffix") != "Answer:") throw TransportError("down");
    return graph::eval_logits(p);
  },
                            nullptr);
  SuffixEvaluator ev2(graph::eval_records(), seeds_only, 0);
  const auto st2 = optimize(seeds, OptParams{}, ev2, gen);
  CHECK(st2.aborted);
  CHECK(st2.history.size() == 2);
  CHECK(st2.best.text == "Answer:");
  CHECK(st2.history[1].failed.size() == 3);

  OptParams bad;
  bad.k = 0;
  CHECK_THROWS_AS(optimize(seeds, bad, ev, gen), DomainError);
  CHECK_THROWS_AS(optimize(std::vector<std::string>{" "}, OptParams{}, ev, gen), EmptyInputError);
}
