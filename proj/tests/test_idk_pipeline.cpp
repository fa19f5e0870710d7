#include <random>
#include <sstream>

#include "calkit/errors.hpp"
#include "calkit/idk_pipeline.hpp"
#include "calkit/prompts.hpp"
#include "doctest.h"

using namespace calkit;

namespace {

TrialSet trials_with(std::size_t correct, std::size_t n) {
  TrialSet ts{"r", {}};
  for (std::size_t i = 0; i < n; ++i) ts.trials.push_back({"x", i < correct, false});
  return ts;
}

ResponseRecord mc_record(const std::string& id, std::size_t gold = 1) {
  ResponseRecord r;
  r.id = id;
  r.question = "Which one is a bird?";
  r.options = std::vector<std::string>{"cat", "owl", "dog", "fox"};
  r.gold_index = gold;
  return r;
}

}  // namespace

TEST_CASE("segmentation threshold") {
  CHECK(segment_known(trials_with(10, 10), 1.0).label == Knowledge::ik);
  CHECK(segment_known(trials_with(9, 10), 1.0).label == Knowledge::idk);
  CHECK(segment_known(trials_with(7, 10), 0.7).label == Knowledge::ik);
  CHECK(segment_known(trials_with(6, 10), 0.7).label == Knowledge::idk);
  CHECK(segment_known(trials_with(9, 10), 1.0).trial_accuracy == doctest::Approx(0.9));
  TrialSet failing = trials_with(10, 10);
  failing.trials[3].failed = true;
  failing.trials[3].correct = false;
  CHECK(segment_known(failing).label == Knowledge::idk);
  CHECK_THROWS_AS(segment_known(TrialSet{"e", {}}), EmptyInputError);
  CHECK_THROWS_AS(segment_known(trials_with(1, 1), 1.5), DomainError);
}

TEST_CASE("refusal detection") {
  CHECK(detect_refusal("I don't know."));
  CHECK(detect_refusal("Sorry, I DO NOT KNOW the answer"));
  CHECK(detect_refusal("I don\xE2\x80\x99t know"));
  CHECK(detect_refusal("I cannot determine that from the image"));
  CHECK_FALSE(detect_refusal("B"));
  CHECK_FALSE(detect_refusal("The owl"));
  const std::vector<std::string> custom{"no idea"};
  CHECK(detect_refusal("No idea!", custom));
  CHECK_FALSE(detect_refusal("I don't know", custom));
  CHECK_THROWS_AS(detect_refusal("x", std::vector<std::string>{}), DomainError);
}

TEST_CASE("quadrant mapping") {
  const KnowledgeLabel ik{Knowledge::ik, 1.0, 1.0};
  const KnowledgeLabel idk{Knowledge::idk, 0.2, 1.0};
  CHECK(classify_quadrant(idk, true) == Quadrant::ik_idk);
  CHECK(classify_quadrant(idk, false) == Quadrant::idk_idk);
  CHECK(classify_quadrant(ik, false) == Quadrant::ik_ik);
  CHECK(classify_quadrant(ik, true) == Quadrant::idk_ik);
  CHECK(to_string(Quadrant::idk_ik) == "IDK-IK");

  QuadrantCounts c;
  for (Quadrant q : {Quadrant::ik_idk, Quadrant::ik_ik, Quadrant::ik_ik, Quadrant::idk_idk}) c.add(q);
  CHECK(c.total() == 4);
  CHECK(truthful_score(c) == doctest::Approx(0.75));
  auto ood = QuadrantCounts::ood(1, 1);
  CHECK(ood.is_ood());
  CHECK_THROWS_AS(ood.add(Quadrant::ik_ik), DomainError);
}

TEST_CASE("TRUTHFUL arithmetic") {
  QuadrantCounts never_refuses;
  never_refuses.ik_idk = 0;
  never_refuses.idk_idk = 2292;
  never_refuses.ik_ik = 2085;
  never_refuses.idk_ik = 0;
  CHECK(std::abs(truthful_score(never_refuses) - 2085.0 / 4377.0) < 1e-15);
  CHECK(std::round(truthful_score(never_refuses) * 10000) == 4764);
  CHECK(std::round(truthful_score(QuadrantCounts::ood(61, 939)) * 10000) == 610);
  CHECK(std::round(truthful_score(QuadrantCounts::ood(11990, 8978)) * 10000) == 5718);
  CHECK(std::round(truthful_score(QuadrantCounts::ood(8978, 11990)) * 10000) == 4282);
  CHECK_THROWS_AS(truthful_score(QuadrantCounts{}), EmptyInputError);
}

TEST_CASE("multiple-choice answer matching") {
  const auto r = mc_record("m");
  for (const char* yes : {"B", "b.", "(B)", "owl", "The owl."}) CHECK(mc_answer_matches(r, yes));
  for (const char* no : {"A", "cat", "I don't know", ""}) CHECK_FALSE(mc_answer_matches(r, no));
}

TEST_CASE("run_trials: always-gold model is IK everywhere") {
  std::vector<ResponseRecord> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(mc_record("q" + std::to_string(i), i % 4));
  FunctionClient client(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    const auto gold = std::stoul(*p.tag("gold_index"));
    return std::vector<std::string>(n, option_letter(gold));
  });
  TrialOptions opt;
  opt.jobs = 4;
  const auto run = run_trials(rs, client, opt);
  CHECK(run.failures.empty());
  REQUIRE(run.trial_sets.size() == 20);
  CHECK(client.sample_calls() == 200);
  for (const auto& ts : run.trial_sets) CHECK(segment_known(ts).label == Knowledge::ik);
  CHECK(std::is_sorted(run.trial_sets.begin(), run.trial_sets.end(),
                       [](const TrialSet& a, const TrialSet& b) { return a.record_id < b.record_id; }));
}

TEST_CASE("run_trials: coin-flip model") {
  std::vector<ResponseRecord> rs;
  for (int i = 0; i < 1000; ++i) rs.push_back(mc_record("c" + std::to_string(i)));
  FunctionClient client(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    std::seed_seq seq(p.tags.at("record_id").begin(), p.tags.at("record_id").end());
    std::mt19937_64 rng(seq);
    rng.discard(std::stoul(p.tags.at("trial")) * 7);
    return std::vector<std::string>(n, rng() % 2 ? "B" : "A");
  });
  TrialOptions opt;
  opt.n = 1;
  opt.jobs = 8;
  const auto run = run_trials(rs, client, opt);
  std::size_t ik = 0;
  for (const auto& ts : run.trial_sets) ik += segment_known(ts).label == Knowledge::ik;
  CHECK(std::abs(static_cast<double>(ik) / 1000.0 - 0.5) < 0.05);
}

TEST_CASE("run_trials: failures") {
  std::vector<ResponseRecord> rs{mc_record("ok"), mc_record("dead")};
  FunctionClient client(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    if (p.tags.at("record_id") == "dead") throw TransportError("connection refused");
    if (p.tags.at("trial") == "3") throw PartialResultError("short", {});
    return std::vector<std::string>(n, "B");
  });
  TrialOptions opt;
  opt.n = 5;
  opt.retries = 0;
  const auto run = run_trials(rs, client, opt);
  REQUIRE(run.failures.size() == 1);
  CHECK(run.failures[0].record_id == "dead");
  CHECK(run.failures[0].message.find("connection refused") != std::string::npos);
  REQUIRE(run.trial_sets.size() == 1);
  CHECK(run.trial_sets[0].trials[3].failed);
  CHECK(segment_known(run.trial_sets[0]).label == Knowledge::idk);

  ResponseRecord open;
  open.id = "o";
  open.question = "Name the bird.";
  const std::vector<ResponseRecord> open_only{open};
  CHECK_THROWS_AS(run_trials(open_only, client, opt), DomainError);
  opt.n = 0;
  CHECK_THROWS_AS(run_trials(rs, client, opt), DomainError);
}

TEST_CASE("instruction reaches the prompt") {
  const std::vector<ResponseRecord> rs{mc_record("i")};
  std::string seen;
  FunctionClient client(nullptr, [&](const PromptPayload& p, std::size_t n, double, double) {
    seen = p.text;
    return std::vector<std::string>(n, "I don't know");
  });
  TrialOptions opt;
  opt.n = 1;
  opt.instruction = std::string(kIdkInstruction);
  const auto run = run_trials(rs, client, opt);
  CHECK(seen.find(kIdkInstruction) != std::string::npos);
  CHECK(detect_refusal(run.trial_sets[0].trials[0].answer));
}

TEST_CASE("trial JSONL round trip") {
  std::vector<TrialSet> sets{{"b", {{"B", true, false}, {"", false, true}}}, {"a", {{"A", false, false}}}};
  std::stringstream ss;
  write_trials_jsonl(ss, sets);
  const auto back = read_trials_jsonl(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].record_id == "a");
  CHECK(back[1].trials.size() == 2);
  CHECK(back[1].trials[1].failed);
  CHECK(back[1].trials[0].correct);
  std::stringstream bad("{\"record_id\": \"x\"}\n");
  CHECK_THROWS_AS(read_trials_jsonl(bad), ParseError);
}

TEST_CASE("trials from logged samples") {
  ResponseRecord r = mc_record("s");
  r.samples = std::vector<SampledAnswer>{{"B", true}, {"A", false}};
  const auto ts = trials_from_record(r);
  CHECK(ts.n_trials() == 2);
  CHECK(segment_known(ts, 0.5).label == Knowledge::ik);
}

TEST_CASE("OOD MCQ parsing keeps valid items and reports the rest") {
  const Article art{"news-1", "A storm hit the coast.", "img/storm.png"};
  const std::string text = R"(Here you go:
```json
[
 {"question": "What hit the coast?", "options": ["A storm", "A ship", "A whale", "A plane"], "answer": "A"},
 {"question": "Three options only", "options": ["x", "y", "z"], "answer": "B"},
 {"question": "Where?", "options": ["Coast", "Desert", "Moon", "Lake"], "answer": "Coast"}
]
```)";
  const auto out = parse_generated_mcqs(text, art, 5);
  REQUIRE(out.items.size() == 2);
  CHECK(out.rejected.size() == 1);
  CHECK(out.items[0].answer_index == 0);
  CHECK(out.items[0].id == "news-1-q0");
  CHECK(out.items[0].image_ref == "img/storm.png");
  CHECK(out.items[1].answer_index == 0);
  const Json j = ood_item_to_json(out.items[0]);
  CHECK(j.at("answer") == "A");
  CHECK(j.at("source_article_id") == "news-1");
}

TEST_CASE("OOD build caps at k and fails on nothing usable") {
  const Article art{"n2", "Text.", ""};
  std::string five;
  for (int i = 0; i < 5; ++i)
    five += R"({"question": "Q)" + std::to_string(i) + R"(", "options": ["a","b","c","d"], "answer": 2})" + "\n";
  FunctionClient gen(nullptr, [&](const PromptPayload&, std::size_t n, double, double) {
    return std::vector<std::string>(n, five);
  });
  const auto out = build_ood_mcq(art, gen, 3);
  REQUIRE(out.items.size() == 3);
  CHECK(out.items[2].question == "Q2");

  FunctionClient junk(nullptr, [](const PromptPayload&, std::size_t n, double, double) {
    return std::vector<std::string>(n, "no questions here");
  });
  CHECK_THROWS_AS(build_ood_mcq(art, junk, 3), EmptyInputError);
  CHECK_THROWS_AS(build_ood_mcq(art, gen, 0), DomainError);
  CHECK_THROWS_AS(article_from_json(Json{{"id", "e"}, {"text", "  "}}), ValidationError);
}
