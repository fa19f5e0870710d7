#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/fusion_sweep.hpp"
#include "calkit/prompts.hpp"
#include "doctest.h"

using namespace calkit;

namespace {

Image gray(int w, int h, int channels = 1, std::uint8_t v = 128) {
  return Image{w, h, channels, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * channels), v)};
}

FusionItem item(const std::string& id, std::size_t m = 3) {
  FusionItem it;
  it.id = id;
  it.image_ref = "mem://" + id;
  for (std::size_t i = 0; i < m; ++i) it.description_sentences.push_back("Sentence " + std::to_string(i + 1) + ".");
  it.mc_question = "What is shown?";
  it.options = {"a dog", "a cat", "a car", "a tree"};
  it.gold_index = 2;
  it.open_question = "What is shown?";
  it.open_answer = "a car";
  return it;
}

const ImageLoader kMemLoader = [](const std::string&) { return gray(16, 16, 3); };

// Logits whose max-softmax over K options is exactly c.
std::vector<double> logits_for(double c, std::size_t k) {
  std::vector<double> l(k, std::log((1.0 - c) / static_cast<double>(k - 1)));
  l[0] = std::log(c);
  return l;
}

double oracle_f(double sigma, std::size_t k) {
  return std::clamp(0.3 - 0.02 * sigma + 0.1 * static_cast<double>(k), 0.0, 1.0);
}

}  // namespace

TEST_CASE("noise statistics on a mid-gray image") {
  const Image in = gray(128, 128);
  const Image out = add_gaussian_noise(in, 10.0, noise_seed("img", 10.0));
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < in.pixels.size(); ++i) {
    const double d = static_cast<double>(out.pixels[i]) - static_cast<double>(in.pixels[i]);
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(in.pixels.size());
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) <= 0.5);
  CHECK(sd >= 9.5);
  CHECK(sd <= 10.5);
}

TEST_CASE("noise: identity at zero, deterministic per seed, clamped") {
  const Image in = gray(40, 30, 3, 200);
  CHECK(add_gaussian_noise(in, 0.0, 5) == in);
  CHECK(add_gaussian_noise(in, 25.0, 5) == add_gaussian_noise(in, 25.0, 5));
  CHECK_FALSE(add_gaussian_noise(in, 25.0, 5) == add_gaussian_noise(in, 25.0, 6));
  const Image loud = add_gaussian_noise(gray(50, 50, 1, 250), 100.0, 1);
  CHECK(std::count(loud.pixels.begin(), loud.pixels.end(), 255) > 0);
  CHECK(std::count(loud.pixels.begin(), loud.pixels.end(), 0) > 0);
  CHECK_THROWS_AS(add_gaussian_noise(in, -1.0, 0), DomainError);
  Image odd = in;
  odd.channels = 2;
  CHECK_THROWS_AS(add_gaussian_noise(odd, 1.0, 0), DomainError);

  CHECK(noise_seed("a", 10) == noise_seed("a", 10));
  CHECK(noise_seed("a", 10) != noise_seed("b", 10));
  CHECK(noise_seed("a", 10) != noise_seed("a", 20));
  CHECK(noise_seed("a", 10, 1) != noise_seed("a", 10, 2));
  CHECK(noise_seed("a", 0.0) == noise_seed("a", -0.0));
}

TEST_CASE("PNG round trip") {
  const Image in = add_gaussian_noise(gray(20, 10, 3), 30.0, 9);
  const auto path = (std::filesystem::temp_directory_path() / "calkit_fs_roundtrip.png").string();
  save_png(in, path);
  CHECK(load_image(path) == in);
  CHECK(encode_png(in).substr(1, 3) == "PNG");
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_image("/nonexistent/calkit.png"), IoError);
}

TEST_CASE("compose_prompt grows the description by prefix") {
  const FusionItem it = item("x");
  const auto p0 = compose_prompt(it, 0, PromptMode::image_plus_text, QuestionForm::multiple_choice, "http://i/x.png");
  const auto p1 = compose_prompt(it, 1, PromptMode::image_plus_text, QuestionForm::multiple_choice, "http://i/x.png");
  const auto p3 = compose_prompt(it, 3, PromptMode::image_plus_text, QuestionForm::multiple_choice, "http://i/x.png");
  CHECK(p0.text.find("Description:") == std::string::npos);
  CHECK(p1.text.rfind("Description: Sentence 1.\n", 0) == 0);
  CHECK(p3.text.rfind("Description: Sentence 1. Sentence 2. Sentence 3.\n", 0) == 0);
  CHECK(p3.text.find("C. a car") != std::string::npos);
  CHECK(p3.text.find(kMultipleChoiceInstruction) != std::string::npos);
  CHECK(p3.tags.at("k") == "3");
  CHECK(p3.tags.at("gold_index") == "2");
  CHECK(*p0.image_url == "http://i/x.png");

  const auto image_only = compose_prompt(it, 0, PromptMode::image_only, QuestionForm::multiple_choice, "u");
  CHECK(image_only.text == p0.text);
  const auto text_only = compose_prompt(it, 2, PromptMode::text_only, QuestionForm::open_ended, "u");
  CHECK_FALSE(text_only.image_url.has_value());
  CHECK(text_only.text.find(kOpenEndedInstruction) != std::string::npos);
  CHECK(text_only.text.find("A. a dog") == std::string::npos);

  CHECK_THROWS_AS(compose_prompt(it, 4, PromptMode::image_plus_text, QuestionForm::multiple_choice, "u"),
                  DomainError);
  CHECK_THROWS_AS(compose_prompt(it, 0, PromptMode::text_only, QuestionForm::multiple_choice, "u"), DomainError);
  CHECK_THROWS_AS(compose_prompt(it, 1, PromptMode::image_only, QuestionForm::multiple_choice, "u"), DomainError);
}

TEST_CASE("item parsing") {
  const Json nested = {{"id", "n1"},
                       {"image", "a.png"},
                       {"description_sentences", {"S1.", "S2."}},
                       {"mc", {{"question", "Q?"}, {"options", {"x", "y"}}, {"gold_index", 1}}},
                       {"open", {{"question", "OQ?"}, {"answer", "y"}}}};
  const auto a = fusion_item_from_json(nested);
  CHECK(a.image_ref == "a.png");
  CHECK(a.sentence_count() == 2);
  CHECK(a.gold_index == 1);
  CHECK(a.open_answer == "y");
  CHECK_THROWS(fusion_item_from_json(Json{{"id", "bad"}}));
  CHECK(parse_question_form("open") == QuestionForm::open_ended);
  CHECK(to_string(QuestionForm::multiple_choice) == "mc");
}

TEST_CASE("sweep cells equal an oracle confidence function") {
  std::vector<FusionItem> items{item("b"), item("a"), item("c")};
  FunctionClient client(
      [](const PromptPayload& p, std::span<const std::string> opts) {
        const double sigma = std::stod(*p.tag("sigma"));
        const std::size_t k = std::stoul(*p.tag("k"));
        return logits_for(oracle_f(sigma, k), opts.size());
      },
      nullptr);
  SweepOptions opt;
  opt.sigmas = {2.5, 0.0};
  opt.jobs = 3;
  const auto grid = run_sweep(items, client, opt, kMemLoader);
  CHECK(grid.sigmas == std::vector<double>{0.0, 2.5});
  CHECK(grid.k_values == std::vector<std::size_t>{0, 1, 2, 3});
  REQUIRE(grid.cells.size() == 8);
  CHECK(grid.complete());
  for (const auto& c : grid.cells) {
    CHECK(std::abs(c.mean_confidence - oracle_f(c.sigma, c.k)) < 1e-12);
    CHECK(c.n_items == 3);
    CHECK(std::isnan(c.mean_entropy));
  }
  CHECK(grid.raw.size() == 24);
  CHECK(grid.raw.front().item_id == "a");
  CHECK(client.option_calls() == 24);
}

TEST_CASE("small grids and determinism") {
  FusionItem one = item("solo", 1);
  const std::vector<FusionItem> items{one};
  FunctionClient client([](const PromptPayload& p, std::span<const std::string>) {
    // confidence keyed on the image bytes so noise differences would show up
    const double h = static_cast<double>(std::hash<std::string>{}(*p.image_url) % 1000) / 1000.0;
    return std::vector<double>{h, 0, 0, 0};
  },
                        nullptr);
  SweepOptions opt;
  opt.sigmas = {10.0};
  const auto g1 = run_sweep(items, client, opt, kMemLoader);
  CHECK(g1.cells.size() == 2);
  const auto g2 = run_sweep(items, client, opt, kMemLoader);
  CHECK(g1.cells[0].mean_confidence == g2.cells[0].mean_confidence);
  CHECK(g1.raw[0].prompt == g2.raw[0].prompt);
}

TEST_CASE("curves CSV: one row per cell, ascending sigma, round trip") {
  const std::vector<FusionItem> items{item("a", 2)};
  FixedLogitsClient client({1, 0, 0, 0});
  SweepOptions opt;
  opt.sigmas = {50, 0};
  const auto grid = run_sweep(items, client, opt, kMemLoader);
  std::stringstream ss;
  export_curves(ss, grid);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "sigma,k,mean_confidence,mean_entropy,n_items,n_failed");
  ss.clear();
  ss.seekg(0);
  const auto cells = parse_curves(ss);
  REQUIRE(cells.size() == 6);
  CHECK(cells.front().sigma == 0.0);
  CHECK(cells.back().sigma == 50.0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].mean_confidence == grid.cells[i].mean_confidence);
    CHECK(cells[i].k == grid.cells[i].k);
    CHECK(std::isnan(cells[i].mean_entropy));
  }
  std::stringstream raw;
  write_raw_jsonl(raw, grid);
  std::size_t lines = 0;
  for (std::string l; std::getline(raw, l);) lines += !l.empty();
  CHECK(lines == 6);
}

TEST_CASE("failed items mark cells incomplete") {
  const std::vector<FusionItem> items{item("good", 1), item("flaky", 1)};
  FunctionClient client([](const PromptPayload& p, std::span<const std::string>) -> std::vector<double> {
    if (*p.tag("record_id") == "flaky" && *p.tag("k") == "1") throw TransportError("timeout");
    return {2, 0, 0, 0};
  },
                        nullptr);
  SweepOptions opt;
  opt.retries = 1;
  const auto grid = run_sweep(items, client, opt, kMemLoader);
  CHECK_FALSE(grid.complete());
  CHECK(grid.cell(0, 0).complete());
  CHECK(grid.cell(0, 1).n_failed == 1);
  CHECK(grid.cell(0, 1).n_items == 1);
  CHECK(grid.cell(0, 1).mean_confidence == doctest::Approx(confidence_of(std::vector<double>{2, 0, 0, 0}).confidence));
  CHECK_THROWS_AS(grid.cell(7, 0), DomainError);
}

TEST_CASE("open-ended cells use semantic entropy") {
  const std::vector<FusionItem> items{item("o", 2)};
  FunctionClient client(nullptr, [](const PromptPayload& p, std::size_t n, double, double) {
    // k sentences -> answers collapse onto fewer clusters
    const std::size_t k = std::stoul(*p.tag("k"));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("answer " + std::to_string(i % (3 - k)));
    return out;
  });
  SweepOptions opt;
  opt.form = QuestionForm::open_ended;
  const auto grid = run_sweep(items, client, opt, kMemLoader);
  CHECK(grid.cell(0, 2).mean_entropy == 0.0);
  CHECK(grid.cell(0, 1).mean_entropy == doctest::Approx(std::log(2.0)));
  CHECK(grid.cell(0, 0).mean_entropy > grid.cell(0, 1).mean_entropy);
  CHECK(std::isnan(grid.cell(0, 0).mean_confidence));
}

TEST_CASE("synthetic client: mean confidence is non-decreasing in k") {
  std::vector<FusionItem> items;
  for (int i = 0; i < 5; ++i) items.push_back(item("s" + std::to_string(i), 4));
  // reads the description from the prompt text, not the tags
  FunctionClient client([](const PromptPayload& p, std::span<const std::string> opts) {
    const auto sentences = static_cast<double>(std::count(p.text.begin(), p.text.end(), '.'));
    const double sigma = std::stod(*p.tag("sigma"));
    return logits_for(std::clamp(0.3 + 0.1 * sentences - 0.001 * sigma, 0.26, 0.99), opts.size());
  },
                        nullptr);
  SweepOptions opt;
  opt.sigmas = {0, 25, 50, 100};
  opt.jobs = 4;
  const auto grid = run_sweep(items, client, opt, kMemLoader);
  for (double s : grid.sigmas)
    for (std::size_t k = 1; k < grid.k_values.size(); ++k)
      CHECK(grid.cell(s, k).mean_confidence >= grid.cell(s, k - 1).mean_confidence);
}

TEST_CASE("sweep argument errors") {
  FixedLogitsClient client({1, 0, 0, 0});
  SweepOptions opt;
  CHECK_THROWS_AS(run_sweep(std::vector<FusionItem>{}, client, opt, kMemLoader), EmptyInputError);
  opt.sigmas = {-1};
  const std::vector<FusionItem> items{item("a")};
  CHECK_THROWS_AS(run_sweep(items, client, opt, kMemLoader), DomainError);
}
