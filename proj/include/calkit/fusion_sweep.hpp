#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/model_client.hpp"

namespace calkit {

/// Interleaved 8-bit image; channel order is whatever the decoder produced
/// and is preserved through encode_png().
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image&) const = default;
};

Image load_image(const std::string& path);
std::string encode_png(const Image& image);
void save_png(const Image& image, const std::string& path);

/// v -> clamp(round(v + n), 0, 255), n ~ N(0, sigma^2) i.i.d. from a
/// generator seeded with `seed`. sigma == 0 returns the input unchanged.
Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed);

// Stable per-(item, sigma) seed, mixed with a run-level base seed.
std::uint64_t noise_seed(std::string_view item_id, double sigma, std::uint64_t base_seed = 0);

struct FusionItem {
  std::string id;
  std::string image_ref;
  std::vector<std::string> description_sentences;  // S_1..S_m
  std::string mc_question;
  std::vector<std::string> options;
  std::size_t gold_index = 0;
  std::string open_question;
  std::string open_answer;

  std::size_t sentence_count() const { return description_sentences.size(); }
};

FusionItem fusion_item_from_json(const Json& obj, std::size_t line = 0);
std::vector<FusionItem> load_fusion_items(const std::string& path);

enum class PromptMode { image_only, text_only, image_plus_text };
enum class QuestionForm { multiple_choice, open_ended };

std::string_view to_string(QuestionForm form);
QuestionForm parse_question_form(std::string_view text);  // "mc" | "open"

/// [image] + "Description: S_1 ... S_k" + question (+ options for MC).
/// The description block of the k-prompt extends that of the (k-1)-prompt.
/// k = 0 with image_plus_text is the image_only payload; text_only needs k >= 1.
PromptPayload compose_prompt(const FusionItem& item, std::size_t k, PromptMode mode, QuestionForm form,
                             const std::optional<std::string>& image_url = std::nullopt);

struct SweepOptions {
  std::vector<double> sigmas{0.0};
  QuestionForm form = QuestionForm::multiple_choice;
  std::size_t n_samples = 10;  // open-ended samples per (item, cell)
  double temperature = 1.0;
  double top_p = 0.95;
  int retries = 2;
  std::size_t jobs = 1;
  std::uint64_t base_seed = 0;
  std::string dump_dir;  // when set, noisy images are written here as PNG
};

struct SweepCell {
  double sigma = 0.0;
  std::size_t k = 0;
  double mean_confidence = 0.0;  // NaN when not measured
  double mean_entropy = 0.0;     // NaN when not measured
  std::size_t n_items = 0;
  std::size_t n_failed = 0;

  bool complete() const { return n_failed == 0; }
};

struct SweepRawRow {
  std::string item_id;
  double sigma = 0.0;
  std::size_t k = 0;
  std::string prompt;
  std::optional<double> confidence;
  std::optional<std::size_t> predicted_index;
  std::optional<bool> correct;
  std::optional<double> entropy;
  std::optional<std::size_t> n_clusters;
  std::vector<std::string> samples;
  std::string error;
};

struct SweepGrid {
  std::vector<double> sigmas;        // ascending
  std::vector<std::size_t> k_values; // 0..min m
  std::vector<SweepCell> cells;      // sigma-major
  std::vector<SweepRawRow> raw;      // sorted by (item_id, sigma, k)

  const SweepCell& cell(double sigma, std::size_t k) const;
  bool complete() const;
};

using ImageLoader = std::function<Image(const std::string& ref)>;

/// For each (sigma, k): noise every item's image with its own seed, compose
/// the prompt and query the client. MC cells average confidence_of() over the
/// returned option logits; open cells average the semantic entropy of
/// n_samples answers. Failed items are counted in the cell, not averaged.
SweepGrid run_sweep(std::span<const FusionItem> items, ModelClient& client, const SweepOptions& options,
                    const ImageLoader& loader = load_image);

// CSV: sigma,k,mean_confidence,mean_entropy,n_items,n_failed (n_failed > 0 marks an incomplete cell)
void export_curves(std::ostream& out, const SweepGrid& grid);
std::vector<SweepCell> parse_curves(std::istream& in);

void write_raw_jsonl(std::ostream& out, const SweepGrid& grid);

}  // namespace calkit
