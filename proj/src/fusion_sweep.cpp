#include "calkit/fusion_sweep.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "calkit/calib_metrics.hpp"
#include "calkit/errors.hpp"
#include "calkit/prompts.hpp"
#include "calkit/record_store.hpp"
#include "calkit/semantic_entropy.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Shortest text that parses back to the same double.
std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& text, const char* what) {
  const std::string t = trim(text);
  if (t == "nan" || t.empty()) return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw ParseError(0, std::string("bad ") + what + ": '" + t + "'");
  return v;
}

std::size_t parse_count(const std::string& text, const char* what) {
  const std::string t = trim(text);
  std::size_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size())
    throw ParseError(0, std::string("bad ") + what + ": '" + t + "'");
  return v;
}

void check_layout(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw DomainError("image has no pixels");
  if (image.channels != 1 && image.channels != 3 && image.channels != 4)
    throw DomainError("unsupported pixel format: " + std::to_string(image.channels) + " channels");
  const auto expected = static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height) *
                        static_cast<std::size_t>(image.channels);
  if (image.pixels.size() != expected) throw DomainError("pixel buffer does not match image dimensions");
}

cv::Mat to_mat(const Image& image) {
  check_layout(image);
  cv::Mat m(image.height, image.width, CV_8UC(image.channels));
  std::copy(image.pixels.begin(), image.pixels.end(), m.data);
  return m;
}

std::string json_string(const Json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw ValidationError(key, "expected a string", line);
  return it->get<std::string>();
}

std::size_t gold_from_json(const Json& v, std::size_t k, std::size_t line) {
  std::size_t g = 0;
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)) {
    g = v.get<std::size_t>();
  } else if (v.is_string() && v.get<std::string>().size() == 1 && std::isalpha(static_cast<unsigned char>(v.get<std::string>()[0]))) {
    g = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(v.get<std::string>()[0])) - 'A');
  } else {
    throw ValidationError("gold_index", "expected an option index or letter", line);
  }
  if (g >= k) throw ValidationError("gold_index", "gold index outside the option list", line);
  return g;
}

template <class Fn>
auto with_retries(int retries, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const ClientError&) {
      if (attempt >= retries) throw;
    }
  }
}

}  // namespace

Image load_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path);
  const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode image: " + path);
  if (m.depth() != CV_8U) throw DomainError("unsupported pixel format in " + path + ": only 8-bit channels");
  Image out;
  out.width = m.cols;
  out.height = m.rows;
  out.channels = m.channels();
  out.pixels.resize(m.total() * m.elemSize());
  if (m.isContinuous()) {
    std::copy(m.data, m.data + out.pixels.size(), out.pixels.begin());
  } else {
    const std::size_t row = static_cast<std::size_t>(m.cols) * m.elemSize();
    for (int r = 0; r < m.rows; ++r) std::copy(m.ptr(r), m.ptr(r) + row, out.pixels.begin() + r * row);
  }
  check_layout(out);
  return out;
}

std::string encode_png(const Image& image) {
  std::vector<unsigned char> buf;
  if (!cv::imencode(".png", to_mat(image), buf)) throw IoError("PNG encoding failed");
  return std::string(buf.begin(), buf.end());
}

void save_png(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string png = encode_png(image);
  out.write(png.data(), static_cast<std::streamsize>(png.size()));
}

Image add_gaussian_noise(const Image& image, double sigma, std::uint64_t seed) {
  check_layout(image);
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be finite and >= 0");
  if (sigma == 0.0) return image;
  Image out = image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& p : out.pixels) {
    const double v = std::round(static_cast<double>(p) + noise(rng));
    p = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

std::uint64_t noise_seed(std::string_view item_id, double sigma, std::uint64_t base_seed) {
  if (sigma == 0.0) sigma = 0.0;  // fold -0 into +0
  return hash_combine(hash_combine(base_seed, fnv1a64(item_id)), std::bit_cast<std::uint64_t>(sigma));
}

FusionItem fusion_item_from_json(const Json& obj, std::size_t line) {
  if (!obj.is_object()) throw ParseError(line, "fusion item must be a JSON object");
  FusionItem item;
  const auto id = obj.find("id");
  if (id == obj.end()) throw ValidationError("id", "missing", line);
  item.id = id->is_string() ? id->get<std::string>() : id->dump();
  item.image_ref = json_string(obj, "image_ref", line);
  if (item.image_ref.empty()) item.image_ref = json_string(obj, "image", line);
  if (item.image_ref.empty()) throw ValidationError("image_ref", "missing", line);

  const auto sentences = obj.find("description_sentences");
  if (sentences == obj.end() || !sentences->is_array() || sentences->empty())
    throw ValidationError("description_sentences", "need at least one sentence", line);
  for (const auto& s : *sentences) {
    if (!s.is_string() || trim(s.get<std::string>()).empty())
      throw ValidationError("description_sentences", "sentences must be non-empty strings", line);
    item.description_sentences.push_back(trim(s.get<std::string>()));
  }

  // Either nested {"mc": {...}, "open": {...}} or flat keys.
  const Json mc = obj.contains("mc") ? obj.at("mc") : obj;
  const Json open = obj.contains("open") ? obj.at("open") : obj;
  item.mc_question = json_string(mc, obj.contains("mc") ? "question" : "mc_question", line);
  if (item.mc_question.empty()) throw ValidationError("mc_question", "missing", line);
  const auto options = mc.find("options");
  if (options == mc.end() || !options->is_array() || options->size() < 2)
    throw ValidationError("options", "need at least two options", line);
  for (const auto& o : *options) {
    if (!o.is_string()) throw ValidationError("options", "options must be strings", line);
    item.options.push_back(o.get<std::string>());
  }
  const auto gold = mc.find("gold_index");
  if (gold == mc.end()) throw ValidationError("gold_index", "missing", line);
  item.gold_index = gold_from_json(*gold, item.options.size(), line);

  item.open_question = json_string(open, obj.contains("open") ? "question" : "open_question", line);
  item.open_answer = json_string(open, obj.contains("open") ? "answer" : "open_answer", line);
  // open-ended fields are only needed for open-ended sweeps
  if (item.open_question.empty() != item.open_answer.empty())
    throw ValidationError(item.open_question.empty() ? "open_question" : "open_answer", "missing", line);
  return item;
}

std::vector<FusionItem> load_fusion_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<FusionItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    items.push_back(fusion_item_from_json(obj, line_no));
  }
  if (items.empty()) throw EmptyInputError("no fusion items in " + path);
  return items;
}

std::string_view to_string(QuestionForm form) { return form == QuestionForm::multiple_choice ? "mc" : "open"; }

QuestionForm parse_question_form(std::string_view text) {
  if (text == "mc" || text == "multiple_choice") return QuestionForm::multiple_choice;
  if (text == "open" || text == "open_ended") return QuestionForm::open_ended;
  throw DomainError("unknown question form: " + std::string(text));
}

PromptPayload compose_prompt(const FusionItem& item, std::size_t k, PromptMode mode, QuestionForm form,
                             const std::optional<std::string>& image_url) {
  if (k > item.sentence_count())
    throw DomainError("k = " + std::to_string(k) + " exceeds the " + std::to_string(item.sentence_count()) +
                      " description sentences of " + item.id);
  if (mode == PromptMode::text_only && k == 0) throw DomainError("text-only prompt needs at least one sentence");
  if (mode == PromptMode::image_only && k != 0) throw DomainError("image-only prompt takes no description");

  PromptPayload p;
  if (mode != PromptMode::text_only) p.image_url = image_url ? *image_url : resolve_image_url(item.image_ref);
  if (k > 0) {
    p.text = "Description:";
    for (std::size_t i = 0; i < k; ++i) p.text += " " + item.description_sentences[i];
    p.text += "\n";
  }
  if (form == QuestionForm::multiple_choice) {
    p.text += "Question: " + item.mc_question + "\n";
    p.text += options_block(item.options);
    p.text += kMultipleChoiceInstruction;
    p.tags["gold_index"] = std::to_string(item.gold_index);
  } else {
    if (item.open_question.empty()) throw ValidationError("open_question", "item " + item.id + " has none");
    p.text += "Question: " + item.open_question + "\n";
    p.text += kOpenEndedInstruction;
  }
  p.text += "\n";
  p.text += kDefaultSuffix;
  p.tags["record_id"] = item.id;
  p.tags["k"] = std::to_string(k);
  return p;
}

const SweepCell& SweepGrid::cell(double sigma, std::size_t k) const {
  for (const auto& c : cells)
    if (c.sigma == sigma && c.k == k) return c;
  throw DomainError("no sweep cell for sigma=" + format_number(sigma) + ", k=" + std::to_string(k));
}

bool SweepGrid::complete() const {
  return std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.complete(); });
}

SweepGrid run_sweep(std::span<const FusionItem> items, ModelClient& client, const SweepOptions& options,
                    const ImageLoader& loader) {
  if (items.empty()) throw EmptyInputError("sweep needs at least one item");
  if (options.sigmas.empty()) throw DomainError("sweep needs at least one sigma");
  if (options.form == QuestionForm::open_ended && options.n_samples == 0)
    throw DomainError("open-ended sweep needs n_samples >= 1");

  SweepGrid grid;
  grid.sigmas = options.sigmas;
  for (double s : grid.sigmas)
    if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("sigma must be finite and >= 0");
  std::sort(grid.sigmas.begin(), grid.sigmas.end());
  grid.sigmas.erase(std::unique(grid.sigmas.begin(), grid.sigmas.end()), grid.sigmas.end());

  std::size_t k_max = items.front().sentence_count();
  for (const auto& it : items) {
    if (it.sentence_count() == 0) throw ValidationError("description_sentences", "item " + it.id + " has none");
    if (options.form == QuestionForm::open_ended && it.open_question.empty())
      throw ValidationError("open_question", "item " + it.id + " has no open-ended question");
    k_max = std::min(k_max, it.sentence_count());
  }
  for (std::size_t k = 0; k <= k_max; ++k) grid.k_values.push_back(k);

  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });

  const std::size_t n_sig = grid.sigmas.size();
  const std::size_t n_k = grid.k_values.size();
  grid.raw.resize(items.size() * n_sig * n_k);
  if (!options.dump_dir.empty()) std::filesystem::create_directories(options.dump_dir);
  const auto judge = EquivalenceJudge::normalized_exact();

  // One job per (item, sigma): the noisy image is built once and reused for every k.
  parallel_for(items.size() * n_sig, options.jobs, [&](std::size_t job) {
    const std::size_t pos = job / n_sig;
    const std::size_t si = job % n_sig;
    const FusionItem& item = items[order[pos]];
    const double sigma = grid.sigmas[si];

    const Image clean = loader(item.image_ref);
    const Image noisy = add_gaussian_noise(clean, sigma, noise_seed(item.id, sigma, options.base_seed));
    const std::string png = encode_png(noisy);
    if (!options.dump_dir.empty()) {
      const auto path = std::filesystem::path(options.dump_dir) / (item.id + "_sigma" + format_number(sigma) + ".png");
      std::ofstream(path, std::ios::binary).write(png.data(), static_cast<std::streamsize>(png.size()));
    }
    const std::string url = "data:image/png;base64," + base64_encode(png);

    for (std::size_t ki = 0; ki < n_k; ++ki) {
      const std::size_t k = grid.k_values[ki];
      SweepRawRow& row = grid.raw[(pos * n_sig + si) * n_k + ki];
      row.item_id = item.id;
      row.sigma = sigma;
      row.k = k;
      PromptPayload payload = compose_prompt(item, k, PromptMode::image_plus_text, options.form, url);
      payload.tags["sigma"] = format_number(sigma);
      row.prompt = payload.text;
      try {
        if (options.form == QuestionForm::multiple_choice) {
          const auto logits = with_retries(options.retries, [&] { return client.query_options(payload, item.options); });
          const OptionConfidence oc = confidence_of(logits);
          row.confidence = oc.confidence;
          row.predicted_index = oc.predicted_index;
          row.correct = oc.predicted_index == item.gold_index;
        } else {
          row.samples = with_retries(options.retries, [&] {
            return client.sample_answers(payload, options.n_samples, options.temperature, options.top_p);
          });
          const ClusterPartition part = cluster_samples(row.samples, judge);
          row.entropy = semantic_entropy(part);
          row.n_clusters = part.clusters.size();
          const std::string gold = normalize_answer(item.open_answer);
          const auto hits = std::count_if(row.samples.begin(), row.samples.end(),
                                          [&](const std::string& s) { return normalize_answer(s) == gold; });
          row.correct = 2 * static_cast<std::size_t>(hits) > row.samples.size();
        }
      } catch (const ClientError& e) {
        row.error = e.what();
      } catch (const DomainError& e) {
        row.error = e.what();  // e.g. non-finite logits from the server
      }
    }
  });

  for (std::size_t si = 0; si < n_sig; ++si) {
    for (std::size_t ki = 0; ki < n_k; ++ki) {
      SweepCell cell;
      cell.sigma = grid.sigmas[si];
      cell.k = grid.k_values[ki];
      std::vector<double> conf, ent;
      for (std::size_t pos = 0; pos < items.size(); ++pos) {
        const SweepRawRow& row = grid.raw[(pos * n_sig + si) * n_k + ki];
        if (!row.error.empty()) {
          ++cell.n_failed;
          continue;
        }
        ++cell.n_items;
        if (row.confidence) conf.push_back(*row.confidence);
        if (row.entropy) ent.push_back(*row.entropy);
      }
      cell.mean_confidence = conf.empty() ? kNaN : pairwise_sum(conf) / static_cast<double>(conf.size());
      cell.mean_entropy = ent.empty() ? kNaN : pairwise_sum(ent) / static_cast<double>(ent.size());
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

void export_curves(std::ostream& out, const SweepGrid& grid) {
  out << "sigma,k,mean_confidence,mean_entropy,n_items,n_failed\n";
  for (const auto& c : grid.cells) {
    out << format_number(c.sigma) << ',' << c.k << ',' << format_number(c.mean_confidence) << ','
        << format_number(c.mean_entropy) << ',' << c.n_items << ',' << c.n_failed << '\n';
  }
}

std::vector<SweepCell> parse_curves(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "sigma,k,mean_confidence,mean_entropy,n_items,n_failed")
    throw ParseError(1, "unexpected curve CSV header");
  std::vector<SweepCell> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) throw ParseError(line_no, "expected 6 fields");
    try {
      SweepCell c;
      c.sigma = parse_number(f[0], "sigma");
      c.k = parse_count(f[1], "k");
      c.mean_confidence = parse_number(f[2], "mean_confidence");
      c.mean_entropy = parse_number(f[3], "mean_entropy");
      c.n_items = parse_count(f[4], "n_items");
      c.n_failed = parse_count(f[5], "n_failed");
      cells.push_back(c);
    } catch (const ParseError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return cells;
}

void write_raw_jsonl(std::ostream& out, const SweepGrid& grid) {
  for (const auto& r : grid.raw) {
    Json j;
    j["item_id"] = r.item_id;
    j["sigma"] = r.sigma;
    j["k"] = r.k;
    j["prompt"] = r.prompt;
    if (r.confidence) j["confidence"] = *r.confidence;
    if (r.predicted_index) j["predicted"] = option_letter(*r.predicted_index);
    if (r.correct) j["correct"] = *r.correct;
    if (r.entropy) j["entropy"] = *r.entropy;
    if (r.n_clusters) j["n_clusters"] = *r.n_clusters;
    if (!r.samples.empty()) j["samples"] = r.samples;
    if (!r.error.empty()) j["error"] = r.error;
    out << j.dump() << '\n';
  }
}

}  // namespace calkit
