#include "calkit/record_store.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "calkit/errors.hpp"
#include "calkit/util.hpp"

namespace calkit {
namespace {

const std::set<std::string, std::less<>> kKnownFields = {
    "id",          "question",      "options", "gold_index", "image_ref", "description_sentences",
    "option_logits", "samples",     "model_id", "condition"};

const Json* find(const Json& obj, std::string_view key) {
  auto it = obj.find(std::string(key));
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string require_string(const Json& value, std::string_view field, std::size_t line) {
  if (!value.is_string()) throw ParseError(line, std::string(field) + " must be a string");
  return value.get<std::string>();
}

double require_number(const Json& value, std::string_view field, std::size_t line) {
  if (!value.is_number()) throw ParseError(line, std::string(field) + " must be a number");
  return value.get<double>();
}

std::vector<std::string> require_string_list(const Json& value, std::string_view field,
                                             std::size_t line) {
  if (!value.is_array()) throw ParseError(line, std::string(field) + " must be an array");
  std::vector<std::string> out;
  out.reserve(value.size());
  for (std::size_t i = 0; i < value.size(); ++i)
    out.push_back(require_string(value[i], std::string(field) + "[" + std::to_string(i) + "]", line));
  return out;
}

// Integer index, or a single option letter.
std::size_t parse_gold(const Json& value, std::size_t line) {
  if (value.is_number_integer()) {
    const auto v = value.get<long long>();
    if (v < 0) throw ValidationError("gold_index", "must be non-negative", line);
    return static_cast<std::size_t>(v);
  }
  if (value.is_string()) {
    const std::string s = trim(value.get<std::string>());
    if (s.size() == 1 && std::isalpha(static_cast<unsigned char>(s[0])))
      return static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(s[0])) - 'A');
    throw ValidationError("gold_index", "letter gold must be a single letter, got \"" + s + "\"",
                          line);
  }
  throw ParseError(line, "gold_index must be an integer or an option letter");
}

SampledAnswer parse_sample(const Json& value, std::size_t index, std::size_t line) {
  const std::string field = "samples[" + std::to_string(index) + "]";
  if (value.is_string()) return SampledAnswer{value.get<std::string>(), std::nullopt, 1.0, 1.0};
  if (!value.is_object()) throw ParseError(line, field + " must be an object or a string");
  SampledAnswer s;
  const Json* text = find(value, "text");
  if (!text) throw ValidationError(field + ".text", "missing", line);
  s.text = require_string(*text, field + ".text", line);
  if (const Json* c = find(value, "correct")) {
    if (!c->is_boolean()) throw ParseError(line, field + ".correct must be a boolean");
    s.correct = c->get<bool>();
  }
  if (const Json* t = find(value, "temperature"))
    s.temperature = require_number(*t, field + ".temperature", line);
  if (const Json* p = find(value, "top_p")) s.top_p = require_number(*p, field + ".top_p", line);
  return s;
}

void validate_with_line(const ResponseRecord& r, std::size_t line) {
  try {
    validate_record(r);
  } catch (const ValidationError& e) {
    if (line == 0) throw;
    std::string msg = e.what();
    const std::string prefix = e.field() + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    throw ValidationError(e.field(), msg, line);
  }
}

void check_task_kind(const ResponseRecord& r, TaskKind kind, std::size_t line) {
  if (kind == TaskKind::multiple_choice && !r.options)
    throw ValidationError("options", "multiple-choice record without options", line);
  if (kind == TaskKind::open_ended && r.options)
    throw ValidationError("options", "open-ended record must not carry options", line);
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::multiple_choice ? "multiple_choice" : "open_ended";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "mc" || text == "multiple_choice") return TaskKind::multiple_choice;
  if (text == "open" || text == "open_ended") return TaskKind::open_ended;
  throw DomainError("unknown task kind: " + std::string(text));
}

std::string option_letter(std::size_t index) {
  if (index < 26) return std::string(1, static_cast<char>('A' + index));
  return std::to_string(index + 1);
}

void validate_record(const ResponseRecord& r) {
  if (r.id.empty()) throw ValidationError("id", "must be non-empty");
  if (r.options && r.options->empty()) throw ValidationError("options", "must have K >= 1 entries");
  if (r.gold_index) {
    if (!r.options) throw ValidationError("gold_index", "requires options");
    if (*r.gold_index >= r.options->size())
      throw ValidationError("gold_index", "out of range [0, " + std::to_string(r.options->size()) + ")");
  }
  if (r.option_logits) {
    if (!r.options) throw ValidationError("option_logits", "requires options");
    if (r.option_logits->size() != r.options->size())
      throw ValidationError("option_logits", "expected " + std::to_string(r.options->size()) +
                                                 " entries, got " +
                                                 std::to_string(r.option_logits->size()));
    for (double l : *r.option_logits)
      if (!std::isfinite(l)) throw ValidationError("option_logits", "non-finite logit");
  }
  if (r.samples) {
    for (std::size_t i = 0; i < r.samples->size(); ++i) {
      const auto& s = (*r.samples)[i];
      const std::string field = "samples[" + std::to_string(i) + "]";
      if (trim(s.text).empty()) throw ValidationError(field + ".text", "empty after trimming");
      if (!(s.temperature > 0.0) || !std::isfinite(s.temperature))
        throw ValidationError(field + ".temperature", "must be > 0");
      if (!(s.top_p > 0.0 && s.top_p <= 1.0)) throw ValidationError(field + ".top_p", "must be in (0, 1]");
    }
  }
  if (!r.option_logits && !r.samples)
    throw ValidationError("option_logits", "record needs option_logits or samples");
}

ResponseRecord record_from_json(const Json& obj, std::size_t line) {
  if (!obj.is_object()) throw ParseError(line, "record must be a JSON object");
  ResponseRecord r;
  const Json* id = find(obj, "id");
  if (!id) throw ValidationError("id", "missing", line);
  r.id = id->is_number_integer() ? std::to_string(id->get<long long>()) : require_string(*id, "id", line);
  const Json* question = find(obj, "question");
  if (!question) throw ValidationError("question", "missing", line);
  r.question = require_string(*question, "question", line);

  if (const Json* v = find(obj, "options")) r.options = require_string_list(*v, "options", line);
  if (const Json* v = find(obj, "gold_index")) r.gold_index = parse_gold(*v, line);
  if (const Json* v = find(obj, "image_ref")) r.image_ref = require_string(*v, "image_ref", line);
  if (const Json* v = find(obj, "description_sentences"))
    r.description_sentences = require_string_list(*v, "description_sentences", line);
  if (const Json* v = find(obj, "option_logits")) {
    if (!v->is_array()) throw ParseError(line, "option_logits must be an array");
    std::vector<double> logits;
    for (std::size_t i = 0; i < v->size(); ++i)
      logits.push_back(require_number((*v)[i], "option_logits[" + std::to_string(i) + "]", line));
    r.option_logits = std::move(logits);
  }
  if (const Json* v = find(obj, "samples")) {
    if (!v->is_array()) throw ParseError(line, "samples must be an array");
    std::vector<SampledAnswer> samples;
    for (std::size_t i = 0; i < v->size(); ++i) samples.push_back(parse_sample((*v)[i], i, line));
    r.samples = std::move(samples);
  }
  if (const Json* v = find(obj, "model_id")) r.model_id = require_string(*v, "model_id", line);
  if (const Json* v = find(obj, "condition")) r.condition = require_string(*v, "condition", line);

  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!kKnownFields.contains(it.key())) r.metadata[it.key()] = it.value();

  validate_with_line(r, line);
  return r;
}

ResponseRecord parse_record(std::string_view line, std::size_t line_number) {
  Json obj;
  try {
    obj = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(line_number, "malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return record_from_json(obj, line_number);
}

Json record_to_json(const ResponseRecord& r) {
  Json obj = r.metadata.is_object() ? r.metadata : Json::object();
  obj["id"] = r.id;
  obj["question"] = r.question;
  if (r.options) obj["options"] = *r.options;
  if (r.gold_index) obj["gold_index"] = *r.gold_index;
  if (r.image_ref) obj["image_ref"] = *r.image_ref;
  if (r.description_sentences) obj["description_sentences"] = *r.description_sentences;
  if (r.option_logits) obj["option_logits"] = *r.option_logits;
  if (r.samples) {
    Json arr = Json::array();
    for (const auto& s : *r.samples) {
      Json js = {{"text", s.text}, {"temperature", s.temperature}, {"top_p", s.top_p}};
      if (s.correct) js["correct"] = *s.correct;
      arr.push_back(std::move(js));
    }
    obj["samples"] = std::move(arr);
  }
  obj["model_id"] = r.model_id;
  if (!r.condition.empty()) obj["condition"] = r.condition;
  return obj;
}

std::string serialize_record(const ResponseRecord& record) { return record_to_json(record).dump(); }

std::vector<LineError> for_each_record(const std::string& path, TaskKind kind, ErrorPolicy policy,
                                       const std::function<void(ResponseRecord&&)>& sink) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  std::vector<LineError> errors;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    try {
      ResponseRecord r = parse_record(line, line_number);
      check_task_kind(r, kind, line_number);
      sink(std::move(r));
    } catch (const ParseError& e) {
      if (policy == ErrorPolicy::fail_fast) throw;
      errors.push_back({line_number, "", e.what()});
    } catch (const ValidationError& e) {
      if (policy == ErrorPolicy::fail_fast) throw;
      errors.push_back({line_number, e.field(), e.what()});
    }
  }
  return errors;
}

Dataset load_dataset(const std::string& path, TaskKind kind, ErrorPolicy policy) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path);
  Dataset ds;
  ds.errors = for_each_record(path, kind, policy,
                              [&](ResponseRecord&& r) { ds.records.push_back(std::move(r)); });
  if (ds.records.empty())
    throw EmptyInputError("dataset " + path + " has no valid records (" +
                          std::to_string(ds.errors.size()) + " rejected lines)");
  ds.manifest.name = std::filesystem::path(path).stem().string();
  ds.manifest.task_kind = kind;
  ds.manifest.record_count = ds.records.size();
  ds.manifest.source_path = path;
  return ds;
}

void write_records(const std::string& path, const std::vector<ResponseRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

}  // namespace calkit
