#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace calkit {

using Json = nlohmann::json;

enum class TaskKind { multiple_choice, open_ended };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);  // accepts "mc"/"multiple_choice", "open"/"open_ended"

struct SampledAnswer {
  std::string text;
  std::optional<bool> correct;
  double temperature = 1.0;
  double top_p = 1.0;

  bool operator==(const SampledAnswer&) const = default;
};

/// One logged question instance.
///
/// `gold_index` is 0-based. On input a single letter ("A", "b", ...) is
/// accepted and normalized. Fields the schema does not know about are kept
/// verbatim in `metadata` and written back out by serialize_record().
struct ResponseRecord {
  std::string id;
  std::string question;
  std::optional<std::vector<std::string>> options;
  std::optional<std::size_t> gold_index;
  std::optional<std::string> image_ref;
  std::optional<std::vector<std::string>> description_sentences;
  std::optional<std::vector<double>> option_logits;
  std::optional<std::vector<SampledAnswer>> samples;
  std::string model_id;
  std::string condition;
  Json metadata = Json::object();

  std::size_t option_count() const { return options ? options->size() : 0; }
  bool has_labeled_logits() const { return option_logits.has_value() && gold_index.has_value(); }

  bool operator==(const ResponseRecord&) const = default;
};

struct DatasetManifest {
  std::string name;
  TaskKind task_kind = TaskKind::multiple_choice;
  std::size_t record_count = 0;
  std::string source_path;
};

// Checks every ResponseRecord invariant; throws ValidationError naming the field.
void validate_record(const ResponseRecord& record);

ResponseRecord parse_record(std::string_view line, std::size_t line_number = 0);
ResponseRecord record_from_json(const Json& object, std::size_t line_number = 0);
Json record_to_json(const ResponseRecord& record);
std::string serialize_record(const ResponseRecord& record);

// Letter for option index: 0 -> "A".
std::string option_letter(std::size_t index);

enum class ErrorPolicy { fail_fast, skip };

struct LineError {
  std::size_t line = 0;
  std::string field;  // empty for JSON syntax/type errors
  std::string message;
};

struct Dataset {
  std::vector<ResponseRecord> records;
  DatasetManifest manifest;
  std::vector<LineError> errors;
};

/// Streams valid records in file order. Blank lines are ignored. Returns the
/// per-line errors encountered (only possible under ErrorPolicy::skip).
std::vector<LineError> for_each_record(const std::string& path, TaskKind kind, ErrorPolicy policy,
                                       const std::function<void(ResponseRecord&&)>& sink);

Dataset load_dataset(const std::string& path, TaskKind kind,
                     ErrorPolicy policy = ErrorPolicy::fail_fast);

void write_records(const std::string& path, const std::vector<ResponseRecord>& records);

}  // namespace calkit
