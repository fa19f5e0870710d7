#include "calkit/prompts.hpp"

#include <filesystem>

#include "calkit/util.hpp"

namespace calkit {

std::string resolve_image_url(const std::string& ref) {
  if (ref.rfind("http://", 0) == 0 || ref.rfind("https://", 0) == 0 || ref.rfind("data:", 0) == 0) return ref;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(ref, ec)) return ref;
  std::string ext = to_lower_ascii(std::filesystem::path(ref).extension().string());
  std::string mime = "image/png";
  if (ext == ".jpg" || ext == ".jpeg") mime = "image/jpeg";
  else if (ext == ".webp") mime = "image/webp";
  else if (ext == ".gif") mime = "image/gif";
  return "data:" + mime + ";base64," + base64_encode(read_file(ref));
}

std::string options_block(std::span<const std::string> options) {
  std::string out;
  for (std::size_t i = 0; i < options.size(); ++i) out += option_letter(i) + ". " + options[i] + "\n";
  return out;
}

PromptPayload question_prompt(const ResponseRecord& record, std::string_view suffix,
                              std::string_view instruction) {
  PromptPayload p;
  p.text = "Question: " + record.question + "\n";
  if (record.options) p.text += options_block(*record.options);
  if (instruction.empty()) instruction = record.options ? kMultipleChoiceInstruction : kOpenEndedInstruction;
  p.text += std::string(instruction) + "\n";
  p.text += suffix;
  if (record.image_ref) p.image_url = resolve_image_url(*record.image_ref);
  p.tags["record_id"] = record.id;
  if (record.gold_index) p.tags["gold_index"] = std::to_string(*record.gold_index);
  return p;
}

}  // namespace calkit
