#pragma once

#include <span>
#include <string>
#include <string_view>

#include "calkit/model_client.hpp"
#include "calkit/record_store.hpp"

namespace calkit {

inline constexpr std::string_view kMultipleChoiceInstruction =
    "Answer with the option's letter from the given choices directly.";
inline constexpr std::string_view kOpenEndedInstruction = "Answer the question using a single word or phrase.";
// Appended when refusals are encouraged ("prompting" condition of the IDK protocol).
inline constexpr std::string_view kIdkInstruction =
    "If you don't know the answer, please say \"I don't know\" instead of guessing.";
inline constexpr std::string_view kDefaultSuffix = "Answer:";

// http(s) and data: URIs pass through; an existing local file becomes a
// base64 data: URI; anything else is passed through unchanged.
std::string resolve_image_url(const std::string& ref);

// "A. first\nB. second\n"
std::string options_block(std::span<const std::string> options);

/// Question prompt for a logged record:
///   Question: ...\n[A. ...\n]...[instruction\n]<suffix>
/// Tags carry record_id and, when known, gold_index.
PromptPayload question_prompt(const ResponseRecord& record, std::string_view suffix = kDefaultSuffix,
                              std::string_view instruction = {});

}  // namespace calkit
