#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotd/config.hpp"
#include "cotd/gateway.hpp"
#include "cotd/types.hpp"

namespace cotd {

extern const std::string_view kDefaultAudioPromptTemplate;

struct AudioFocusedPrompt {
  std::string system_text;
  std::string user_text;
  std::vector<Attachment> attachments;  // video only; audio is withheld from the teacher
};

// Renders "question\nA. text\nB. text..." in letter order.
std::string render_question(const Sample& sample);

// Throws ValidationError when the sample has no video_ref.
AudioFocusedPrompt build_prompt(const Sample& sample, std::string_view system_template = {});

/// Pulls an option letter out of free-form model output. In order:
///   1. the content of the first <answer>...</answer> block reduced to a letter,
///   2. the last "answer is (X)" / "answer: X" phrase,
///   3. a final line consisting of a lone letter.
/// The result is upper-case; callers check it against the sample's options.
std::optional<char> extract_answer(std::string_view text);

ChatRequest make_teacher_request(const Sample& sample, const TeacherConfig& config,
                                 std::uint64_t seed);

/// Samples n teacher traces for one sample and applies the unanimity rule.
/// Gold answers are stripped before anything is sent.
TraceSet elicit(const Sample& sample, Gateway& gateway, const TeacherConfig& config,
                std::uint64_t seed);

}  // namespace cotd
