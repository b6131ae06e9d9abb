#include "cotd/verification.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "cotd/elicitation.hpp"

namespace cotd {

const std::string_view kCheckerInstruction =
    "You can hear the attached audio. Answer yes or no: are the audio claims made in the "
    "following reasoning consistent with what is actually audible? Reply with a single word.";

CheckerPrompt build_checker_prompt(const Sample& sample, std::string_view trace_text,
                                   bool include_question) {
  if (!sample.media.audio_ref || sample.media.audio_ref->empty()) {
    throw ValidationError("sample '" + sample.id + "' has no audio_ref for the checker", 0,
                          "media.audio_ref");
  }
  CheckerPrompt prompt;
  prompt.system_text = std::string(kCheckerInstruction);
  if (include_question) {
    prompt.user_text = "Question: " + render_question(sample.without_gold()) + "\n\nReasoning:\n";
  }
  prompt.user_text += trace_text;
  prompt.attachments.push_back({MediaKind::kAudio, *sample.media.audio_ref});
  return prompt;
}

NormalizedVerdict normalize_verdict(std::string_view checker_text) {
  // Lower-case, turn punctuation into separators, then look at the first word.
  std::string cleaned;
  cleaned.reserve(checker_text.size());
  for (unsigned char c : checker_text) {
    cleaned.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : ' ');
  }
  const auto start = cleaned.find_first_not_of(' ');
  std::string first;
  if (start != std::string::npos) {
    const auto end = cleaned.find(' ', start);
    first = cleaned.substr(start, end == std::string::npos ? std::string::npos : end - start);
  }
  NormalizedVerdict v;
  v.verdict = first == "yes" ? Verdict::kAccept : Verdict::kReject;
  v.malformed = first != "yes" && first != "no";
  return v;
}

std::size_t TraceSetVerification::accepted() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
    return r.verdict == Verdict::kAccept;
  }));
}

TraceSetVerification verify_traceset(const TraceSet& trace_set, const Sample& sample,
                                     Gateway& gateway, const CheckerConfig& config,
                                     std::uint64_t seed) {
  if (!trace_set.retained || !trace_set.consensus) {
    throw ValidationError("only retained trace sets are verified", 0, "retained");
  }
  const Sample visible = sample.without_gold();
  TraceSetVerification out;
  for (std::size_t i = 0; i < trace_set.traces.size(); ++i) {
    const auto& trace = trace_set.traces[i];
    const CheckerPrompt prompt = build_checker_prompt(visible, trace.text, config.include_question);
    ChatRequest request;
    request.model_name = config.model_name;
    request.messages.push_back({Role::kSystem, prompt.system_text, {}});
    request.messages.push_back({Role::kUser, prompt.user_text, prompt.attachments});
    request.n = 1;
    request.temperature = 0.0;
    request.max_tokens = config.max_tokens;
    request.seed = seed + i;
    char idx[16];
    std::snprintf(idx, sizeof(idx), "%04zu", i);
    try {
      const ChatResponse response = gateway.chat_complete(request, "verify/" + sample.id + "/" + idx);
      const NormalizedVerdict v = normalize_verdict(response.choices.front());
      if (v.malformed) ++out.malformed;
      out.records.push_back(VerifiedTrace{trace_set.sample_id, trace.text, *trace_set.consensus,
                                          v.verdict, response.choices.front()});
    } catch (const GatewayError& e) {
      out.failures.push_back({static_cast<int>(i), e.what()});
    }
  }
  return out;
}

}  // namespace cotd
