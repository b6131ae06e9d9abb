#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cotd/config.hpp"
#include "cotd/gateway.hpp"
#include "cotd/types.hpp"

namespace cotd {

extern const std::string_view kCheckerInstruction;

struct CheckerPrompt {
  std::string system_text;
  std::string user_text;                // the trace, verbatim
  std::vector<Attachment> attachments;  // audio only
};

// Throws ValidationError when the sample has no audio_ref.
CheckerPrompt build_checker_prompt(const Sample& sample, std::string_view trace_text,
                                   bool include_question = false);

struct NormalizedVerdict {
  Verdict verdict = Verdict::kReject;
  // True when the response is neither a yes nor a no.
  bool malformed = false;
};

/// Lower-cases, strips punctuation and whitespace; a leading "yes" accepts,
/// anything else rejects.
NormalizedVerdict normalize_verdict(std::string_view checker_text);

struct TraceFailure {
  int trace_index = 0;
  std::string error;
};

struct TraceSetVerification {
  // One record per successfully checked trace, accepted and rejected alike,
  // in trace order.
  std::vector<VerifiedTrace> records;
  std::vector<TraceFailure> failures;
  int malformed = 0;

  std::size_t accepted() const;
};

/// One checker call per trace of a retained TraceSet. Gateway failures mark
/// the trace failed; remaining traces are still checked.
TraceSetVerification verify_traceset(const TraceSet& trace_set, const Sample& sample,
                                     Gateway& gateway, const CheckerConfig& config,
                                     std::uint64_t seed = 0);

}  // namespace cotd
