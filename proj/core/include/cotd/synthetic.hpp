#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotd/config.hpp"
#include "cotd/gateway.hpp"
#include "cotd/types.hpp"

namespace cotd::synthetic {

// A toy audio-visual world. Each clip is a sequence of three sound events;
// the video and audio references encode the sequence, e.g.
// "synth://video/rain-dog-siren". The teacher sees only the video reference
// and the checker only the audio one, and both are scripted against the
// hidden event list.

inline constexpr std::array<std::string_view, 4> kEvents = {"rain", "dog", "siren", "bell"};
inline constexpr int kSceneLength = 3;

inline constexpr std::string_view kVideoPrefix = "synth://video/";
inline constexpr std::string_view kAudioPrefix = "synth://audio/";

std::string video_ref(const std::vector<std::string>& events);
std::string audio_ref(const std::vector<std::string>& events);
// Inverse of video_ref/audio_ref; nullopt for foreign URIs.
std::optional<std::vector<std::string>> events_from_ref(std::string_view uri);

// One presence, count or position question about a random scene. The
// category names the question type.
Sample make_sample(std::string id, std::uint64_t seed);
std::vector<Sample> make_samples(std::string_view id_prefix, int count, std::uint64_t seed);

// The correct option letter for a rendered question about `events`.
// `question_text` is the question line without options.
std::optional<char> oracle_answer(const std::vector<std::string>& events,
                                  std::string_view question_text,
                                  const std::vector<OptionItem>& options);

// Event names mentioned inside the <think> block (the whole text when there
// is none), in order.
std::vector<std::string> claimed_events(std::string_view trace_text);

// True when the trace names an event that does not occur in the clip.
bool hallucinates(std::string_view trace_text, const std::vector<std::string>& events);

// Scripted teacher and checker for `mock://synthetic`. The teacher is right
// with probability `teacher_accuracy` per trace and inserts an absent event
// into its reasoning with probability `hallucination_rate`; the checker
// rejects exactly the traces that claim an absent event.
std::shared_ptr<MockBackend> make_backend(const SyntheticConfig& config, std::uint64_t seed);

}  // namespace cotd::synthetic
