#include "cotd/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "cotd/rng.hpp"

namespace cotd::synthetic {
namespace {

std::string join(const std::vector<std::string>& events, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i) out += sep;
    out += events[i];
  }
  return out;
}

bool is_event(std::string_view w) {
  return std::find(kEvents.begin(), kEvents.end(), w) != kEvents.end();
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::size_t event_index(std::string_view e) {
  return static_cast<std::size_t>(std::find(kEvents.begin(), kEvents.end(), e) - kEvents.begin());
}

std::string pick_event(Rng& rng) { return std::string(kEvents[rng.below(kEvents.size())]); }

const Attachment* find_attachment(const ChatRequest& request, MediaKind kind) {
  for (const auto& m : request.messages) {
    for (const auto& a : m.attachments) {
      if (a.kind == kind) return &a;
    }
  }
  return nullptr;
}

const ChatMessage* user_message(const ChatRequest& request) {
  for (const auto& m : request.messages) {
    if (m.role == Role::kUser) return &m;
  }
  return nullptr;
}

// Splits "question\nA. text\nB. text" back into its parts.
std::pair<std::string, std::vector<OptionItem>> parse_rendered(std::string_view text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) lines.push_back(line);
  std::string question = lines.empty() ? std::string() : lines.front();
  std::vector<OptionItem> options;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& l = lines[i];
    if (l.size() >= 3 && is_option_letter(l[0]) && l[1] == '.' && l[2] == ' ') {
      options.push_back({l[0], l.substr(3)});
    }
  }
  return {question, options};
}

std::string think_block(std::string_view text) {
  const auto open = text.find("<think>");
  if (open == std::string_view::npos) return std::string(text);
  const auto close = text.find("</think>", open);
  return std::string(text.substr(open + 7, close == std::string_view::npos
                                               ? std::string_view::npos
                                               : close - open - 7));
}

std::vector<std::string> teacher_traces(const ChatRequest& request, std::uint64_t seed,
                                        const SyntheticConfig& config) {
  const Attachment* video = find_attachment(request, MediaKind::kVideo);
  const ChatMessage* user = user_message(request);
  const auto events = video ? events_from_ref(video->uri) : std::nullopt;
  std::vector<std::string> out;
  if (!events || !user) {
    for (int i = 0; i < request.n; ++i) out.emplace_back("I cannot see the clip.");
    return out;
  }
  const auto [question, options] = parse_rendered(user->content);
  const auto truth = oracle_answer(*events, question, options);

  for (int i = 0; i < request.n; ++i) {
    Rng rng(derive_seed(seed, "teacher-trace", static_cast<std::uint64_t>(i)));
    char letter = truth.value_or('A');
    if (truth && options.size() > 1 && !rng.bernoulli(config.teacher_accuracy)) {
      auto wrong = rng.below(options.size() - 1);
      if (static_cast<int>(wrong) >= letter_index(*truth)) ++wrong;
      letter = options[wrong].label;
    }
    std::vector<std::string> said = *events;
    if (rng.bernoulli(config.hallucination_rate)) {
      std::vector<std::string> absent;
      for (auto e : kEvents) {
        if (std::find(events->begin(), events->end(), e) == events->end()) absent.emplace_back(e);
      }
      const auto at = rng.below(said.size() + 1);
      said.insert(said.begin() + static_cast<std::ptrdiff_t>(at), absent[rng.below(absent.size())]);
    }
    out.push_back("<think>I hear " + join(said, " ") +
                  "</think><answer>" + std::string(1, letter) + "</answer>");
  }
  return out;
}

std::vector<std::string> checker_verdicts(const ChatRequest& request) {
  const Attachment* audio = find_attachment(request, MediaKind::kAudio);
  const ChatMessage* user = user_message(request);
  const auto events = audio ? events_from_ref(audio->uri) : std::nullopt;
  std::string verdict;
  if (!events || !user) {
    verdict = "I cannot hear the clip.";
  } else {
    std::string_view reasoning = user->content;
    if (const auto at = reasoning.find("Reasoning:\n"); at != std::string_view::npos) {
      reasoning.remove_prefix(at + 11);
    }
    verdict = "Yes";
    for (const auto& e : claimed_events(reasoning)) {
      if (std::find(events->begin(), events->end(), e) == events->end()) {
        verdict = "No, there is no " + e + " in the audio.";
        break;
      }
    }
  }
  return std::vector<std::string>(static_cast<std::size_t>(request.n), verdict);
}

}  // namespace

std::string video_ref(const std::vector<std::string>& events) {
  return std::string(kVideoPrefix) + join(events, "-");
}

std::string audio_ref(const std::vector<std::string>& events) {
  return std::string(kAudioPrefix) + join(events, "-");
}

std::optional<std::vector<std::string>> events_from_ref(std::string_view uri) {
  for (auto prefix : {kVideoPrefix, kAudioPrefix}) {
    if (uri.substr(0, prefix.size()) != prefix) continue;
    std::vector<std::string> events;
    std::string_view rest = uri.substr(prefix.size());
    while (!rest.empty()) {
      const auto dash = rest.find('-');
      const std::string_view e = rest.substr(0, dash);
      if (!is_event(e)) return std::nullopt;
      events.emplace_back(e);
      if (dash == std::string_view::npos) break;
      rest.remove_prefix(dash + 1);
    }
    if (events.empty()) return std::nullopt;
    return events;
  }
  return std::nullopt;
}

Sample make_sample(std::string id, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> scene;
  for (int i = 0; i < kSceneLength; ++i) scene.push_back(pick_event(rng));

  Sample s;
  s.id = std::move(id);
  s.media.video_ref = video_ref(scene);
  s.media.audio_ref = audio_ref(scene);
  std::vector<std::string> texts;
  switch (rng.below(3)) {
    case 0: {
      // Half the time ask about an event from the scene.
      const std::string y = rng.bernoulli(0.5) ? scene[rng.below(scene.size())] : pick_event(rng);
      s.question = "Is " + y + " present?";
      s.category = "presence";
      texts = {"yes", "no"};
      break;
    }
    case 1: {
      const std::string y = rng.bernoulli(0.5) ? scene[rng.below(scene.size())] : pick_event(rng);
      s.question = "How many " + y + "?";
      s.category = "count";
      texts = {"0", "1", "2", "3"};
      break;
    }
    default: {
      const auto k = rng.below(scene.size());
      s.question = "Which sound is at position " + std::to_string(k + 1) + "?";
      s.category = "position";
      texts = {scene[k]};
      while (texts.size() < 4) {
        std::string e = pick_event(rng);
        if (std::find(texts.begin(), texts.end(), e) == texts.end()) texts.push_back(std::move(e));
      }
      // Options follow the canonical event order, so a letter always names
      // the same sound.
      std::sort(texts.begin(), texts.end(), [](const std::string& a, const std::string& b) {
        return event_index(a) < event_index(b);
      });
      break;
    }
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    s.options.push_back({letter_at(static_cast<int>(i)), texts[i]});
  }
  s.gold_answer = oracle_answer(scene, s.question, s.options);
  return s;
}

std::vector<Sample> make_samples(std::string_view id_prefix, int count, std::uint64_t seed) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) {
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%04d", i);
    out.push_back(make_sample(std::string(id_prefix) + suffix,
                              derive_seed(seed, "synthetic-sample", static_cast<std::uint64_t>(i))));
  }
  return out;
}

std::optional<char> oracle_answer(const std::vector<std::string>& events,
                                  std::string_view question_text,
                                  const std::vector<OptionItem>& options) {
  const auto w = words(question_text);
  std::string answer;
  if (w.size() == 3 && w[0] == "is" && w[2] == "present") {
    answer = std::find(events.begin(), events.end(), w[1]) != events.end() ? "yes" : "no";
  } else if (w.size() == 3 && w[0] == "how" && w[1] == "many") {
    answer = std::to_string(std::count(events.begin(), events.end(), w[2]));
  } else if (w.size() == 6 && w[0] == "which" && w[4] == "position") {
    const int k = std::atoi(w[5].c_str());
    if (k < 1 || k > static_cast<int>(events.size())) return std::nullopt;
    answer = events[static_cast<std::size_t>(k - 1)];
  } else {
    return std::nullopt;
  }
  for (const auto& o : options) {
    if (o.text == answer) return o.label;
  }
  return std::nullopt;
}

std::vector<std::string> claimed_events(std::string_view trace_text) {
  std::vector<std::string> out;
  for (auto& w : words(think_block(trace_text))) {
    if (is_event(w)) out.push_back(std::move(w));
  }
  return out;
}

bool hallucinates(std::string_view trace_text, const std::vector<std::string>& events) {
  for (const auto& e : claimed_events(trace_text)) {
    if (std::find(events.begin(), events.end(), e) == events.end()) return true;
  }
  return false;
}

std::shared_ptr<MockBackend> make_backend(const SyntheticConfig& config, std::uint64_t seed) {
  MockScript script;
  script.id = "mock://synthetic";
  script.default_completions = {"I cannot help with that."};
  MockRule teacher;
  teacher.contains = std::string(kVideoPrefix);
  teacher.generator = [config](const ChatRequest& r, std::uint64_t s) {
    return teacher_traces(r, s, config);
  };
  MockRule checker;
  checker.contains = std::string(kAudioPrefix);
  checker.generator = [](const ChatRequest& r, std::uint64_t) { return checker_verdicts(r); };
  script.rules = {std::move(teacher), std::move(checker)};
  return mock_program(std::move(script), seed);
}

}  // namespace cotd::synthetic
