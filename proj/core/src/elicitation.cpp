#include "cotd/elicitation.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

namespace cotd {

const std::string_view kDefaultAudioPromptTemplate =
    "You are shown a silent video clip. You cannot hear it, so reason about what would be "
    "AUDIBLE in this scene: name the visible sound sources, when each would sound, and how the "
    "sounds relate to the question. Think step by step inside <think></think> tags, then give "
    "only the letter of the correct option inside <answer></answer> tags.";

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

char upper(char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); }

// "B", "(B)", "b.", "B) thunder" -> 'B'.
std::optional<char> reduce_to_letter(std::string_view content) {
  content = trim(content);
  while (!content.empty() && (content.front() == '(' || content.front() == '[')) {
    content.remove_prefix(1);
    content = trim(content);
  }
  if (content.empty() || !std::isalpha(static_cast<unsigned char>(content.front()))) {
    return std::nullopt;
  }
  if (content.size() > 1 && is_alnum(content[1])) return std::nullopt;
  return upper(content.front());
}

std::optional<char> from_answer_tag(std::string_view text) {
  const std::string folded = lower(text);
  const auto open = folded.find("<answer>");
  if (open == std::string::npos) return std::nullopt;
  const auto start = open + 8;
  const auto close = folded.find("</answer>", start);
  if (close == std::string::npos) return std::nullopt;
  return reduce_to_letter(text.substr(start, close - start));
}

std::optional<char> from_phrase(std::string_view text) {
  static const std::regex kPhrase(
      R"(answer\s*(?:is|:)\s*:?\s*[\(\[]?\s*([a-z])\s*[\)\]]?(?![a-z0-9]))",
      std::regex::icase | std::regex::ECMAScript);
  std::optional<char> last;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kPhrase); it != std::sregex_iterator();
       ++it) {
    last = upper((*it)[1].str()[0]);
  }
  return last;
}

std::optional<char> from_trailing_line(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  const auto nl = text.find_last_of('\n');
  std::string_view line = trim(nl == std::string_view::npos ? text : text.substr(nl + 1));
  static const std::regex kLone(R"(^[\(\[]?([a-zA-Z])[\)\]]?[.:]?$)");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_match(line.begin(), line.end(), m, kLone)) return upper(m[1].str()[0]);
  return std::nullopt;
}

}  // namespace

std::string render_question(const Sample& sample) {
  std::string out = sample.question;
  for (const auto& o : sample.options) {
    out += '\n';
    out += o.label;
    out += ". ";
    out += o.text;
  }
  return out;
}

AudioFocusedPrompt build_prompt(const Sample& sample, std::string_view system_template) {
  if (!sample.media.video_ref || sample.media.video_ref->empty()) {
    throw ValidationError("sample '" + sample.id + "' has no video_ref to show the teacher", 0,
                          "media.video_ref");
  }
  AudioFocusedPrompt prompt;
  prompt.system_text =
      std::string(system_template.empty() ? kDefaultAudioPromptTemplate : system_template);
  prompt.user_text = render_question(sample.without_gold());
  prompt.attachments.push_back({MediaKind::kVideo, *sample.media.video_ref});
  return prompt;
}

std::optional<char> extract_answer(std::string_view text) {
  if (auto c = from_answer_tag(text)) return c;
  if (auto c = from_phrase(text)) return c;
  return from_trailing_line(text);
}

ChatRequest make_teacher_request(const Sample& sample, const TeacherConfig& config,
                                 std::uint64_t seed) {
  const AudioFocusedPrompt prompt = build_prompt(sample, config.prompt_template);
  ChatRequest request;
  request.model_name = config.model_name;
  request.messages.push_back({Role::kSystem, prompt.system_text, {}});
  request.messages.push_back({Role::kUser, prompt.user_text, prompt.attachments});
  request.n = config.n_traces;
  request.temperature = config.temperature;
  request.max_tokens = config.max_tokens;
  request.seed = seed;
  return request;
}

TraceSet elicit(const Sample& sample, Gateway& gateway, const TeacherConfig& config,
                std::uint64_t seed) {
  const Sample visible = sample.without_gold();
  const ChatResponse response =
      gateway.chat_complete(make_teacher_request(visible, config, seed), "elicit/" + sample.id);
  std::vector<Trace> traces;
  traces.reserve(response.choices.size());
  for (std::size_t i = 0; i < response.choices.size(); ++i) {
    Trace t;
    t.text = response.choices[i];
    t.extracted_answer = extract_answer(t.text);
    if (t.extracted_answer && !visible.has_option(*t.extracted_answer)) t.extracted_answer.reset();
    t.raw_choice_index = static_cast<int>(i);
    traces.push_back(std::move(t));
  }
  return TraceSet::from_traces(sample.id, std::move(traces));
}

}  // namespace cotd
