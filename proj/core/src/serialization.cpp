#include "cotd/serialization.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <unordered_set>

namespace cotd {
namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ValidationError("unknown field '" + key + "'", 0, key);
  }
}

const json& require(const json& j, const char* key) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'", 0, key);
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw ValidationError(std::string("'") + key + "' must be a string", 0, key);
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(std::string("'") + key + "' must be a string", 0, key);
  return it->get<std::string>();
}

char parse_letter(const json& v, const char* field) {
  if (!v.is_string() || v.get<std::string>().size() != 1 ||
      !is_option_letter(v.get<std::string>()[0])) {
    throw ValidationError(std::string("'") + field + "' must be a single letter A-Z", 0, field);
  }
  return v.get<std::string>()[0];
}

std::optional<char> optional_letter(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return parse_letter(*it, key);
}

json letter_or_null(const std::optional<char>& c) {
  return c ? json(std::string(1, *c)) : json(nullptr);
}

json string_or_null(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace

std::string canonical(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::strict); }

json to_json(const Sample& s) {
  json options = json::array();
  for (const auto& o : s.options) {
    options.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
  }
  return {{"id", s.id},
          {"question", s.question},
          {"options", std::move(options)},
          {"media",
           {{"video_ref", string_or_null(s.media.video_ref)},
            {"audio_ref", string_or_null(s.media.audio_ref)}}},
          {"gold_answer", letter_or_null(s.gold_answer)},
          {"category", string_or_null(s.category)}};
}

json to_json(const Trace& t) {
  return {{"text", t.text},
          {"extracted_answer", letter_or_null(t.extracted_answer)},
          {"raw_choice_index", t.raw_choice_index}};
}

json to_json(const TraceSet& t) {
  json traces = json::array();
  for (const auto& tr : t.traces) traces.push_back(to_json(tr));
  return {{"sample_id", t.sample_id},
          {"traces", std::move(traces)},
          {"consensus", letter_or_null(t.consensus)},
          {"retained", t.retained}};
}

json to_json(const VerifiedTrace& v) {
  return {{"sample_id", v.sample_id},
          {"trace_text", v.trace_text},
          {"teacher_answer", std::string(1, v.teacher_answer)},
          {"verdict", std::string(to_string(v.verdict))},
          {"checker_raw", v.checker_raw}};
}

Sample sample_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  if (strict) reject_unknown(j, {"id", "question", "options", "media", "gold_answer", "category"});
  Sample s;
  s.id = require_string(j, "id");
  s.question = require_string(j, "question");
  const json& options = require(j, "options");
  if (!options.is_array()) throw ValidationError("'options' must be an array", 0, "options");
  int index = 0;
  for (const auto& o : options) {
    OptionItem item;
    if (o.is_string()) {
      // Bare strings are labelled positionally.
      item.label = index < kMaxOptions ? letter_at(index) : '?';
      item.text = o.get<std::string>();
    } else if (o.is_object()) {
      if (strict) reject_unknown(o, {"label", "text"});
      item.label = parse_letter(require(o, "label"), "options");
      item.text = require_string(o, "text");
    } else {
      throw ValidationError("option must be a string or {label, text}", 0, "options");
    }
    s.options.push_back(std::move(item));
    ++index;
  }
  if (auto it = j.find("media"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("'media' must be an object", 0, "media");
    if (strict) reject_unknown(*it, {"video_ref", "audio_ref"});
    s.media.video_ref = optional_string(*it, "video_ref");
    s.media.audio_ref = optional_string(*it, "audio_ref");
  }
  s.gold_answer = optional_letter(j, "gold_answer");
  s.category = optional_string(j, "category");
  validate_sample(s);
  return s;
}

Trace trace_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ValidationError("trace must be a JSON object", 0, "traces");
  if (strict) reject_unknown(j, {"text", "extracted_answer", "raw_choice_index"});
  Trace t;
  t.text = require_string(j, "text");
  t.extracted_answer = optional_letter(j, "extracted_answer");
  const json& idx = require(j, "raw_choice_index");
  if (!idx.is_number_integer()) {
    throw ValidationError("'raw_choice_index' must be an integer", 0, "raw_choice_index");
  }
  t.raw_choice_index = idx.get<int>();
  return t;
}

TraceSet trace_set_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  if (strict) reject_unknown(j, {"sample_id", "traces", "consensus", "retained"});
  TraceSet t;
  t.sample_id = require_string(j, "sample_id");
  const json& traces = require(j, "traces");
  if (!traces.is_array()) throw ValidationError("'traces' must be an array", 0, "traces");
  for (const auto& tr : traces) t.traces.push_back(trace_from_json(tr, strict));
  t.consensus = optional_letter(j, "consensus");
  const json& retained = require(j, "retained");
  if (!retained.is_boolean()) throw ValidationError("'retained' must be a boolean", 0, "retained");
  t.retained = retained.get<bool>();
  validate_trace_set(t);
  return t;
}

VerifiedTrace verified_trace_from_json(const json& j, bool strict) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  if (strict) {
    reject_unknown(j, {"sample_id", "trace_text", "teacher_answer", "verdict", "checker_raw"});
  }
  VerifiedTrace v;
  v.sample_id = require_string(j, "sample_id");
  v.trace_text = require_string(j, "trace_text");
  v.teacher_answer = parse_letter(require(j, "teacher_answer"), "teacher_answer");
  v.verdict = verdict_from_string(require_string(j, "verdict"));
  v.checker_raw = require_string(j, "checker_raw");
  return v;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what(), lineno);
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += canonical(r);
    out += '\n';
  }
  write_text_file(path, out);
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sample> validate_manifest(const std::filesystem::path& path, bool strict) {
  std::vector<Sample> samples;
  std::unordered_set<std::string> seen;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    Sample s;
    try {
      s = sample_from_json(j, strict);
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), lineno, e.field());
    }
    if (!seen.insert(s.id).second) {
      throw ValidationError("duplicate id '" + s.id + "'", lineno, "id");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace cotd
