#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotd/types.hpp"

namespace cotd {

using json = nlohmann::json;

// Canonical form: sorted keys, compact separators, UTF-8 passed through.
std::string canonical(const json& j);

json to_json(const Sample& s);
json to_json(const Trace& t);
json to_json(const TraceSet& t);
json to_json(const VerifiedTrace& v);

// Parsers throw ValidationError naming the offending field. With `strict`,
// unknown keys are rejected as well.
Sample sample_from_json(const json& j, bool strict = false);
Trace trace_from_json(const json& j, bool strict = false);
TraceSet trace_set_from_json(const json& j, bool strict = false);
VerifiedTrace verified_trace_from_json(const json& j, bool strict = false);

template <typename T>
struct Codec;

template <>
struct Codec<Sample> {
  static json encode(const Sample& s) { return to_json(s); }
  static Sample decode(const json& j, bool strict) { return sample_from_json(j, strict); }
};
template <>
struct Codec<TraceSet> {
  static json encode(const TraceSet& s) { return to_json(s); }
  static TraceSet decode(const json& j, bool strict) { return trace_set_from_json(j, strict); }
};
template <>
struct Codec<VerifiedTrace> {
  static json encode(const VerifiedTrace& s) { return to_json(s); }
  static VerifiedTrace decode(const json& j, bool strict) {
    return verified_trace_from_json(j, strict);
  }
};
template <>
struct Codec<Trace> {
  static json encode(const Trace& s) { return to_json(s); }
  static Trace decode(const json& j, bool strict) { return trace_from_json(j, strict); }
};

template <typename T>
std::string serialize(const T& record) {
  return canonical(Codec<T>::encode(record));
}

template <typename T>
T parse(std::string_view text, bool strict = false) {
  return Codec<T>::decode(json::parse(text), strict);
}

template <typename T>
T round_trip(const T& record) {
  return parse<T>(serialize(record), true);
}

// Reads every non-empty line of a JSONL file as a json value. Parse errors
// are reported as ValidationError with the 1-based line number.
std::vector<json> read_jsonl(const std::filesystem::path& path);

template <typename T>
std::vector<T> read_records(const std::filesystem::path& path, bool strict = false) {
  std::vector<T> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(Codec<T>::decode(j, strict));
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), line, e.field());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(Codec<T>::encode(r));
  write_jsonl(path, rows);
}

void write_text_file(const std::filesystem::path& path, std::string_view contents);
std::string read_text_file(const std::filesystem::path& path);

/// Loads a samples.jsonl manifest, enforcing per-record invariants and id
/// uniqueness. The first violation is reported with its line number.
std::vector<Sample> validate_manifest(const std::filesystem::path& path, bool strict = false);

}  // namespace cotd
