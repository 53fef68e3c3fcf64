#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "text_format.hpp"

namespace uqno {

inline constexpr const char* kDatasetFormat = "uqno-dataset";
inline constexpr int kDatasetVersion = 1;

/// JSON Lines: a header object, then one {"grid","a","u"} object per pair.
inline std::string dataset_to_jsonl(const Dataset& d) {
  std::string out = JsonObjectWriter()
                        .field("format", kDatasetFormat)
                        .field("version", kDatasetVersion)
                        .field("split", std::string(to_string(d.split())))
                        .str();
  out += '\n';
  for (const auto& p : d.pairs()) {
    out += JsonObjectWriter()
               .field("grid", p.grid().points())
               .field("a", p.input().values())
               .field("u", p.output().values())
               .str();
    out += '\n';
  }
  return out;
}

namespace detail {

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& field,
                                    const std::string& why) {
  throw ParseError("line " + std::to_string(line) + ", field \"" + field + "\": " + why);
}

inline std::vector<double> real_array(const nlohmann::json& obj, const char* key,
                                      std::size_t line) {
  if (!obj.contains(key)) parse_fail(line, key, "missing");
  const auto& arr = obj.at(key);
  if (!arr.is_array()) parse_fail(line, key, "expected an array");
  std::vector<double> v;
  v.reserve(arr.size());
  for (const auto& e : arr) {
    if (!e.is_number()) parse_fail(line, key, "expected numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

}  // namespace detail

inline Dataset dataset_from_jsonl(std::istream& in) {
  using nlohmann::json;
  std::string text;
  std::size_t line_no = 0;
  std::vector<FunctionPair> pairs;
  SplitTag split{};
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      detail::parse_fail(line_no, "<line>", std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) detail::parse_fail(line_no, "<line>", "expected an object");
    if (!have_header) {
      if (obj.value("format", std::string()) != kDatasetFormat)
        detail::parse_fail(line_no, "format", "expected \"uqno-dataset\"");
      if (!obj.contains("version") || obj["version"] != kDatasetVersion)
        detail::parse_fail(line_no, "version", "unsupported version");
      try {
        split = split_tag_from_string(obj.value("split", std::string()));
      } catch (const InvalidArgument& e) {
        detail::parse_fail(line_no, "split", e.what());
      }
      have_header = true;
      continue;
    }
    auto x = detail::real_array(obj, "grid", line_no);
    auto a = detail::real_array(obj, "a", line_no);
    auto u = detail::real_array(obj, "u", line_no);
    if (a.size() != x.size()) detail::parse_fail(line_no, "a", "length differs from grid");
    if (u.size() != x.size()) detail::parse_fail(line_no, "u", "length differs from grid");
    try {
      Grid g(std::move(x));
      pairs.emplace_back(GridFunction(g, std::move(a)), GridFunction(g, std::move(u)));
    } catch (const InvalidArgument& e) {
      detail::parse_fail(line_no, "grid", e.what());
    }
  }
  if (!have_header) throw ParseError("line 1, field \"format\": missing header");
  if (pairs.empty()) throw ParseError("dataset must be nonempty");
  return Dataset(std::move(pairs), split);
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << dataset_to_jsonl(d);
  if (!out) throw Error("write failed: " + path.string());
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("dataset not found: " + path.string());
  try {
    return dataset_from_jsonl(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace uqno
