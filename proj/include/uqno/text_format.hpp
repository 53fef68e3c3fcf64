#pragma once

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace uqno {

/// Decimal text with 17 significant digits; parses back to the same double.
inline std::string format_real(double v) {
  if (!std::isfinite(v)) throw InvalidArgument("cannot serialize non-finite number");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void append_real_array(std::string& out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_real(values[i]);
  }
  out += ']';
}

/// Minimal writer for the flat JSON documents this project emits. nlohmann/json
/// is used for parsing; it is not used here because it prints the shortest
/// round-trip form rather than a fixed 17 digits.
class JsonObjectWriter {
 public:
  JsonObjectWriter& field(const std::string& key, const std::string& value) {
    key_(key);
    out_ += '"';
    out_ += value;
    out_ += '"';
    return *this;
  }
  JsonObjectWriter& field(const std::string& key, const char* value) {
    return field(key, std::string(value));
  }
  JsonObjectWriter& field(const std::string& key, double value) {
    key_(key);
    out_ += format_real(value);
    return *this;
  }
  JsonObjectWriter& field(const std::string& key, long long value) {
    key_(key);
    out_ += std::to_string(value);
    return *this;
  }
  JsonObjectWriter& field(const std::string& key, int value) {
    return field(key, static_cast<long long>(value));
  }
  JsonObjectWriter& field(const std::string& key, std::span<const double> values) {
    key_(key);
    append_real_array(out_, values);
    return *this;
  }
  JsonObjectWriter& raw(const std::string& key, const std::string& json) {
    key_(key);
    out_ += json;
    return *this;
  }
  std::string str() const { return out_ + '}'; }

 private:
  void key_(const std::string& key) {
    out_ += first_ ? "" : ",";
    first_ = false;
    out_ += '"';
    out_ += key;
    out_ += "\":";
  }
  std::string out_ = "{";
  bool first_ = true;
};

}  // namespace uqno
