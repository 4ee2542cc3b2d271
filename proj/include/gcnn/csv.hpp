#pragma once

#include <concepts>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gcnn/boxes.hpp"
#include "gcnn/error.hpp"

namespace gcnn {

/// Columns whose values are wall-clock measurements carry this suffix; every
/// other column is reproducible from config and seed.
inline constexpr const char* kNondeterministicSuffix = "_nondet";

/// Minimal RFC 4180 table: CRLF line ends, fields quoted only when needed.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row(std::vector<std::string> fields) {
    if (fields.size() != header_.size())
      throw DimensionError("csv row has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(header_.size()));
    rows_.push_back(std::move(fields));
    return *this;
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  static std::string quote(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string q = "\"";
    for (char c : f) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& fs) {
      for (std::size_t i = 0; i < fs.size(); ++i) out += (i ? "," : "") + quote(fs[i]);
      out += "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parses RFC 4180 text (quoted fields may contain commas, quotes, newlines).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') field += '"', ++i;
      else if (c == '"') quoted = false;
      else field += c;
      continue;
    }
    if (c == '"') {
      quoted = any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string num(double v) { return format_number(v); }
template <std::integral I>
std::string num(I v) {
  return std::to_string(v);
}

}  // namespace gcnn
