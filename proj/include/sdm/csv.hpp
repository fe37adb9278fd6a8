#pragma once

#include "sdm/core.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sdm::csv {

// A parsed CSV file. Lines starting with '#' and blank lines are skipped.
struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based line of each row in the file

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    auto j = column(name);
    if (!j) {
      throw ParseError(source + ": missing required column '" + std::string(name) + "'");
    }
    return *j;
  }

  std::string where(std::size_t row, std::size_t col) const {
    std::ostringstream os;
    os << source << ": row " << (row + 1) << " (line " << line_numbers[row] << "), column '"
       << header[col] << "'";
    return os.str();
  }
};

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(trim(field));
  return out;
}

inline Table parse(std::istream& in, std::string source) {
  Table t;
  t.source = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto fields = split_line(s);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      std::ostringstream os;
      os << t.source << ": line " << lineno << " has " << fields.size() << " fields, header has "
         << t.header.size();
      throw ParseError(os.str());
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) throw ParseError(t.source + ": empty file (no header)");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse(in, path);
}

// Parses a finite double; throws ParseError naming the cell otherwise.
inline double to_double(const Table& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    // from_chars rejects "inf"/"nan" spelled differently on some libcs; fall back.
    try {
      std::size_t used = 0;
      v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ParseError(t.where(row, col) + ": not a number: '" + s + "'");
    }
  }
  if (!std::isfinite(v)) {
    throw ParseError(t.where(row, col) + ": non-finite value '" + s + "'");
  }
  return v;
}

inline long long to_integer(const Table& t, std::size_t row, std::size_t col) {
  const double v = to_double(t, row, col);
  if (v != std::floor(v) || std::abs(v) > 9.0e15) {
    throw ParseError(t.where(row, col) + ": expected an integer, got '" + t.rows[row][col] + "'");
  }
  return static_cast<long long>(v);
}

}  // namespace sdm::csv
