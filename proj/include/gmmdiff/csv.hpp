#pragma once

// Minimal CSV: comma-separated, no quoting (fields must not contain commas
// or line breaks), LF line endings, mandatory header. Lines starting with '#'
// before the header are kept as comments. Reals are written with 17
// significant digits so they parse back to the same double.

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gmmdiff/error.hpp"

namespace gmmdiff {

struct CsvTable {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(ErrorCode::IoError, "not a number: '" + s + "'");
  return v;
}

namespace detail {
inline void write_fields(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\n\r") != std::string::npos)
      throw Error(ErrorCode::IoError, "CSV field contains a separator: '" + fields[i] + "'");
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) return out;
    start = comma + 1;
  }
}
}  // namespace detail

inline void write_csv(std::ostream& out, const CsvTable& t) {
  if (t.header.empty()) throw Error(ErrorCode::IoError, "CSV header is mandatory");
  for (const auto& c : t.comments) {
    if (c.find('\n') != std::string::npos) throw Error(ErrorCode::IoError, "comment contains a line break");
    out << '#' << c << '\n';
  }
  detail::write_fields(out, t.header);
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw Error(ErrorCode::IoError, "row width does not match header");
    detail::write_fields(out, r);
  }
}

inline std::string to_csv_string(const CsvTable& t) {
  std::ostringstream out;
  write_csv(out, t);
  return out.str();
}

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') throw Error(ErrorCode::IoError, "CRLF line endings are not accepted");
    if (!have_header && !line.empty() && line.front() == '#') {
      t.comments.push_back(line.substr(1));
      continue;
    }
    if (!have_header) {
      t.header = detail::split_fields(line);
      have_header = true;
      continue;
    }
    auto fields = detail::split_fields(line);
    if (fields.size() != t.header.size())
      throw Error(ErrorCode::IoError, "row " + std::to_string(t.rows.size() + 1) + " has " +
                                          std::to_string(fields.size()) + " fields, header has " +
                                          std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw Error(ErrorCode::IoError, "missing CSV header");
  return t;
}

inline CsvTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

inline void write_csv_file(const std::string& path, const CsvTable& t) {
  const std::string text = to_csv_string(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write to '" + path + "' failed");
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_csv(in);
}

}  // namespace gmmdiff
