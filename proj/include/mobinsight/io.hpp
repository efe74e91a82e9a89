#ifndef MOBINSIGHT_IO_HPP
#define MOBINSIGHT_IO_HPP

// File plumbing shared by every stage: CSV reading, atomic artifact writes,
// content hashing and JSON-lines logging.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mobinsight {

using json = nlohmann::json;

/// Base error for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates its declared schema; carries the offending row.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& file, std::size_t row, const std::string& what)
      : Error(file + ":" + std::to_string(row) + ": " + what), file_(file), row_(row) {}
  const std::string& file() const { return file_; }
  std::size_t row() const { return row_; }

 private:
  std::string file_;
  std::size_t row_;
};

/// A required artifact or input path is absent.
class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const std::filesystem::path& p)
      : Error("missing artifact: " + p.string()), path_(p) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

namespace io {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

/// Splits one RFC 4180 record. Quoted fields may contain separators and
/// doubled quotes; embedded newlines are not supported.
inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based, header is line 1

  std::size_t column(const std::string& name, const std::string& file) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw SchemaError(file, 1, "missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path);
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = parse_csv_line(line);
    if (table.header.empty()) {
      for (auto& f : fields) f = trim(f);
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw SchemaError(path.string(), lineno,
                        "expected " + std::to_string(table.header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(lineno);
  }
  if (table.header.empty()) throw SchemaError(path.string(), 1, "empty file");
  return table;
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t row,
                           const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (trim(s.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw SchemaError(file, row, std::string("invalid ") + what + " '" + s + "'");
}

inline long long parse_int(const std::string& s, const std::string& file, std::size_t row,
                           const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (trim(s.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw SchemaError(file, row, std::string("invalid ") + what + " '" + s + "'");
}

inline bool parse_bool(const std::string& raw, const std::string& file, std::size_t row,
                       const char* what) {
  const std::string s = trim(raw);
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE" || s.empty()) return false;
  throw SchemaError(file, row, std::string("invalid ") + what + " '" + raw + "'");
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string hash_file(const std::filesystem::path& path) {
  return hex64(fnv1a(read_file(path)));
}

/// Writes to a sibling temp file and renames over the target.
inline void write_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string(), 0, e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j, int indent = 1) {
  write_atomic(path, j.dump(indent) + "\n");
}

/// Emits one machine-readable log line on standard error.
inline void log_event(const json& fields) { std::cerr << fields.dump() << std::endl; }

inline void warn(const std::string& msg) {
  log_event({{"level", "warning"}, {"message", msg}});
}

}  // namespace io
}  // namespace mobinsight

#endif  // MOBINSIGHT_IO_HPP
