#ifndef MARLA_CSV_HPP
#define MARLA_CSV_HPP

#include <charconv>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace marla {

// Shortest representation that round-trips the double exactly; byte-stable
// across runs.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += fields[i];
  }
  return out;
}

inline double parse_double_field(const std::string& s, int line_number) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("line " + std::to_string(line_number) +
                                ": expected a number, got '" + s + "'");
  }
}

inline long parse_int_field(const std::string& s, int line_number) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("line " + std::to_string(line_number) +
                                ": expected an integer, got '" + s + "'");
  }
  return v;
}

}  // namespace marla

#endif  // MARLA_CSV_HPP
