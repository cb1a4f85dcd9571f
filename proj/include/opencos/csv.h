#pragma once

#include <charconv>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace opencos {

/// Shortest text that parses back to the same double.
std::string format_real(double v);

std::vector<std::string_view> split_csv(std::string_view line);

[[noreturn]] void row_error(const std::filesystem::path& path, std::size_t line, const std::string& why);

template <typename T>
bool parse_field(std::string_view s, T& value) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end;
}

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

/// Whole-file CSV read. Every row must have as many fields as the header;
/// blank lines are skipped.
struct CsvFile {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  template <typename T>
  T get(const CsvRow& row, std::size_t column) const {
    T value{};
    if (!parse_field(row.fields.at(column), value)) {
      row_error(path, row.line, "bad " + header.at(column) + " '" + row.fields[column] + "'");
    }
    return value;
  }
};

CsvFile read_csv(const std::filesystem::path& path);

}  // namespace opencos
