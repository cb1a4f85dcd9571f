#include "opencos/csv.h"

#include <cstdio>
#include <fstream>

namespace opencos {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

void row_error(const std::filesystem::path& path, std::size_t line, const std::string& why) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + why);
}

CsvFile read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  CsvFile file;
  file.path = path;
  std::string line;
  if (!std::getline(is, line)) row_error(path, 1, "missing header");
  for (auto f : split_csv(line)) file.header.emplace_back(f);
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    CsvRow row{line_no, {}};
    for (auto f : split_csv(line)) row.fields.emplace_back(f);
    if (row.fields.size() != file.header.size()) {
      row_error(path, line_no,
                "expected " + std::to_string(file.header.size()) + " fields, got " + std::to_string(row.fields.size()));
    }
    file.rows.push_back(std::move(row));
  }
  return file;
}

}  // namespace opencos
