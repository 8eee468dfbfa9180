#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "turbolab/errors.hpp"

namespace turbolab::lab {

/// Fixed-format number text (C locale, 12 significant digits) so that equal
/// doubles always give equal bytes.
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

class CsvWriter {
public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : path_(path), os_(path, std::ios::binary) {
    if (!os_) throw ValidationError("cannot write " + path.string());
    write_row(header);
  }

  void row(const std::vector<std::string>& cells) { write_row(cells); }

  template <class... T>
  void values(const T&... v) {
    std::vector<std::string> cells;
    (cells.push_back(cell(v)), ...);
    write_row(cells);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(long long v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
    if (!os_) throw ValidationError("write failed: " + path_.string());
  }

  std::filesystem::path path_;
  std::ofstream os_;
};

}  // namespace turbolab::lab
