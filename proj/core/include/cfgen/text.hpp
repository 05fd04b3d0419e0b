#pragma once

// Number formatting and small CSV helpers shared by the persistence code.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cfgen::text {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
/// Fixed notation with `digits` decimals, for human-facing tables.
std::string format_fixed(double v, int digits);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string> split(std::string_view line, char sep);

using CsvRow = std::vector<std::string>;

/// Header row first. Throws DataError if the file cannot be written.
void write_csv(const std::filesystem::path& path, const CsvRow& header, const std::vector<CsvRow>& rows);

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  /// Index of `name` in the header; throws DataError when absent.
  std::size_t column(std::string_view name) const;
};

/// Throws DataError naming the path when the file is missing or ragged.
CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace cfgen::text
