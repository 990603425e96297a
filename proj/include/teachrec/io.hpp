#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace teachrec {

/// UTC instant with millisecond resolution.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Accepts `YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|+HH:MM|-HH:MM]`; no suffix means UTC.
std::optional<Timestamp> parse_iso8601(std::string_view text);

/// `YYYY-MM-DDTHH:MM:SSZ`, with `.mmm` only when the millisecond part is non-zero.
std::string format_iso8601(Timestamp ts);

namespace csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the source file
  std::vector<std::string> fields;
};

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Index of a header column, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
/// Throws IngestError on an unterminated quote.
std::vector<std::string> split_line(std::string_view line);

/// Reads a UTF-8 CSV file with a mandatory header row. Blank lines are skipped.
Table read_file(const std::filesystem::path& path);

/// Parses CSV text already in memory; `source` is used in error messages.
Table parse(std::string_view text, std::string source);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace csv

/// Writes `contents` to a temporary sibling file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// printf-style `%.*g` formatting of a double.
std::string format_double(double value, int significant_digits = 12);

}  // namespace teachrec
