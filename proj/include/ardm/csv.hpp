#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ardm::csv {

// A raw delimited-text table. Fields are untyped strings; the header row is
// mandatory and defines the record width.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based physical line on which each record starts (quoted fields may
  // span lines, so this is not simply row index + 2).
  std::vector<long> row_lines;
};

// RFC 4180 reader. Accepts LF and CRLF line endings; quoted fields may
// contain separators, doubled quotes and line breaks. Throws ParseError on
// ragged rows, unterminated quotes, or stray characters after a closing
// quote, naming the 1-based line where the record starts.
Table read(std::string_view text);

// Quotes a field iff it contains a separator, quote, or line break.
std::string escape_field(std::string_view field);

std::string write_row(const std::vector<std::string>& fields);

// Header plus rows, LF line endings, trailing newline.
std::string write(const Table& table);

}  // namespace ardm::csv
