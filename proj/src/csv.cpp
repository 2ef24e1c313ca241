#include "ardm/csv.hpp"

#include "ardm/errors.hpp"

namespace ardm::csv {

namespace {

// Pulls one record starting at pos. Returns false at end of input.
// line_no tracks the physical line of the current position; record_line
// receives the line the record started on.
bool read_record(std::string_view text, std::size_t& pos, long& line_no,
                 std::vector<std::string>& fields, long& record_line) {
  fields.clear();
  if (pos >= text.size()) return false;
  record_line = line_no;

  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;

  auto finish_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
  };

  while (pos < text.size()) {
    char c = text[pos];
    if (in_quotes) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field.push_back('"');
          pos += 2;
        } else {
          in_quotes = false;
          ++pos;
        }
      } else {
        if (c == '\n') ++line_no;
        field.push_back(c);
        ++pos;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_was_quoted) {
          throw ParseError("unexpected quote inside unquoted field",
                           record_line);
        }
        in_quotes = true;
        field_was_quoted = true;
        ++pos;
        break;
      case ',':
        finish_field();
        ++pos;
        break;
      case '\r':
        if (pos + 1 < text.size() && text[pos + 1] == '\n') {
          finish_field();
          pos += 2;
          ++line_no;
          return true;
        }
        field.push_back(c);
        ++pos;
        break;
      case '\n':
        finish_field();
        ++pos;
        ++line_no;
        return true;
      default:
        if (field_was_quoted) {
          throw ParseError("stray characters after closing quote",
                           record_line);
        }
        field.push_back(c);
        ++pos;
        break;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", record_line);
  finish_field();
  return true;
}

}  // namespace

Table read(std::string_view text) {
  Table table;
  std::size_t pos = 0;
  long line_no = 1;
  long record_line = 0;
  std::vector<std::string> fields;

  if (!read_record(text, pos, line_no, fields, record_line)) {
    throw ParseError("empty input: header row required", 1);
  }
  table.header = fields;
  const std::size_t width = table.header.size();

  while (read_record(text, pos, line_no, fields, record_line)) {
    if (fields.size() == 1 && fields[0].empty() && pos >= text.size()) {
      break;  // trailing newline, not a record
    }
    if (fields.size() != width) {
      throw ParseError("ragged row: expected " + std::to_string(width) +
                           " fields, got " + std::to_string(fields.size()),
                       record_line);
    }
    table.rows.push_back(fields);
    table.row_lines.push_back(record_line);
  }
  return table;
}

std::string escape_field(std::string_view field) {
  bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string write_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape_field(fields[i]);
  }
  out.push_back('\n');
  return out;
}

std::string write(const Table& table) {
  std::string out = write_row(table.header);
  for (const auto& row : table.rows) out += write_row(row);
  return out;
}

}  // namespace ardm::csv
