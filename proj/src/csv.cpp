#include "mars/csv.hpp"

#include <fstream>
#include <sstream>

#include "mars/errors.hpp"

namespace mars::csv {

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Table parse(const std::string& text, bool header_required) {
  Table out;
  std::vector<std::string> record;
  std::string field;
  std::size_t line = 1;
  std::size_t record_line = 1;
  bool in_quotes = false;
  bool was_quoted = false;  // quote must open at field start
  bool any_char_in_field = false;
  bool have_record_content = false;
  bool seen_header = !header_required;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    any_char_in_field = false;
    was_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    if (!seen_header) {
      out.header = std::move(record);
      seen_header = true;
    } else {
      out.rows.push_back(std::move(record));
      out.row_lines.push_back(record_line);
    }
    record.clear();
    have_record_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (any_char_in_field) {
          throw DataError("csv: stray quote at line " + std::to_string(line));
        }
        in_quotes = true;
        was_quoted = true;
        any_char_in_field = true;
        have_record_content = true;
        break;
      case ',':
        end_field();
        have_record_content = true;
        break;
      case '\r':
        break;  // handled by the following \n
      case '\n':
        ++line;
        if (have_record_content || !record.empty() || !field.empty()) {
          end_record();
        }
        record_line = line;
        break;
      default:
        if (was_quoted) {
          throw DataError("csv: text after closing quote at line " +
                          std::to_string(line));
        }
        field.push_back(c);
        any_char_in_field = true;
        have_record_content = true;
        break;
    }
  }
  if (in_quotes) {
    throw DataError("csv: unterminated quote starting before line " +
                    std::to_string(line));
  }
  if (have_record_content || !record.empty() || !field.empty()) {
    end_record();
  }

  if (header_required) {
    if (out.header.empty()) throw DataError("csv: missing header row");
    for (std::size_t r = 0; r < out.rows.size(); ++r) {
      if (out.rows[r].size() != out.header.size()) {
        throw DataError("csv: line " + std::to_string(out.row_lines[r]) +
                        " has " + std::to_string(out.rows[r].size()) +
                        " fields, expected " + std::to_string(out.header.size()));
      }
    }
  }
  return out;
}

Table read_file(const std::string& path, bool header_required) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), header_required);
}

std::string escape_field(const std::string& field) {
  bool needs = false;
  for (char c : field) {
    if (c == ',' || c == '"' || c == '\n' || c == '\r') {
      needs = true;
      break;
    }
  }
  if (!needs) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

void write_file(const std::string& path,
                const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  auto emit = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i) out << ',';
      out << escape_field(rec[i]);
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace mars::csv
