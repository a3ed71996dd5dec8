#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mars::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // source line each row started on (1-based, header included in numbering)
  std::vector<std::size_t> row_lines;

  // index of a header column, -1 when absent
  int column(const std::string& name) const;
};

// RFC 4180: comma separated, double-quote quoting, "" escapes, CRLF or LF.
Table parse(const std::string& text, bool header_required = true);
Table read_file(const std::string& path, bool header_required = true);

std::string escape_field(const std::string& field);
void write_file(const std::string& path,
                const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

}  // namespace mars::csv
