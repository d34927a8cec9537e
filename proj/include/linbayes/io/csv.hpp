#pragma once

#include "linbayes/core.hpp"
#include "linbayes/mesh.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace linbayes::io {

/// %.17g: round-trips every double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// RFC-4180 style table: header row, comma separated, CRLF line ends.
class CsvWriter {
public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row_strings(header); }

  void row(std::initializer_list<double> values) { row(std::vector<double>(values)); }
  void row(const std::vector<double>& values) {
    if (values.size() != columns_)
      throw InvalidArgument("CsvWriter: row width does not match the header");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i)
        text_ += ',';
      text_ += format_double(values[i]);
    }
    text_ += "\r\n";
  }

  const std::string& text() const noexcept { return text_; }

private:
  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i)
        text_ += ',';
      text_ += cells[i];
    }
    text_ += "\r\n";
  }

  std::size_t columns_;
  std::string text_;
};

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out)
    throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Nodal field with coordinates inline: x[,y],value.
inline std::string field_csv(const Mesh& mesh, const Vector& values) {
  require_dim("field_csv", mesh.num_nodes(), values.size());
  CsvWriter w(mesh.dim() == 1 ? std::vector<std::string>{"x", "value"} : std::vector<std::string>{"x", "y", "value"});
  for (Index i = 0; i < mesh.num_nodes(); ++i) {
    const Point& p = mesh.node(i);
    if (mesh.dim() == 1)
      w.row({p[0], values[i]});
    else
      w.row({p[0], p[1], values[i]});
  }
  return w.text();
}

/// Numeric table parsed back from CsvWriter output.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name)
        return i;
    throw IoError("CSV column '" + name + "' not found");
  }
  Vector column_values(const std::string& name) const {
    const std::size_t c = column(name);
    Vector v(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      v[static_cast<Index>(r)] = rows[r][c];
    return v;
  }
};

inline Table parse_csv(const std::string& text, const std::string& source = "CSV") {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos)
        break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw IoError(source + ": ragged row");
    std::vector<double> row;
    for (const std::string& c : cells) {
      double v = 0.0;
      const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
      if (res.ec != std::errc() || res.ptr != c.data() + c.size())
        throw IoError(source + ": malformed number '" + c + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (first)
    throw IoError(source + ": empty file");
  return t;
}

inline Table read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

} // namespace linbayes::io
