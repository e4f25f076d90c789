#pragma once

// ASCII PLY and headered XYZ text point-cloud files.
//
// PLY: a single `vertex` element whose scalar properties become channels;
// `label` becomes the label vector, uchar colors are scaled to [0, 1].
// XYZ text: first line `# name name ...`, then one whitespace-separated row
// per point.

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "splatnet/cloud.hpp"
#include "splatnet/error.hpp"

namespace splatnet {

enum class CloudFormat { PlyAscii, XyzText };

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_double(std::string_view token, std::size_t line) {
  double value = 0.0;
  const char* first = token.data();
  if (!token.empty() && token.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw ParseError("invalid number '" + std::string(token) + "'", line);
  }
  return value;
}

inline int parse_int(std::string_view token, std::size_t line) {
  const double v = parse_double(token, line);
  if (v != std::floor(v) || std::abs(v) > 2.0e9) {
    throw ParseError("expected an integer, got '" + std::string(token) + "'", line);
  }
  return static_cast<int>(v);
}

inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

inline bool is_integer_type(std::string_view type) {
  return type == "char" || type == "uchar" || type == "short" || type == "ushort" || type == "int" ||
         type == "uint" || type == "int8" || type == "uint8" || type == "int16" ||
         type == "uint16" || type == "int32" || type == "uint32";
}

inline bool is_scalar_type(std::string_view type) {
  return is_integer_type(type) || type == "float" || type == "double" || type == "float32" ||
         type == "float64";
}

inline bool is_color(std::string_view name) {
  return name == "red" || name == "green" || name == "blue";
}

struct Column {
  std::string name;
  std::string type;
};

// Fills a cloud from parsed rows; shared by both formats.
class CloudBuilder {
 public:
  CloudBuilder(std::vector<Column> columns, std::size_t expected)
      : columns_(std::move(columns)), values_(columns_.size()) {
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      for (std::size_t o = 0; o < c; ++o) {
        if (columns_[o].name == columns_[c].name) {
          throw ParseError("duplicate property '" + columns_[c].name + "'", 0);
        }
      }
      if (columns_[c].name == "label") label_col_ = c;
      values_[c].reserve(expected);
    }
  }

  std::size_t width() const noexcept { return columns_.size(); }

  void add_row(const std::vector<std::string_view>& tokens, std::size_t line) {
    if (tokens.size() != columns_.size()) {
      throw ParseError("expected " + std::to_string(columns_.size()) + " values, found " +
                       std::to_string(tokens.size()),
                       line);
    }
    for (std::size_t c = 0; c < tokens.size(); ++c) {
      const Column& col = columns_[c];
      double v = 0.0;
      if (c == label_col_) {
        v = parse_int(tokens[c], line);
      } else {
        v = parse_double(tokens[c], line);
        if (!std::isfinite(v)) throw ParseError("non-finite value", line);
        if (is_color(col.name) && is_integer_type(col.type)) {
          if (v < 0.0 || v > 255.0) throw ParseError("color value outside 0..255", line);
          v /= 255.0;
        } else if (is_color(col.name) && (v < 0.0 || v > 1.0)) {
          throw ParseError("color value outside [0, 1]", line);
        }
      }
      values_[c].push_back(v);
    }
    ++rows_;
  }

  PointCloud finish() && {
    for (const char* required : {"x", "y", "z"}) {
      bool found = false;
      for (const auto& c : columns_) found = found || c.name == required;
      if (!found) throw ParseError(std::string("missing required property '") + required + "'", 0);
    }
    PointCloud cloud(rows_);
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c == label_col_) {
        std::vector<int> labels(values_[c].begin(), values_[c].end());
        cloud.set_labels(std::move(labels));
      } else {
        cloud.set_channel(columns_[c].name, std::move(values_[c]));
      }
    }
    return cloud;
  }

 private:
  std::vector<Column> columns_;
  std::vector<std::vector<double>> values_;
  std::size_t label_col_ = static_cast<std::size_t>(-1);
  std::size_t rows_ = 0;
};

inline PointCloud read_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") throw ParseError("missing 'ply' magic", line_no);
  if (!next()) throw ParseError("missing format line", line_no);
  {
    const auto t = split_ws(line);
    if (t.size() != 3 || t[0] != "format") throw ParseError("malformed format line", line_no);
    if (t[1] != "ascii") throw ParseError("only ASCII PLY is supported", line_no);
  }

  std::vector<Column> columns;
  std::optional<std::size_t> vertex_count;
  bool in_vertex = false;
  bool header_done = false;
  while (next()) {
    const auto t = split_ws(line);
    if (t.empty() || t[0] == "comment" || t[0] == "obj_info") continue;
    if (t[0] == "end_header") {
      header_done = true;
      break;
    }
    if (t[0] == "element") {
      if (t.size() != 3) throw ParseError("malformed element line", line_no);
      const double count = parse_double(t[2], line_no);
      if (count < 0 || count != std::floor(count)) throw ParseError("bad element count", line_no);
      if (t[1] == "vertex") {
        if (vertex_count) throw ParseError("duplicate vertex element", line_no);
        vertex_count = static_cast<std::size_t>(count);
        in_vertex = true;
      } else {
        if (count != 0) throw ParseError("unsupported element '" + std::string(t[1]) + "'", line_no);
        in_vertex = false;
      }
      continue;
    }
    if (t[0] == "property") {
      if (!in_vertex) continue;
      if (t.size() >= 2 && t[1] == "list") throw ParseError("list properties are not supported", line_no);
      if (t.size() != 3 || !is_scalar_type(t[1])) throw ParseError("malformed property line", line_no);
      columns.push_back({std::string(t[2]), std::string(t[1])});
      continue;
    }
    throw ParseError("unexpected header line '" + line + "'", line_no);
  }
  if (!header_done) throw ParseError("missing end_header", line_no);
  if (!vertex_count) throw ParseError("missing vertex element", line_no);

  CloudBuilder builder(std::move(columns), *vertex_count);
  for (std::size_t i = 0; i < *vertex_count; ++i) {
    if (!next()) throw ParseError("unexpected end of file, expected " + std::to_string(*vertex_count) + " vertices", line_no);
    builder.add_row(split_ws(line), line_no);
  }
  while (next()) {
    if (!split_ws(line).empty()) throw ParseError("trailing data after vertices", line_no);
  }
  return std::move(builder).finish();
}

inline PointCloud read_xyz(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<CloudBuilder> builder;
  while (std::getline(in, line)) {
    ++line_no;
    if (!builder) {
      std::string_view header(line);
      if (header.empty() || header.front() != '#') {
        throw ParseError("expected a '# channel ...' header line", line_no);
      }
      std::vector<Column> columns;
      for (auto name : split_ws(header.substr(1))) {
        columns.push_back({std::string(name), name == "label" ? "int" : "double"});
      }
      if (columns.empty()) throw ParseError("header names no channels", line_no);
      builder.emplace(std::move(columns), 0);
      continue;
    }
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    builder->add_row(tokens, line_no);
  }
  if (!builder) throw ParseError("empty file", line_no);
  return std::move(*builder).finish();
}

inline void write_rows(std::ostream& out, const PointCloud& cloud) {
  const auto& names = cloud.channel_names();
  std::vector<std::span<const double>> cols;
  for (const auto& n : names) cols.push_back(cloud.channel(n));
  std::string row;
  for (std::size_t r = 0; r < cloud.size(); ++r) {
    row.clear();
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) row += ' ';
      row += format_double(cols[c][r]);
    }
    if (cloud.has_labels()) {
      if (!cols.empty()) row += ' ';
      row += std::to_string(cloud.labels()[r]);
    }
    row += '\n';
    out << row;
  }
}

}  // namespace detail

inline CloudFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".ply" ? CloudFormat::PlyAscii : CloudFormat::XyzText;
}

inline PointCloud read_cloud(std::istream& in, CloudFormat format) {
  PointCloud cloud = format == CloudFormat::PlyAscii ? detail::read_ply(in) : detail::read_xyz(in);
  try {
    cloud.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(e.what(), 0);
  }
  return cloud;
}

/// Loads a cloud; the format defaults to the file extension (.ply or text).
inline PointCloud load_cloud(const std::filesystem::path& path,
                             std::optional<CloudFormat> format = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return read_cloud(in, format.value_or(format_from_path(path)));
}

/// Writes every channel as a double (shortest round-trip decimal) and labels
/// as integers.
inline void write_cloud(std::ostream& out, const PointCloud& cloud, CloudFormat format) {
  if (format == CloudFormat::PlyAscii) {
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
    for (const auto& n : cloud.channel_names()) out << "property double " << n << '\n';
    if (cloud.has_labels()) out << "property int label\n";
    out << "end_header\n";
  } else {
    out << '#';
    for (const auto& n : cloud.channel_names()) out << ' ' << n;
    if (cloud.has_labels()) out << " label";
    out << '\n';
  }
  detail::write_rows(out, cloud);
}

inline void save_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                       std::optional<CloudFormat> format = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  write_cloud(out, cloud, format.value_or(format_from_path(path)));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace splatnet
