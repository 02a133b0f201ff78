#pragma once

// File formats shared by the library and the command line tool.
//
// Binary matrix: one line of compact JSON terminated by '\n', followed by
// rows*cols little-endian float64 values in column-major order. The header
// always carries "format": "hbloc-matrix", "version", "rows", "cols",
// "dtype", "byte_order" and "layout", plus optional "row_ids", "col_ids",
// "units" and free-form metadata.
//
// CSV: comma separated, '.' decimal point, one header line, values written
// with 17 significant digits so that they round-trip exactly.

#include "hbloc/core.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace hbloc {

/// I/O or format failure on an artifact file.
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode mode = std::ios::out) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, mode);
  if (!f) throw FileError("cannot open for writing: " + p.string());
  f.imbue(std::locale::classic());
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& p, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(p, mode);
  if (!f) throw FileError("cannot open for reading: " + p.string());
  f.imbue(std::locale::classic());
  return f;
}

}  // namespace detail

inline void write_matrix_binary(const std::filesystem::path& path, const Matrix& m, nlohmann::json header = {}) {
  static_assert(std::endian::native == std::endian::little, "binary matrix export assumes a little-endian host");
  if (header.is_null()) header = nlohmann::json::object();
  header["format"] = "hbloc-matrix";
  header["version"] = 1;
  header["rows"] = m.rows();
  header["cols"] = m.cols();
  header["dtype"] = "float64";
  header["byte_order"] = "little";
  header["layout"] = "column_major";
  auto f = detail::open_out(path, std::ios::out | std::ios::binary);
  const std::string line = header.dump() + "\n";
  f.write(line.data(), static_cast<std::streamsize>(line.size()));
  f.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!f) throw FileError("write failed: " + path.string());
}

struct BinaryMatrix {
  Matrix data;
  nlohmann::json header;
};

inline BinaryMatrix read_matrix_binary(const std::filesystem::path& path) {
  auto f = detail::open_in(path, std::ios::in | std::ios::binary);
  std::string line;
  if (!std::getline(f, line)) throw FileError("missing header: " + path.string());
  BinaryMatrix out;
  try {
    out.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FileError("bad matrix header in " + path.string() + ": " + e.what());
  }
  if (out.header.value("format", "") != "hbloc-matrix" || out.header.value("dtype", "") != "float64")
    throw FileError("not an hbloc float64 matrix: " + path.string());
  const Index rows = out.header.at("rows"), cols = out.header.at("cols");
  out.data.resize(rows, cols);
  f.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols));
  if (f.gcount() != static_cast<std::streamsize>(sizeof(double) * rows * cols))
    throw FileError("truncated matrix payload: " + path.string());
  return out;
}

/// Writes named columns of equal length; an optional leading integer index column.
inline void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                              const std::vector<Vector>& columns, const std::string& index_name = "index") {
  require_dims(names.size() == columns.size(), "write_columns_csv: names/columns mismatch");
  const Index n = columns.empty() ? 0 : columns[0].size();
  for (const auto& c : columns) require_dims(c.size() == n, "write_columns_csv: ragged columns");
  auto f = detail::open_out(path);
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  f << index_name;
  for (const auto& s : names) f << ',' << s;
  f << '\n';
  for (Index i = 0; i < n; ++i) {
    f << i;
    for (const auto& c : columns) f << ',' << c[i];
    f << '\n';
  }
  if (!f) throw FileError("write failed: " + path.string());
}

inline void write_vector_csv(const std::filesystem::path& path, const std::string& name, const Vector& v) {
  write_columns_csv(path, {name}, {v});
}

struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;

  Vector column(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return Eigen::Map<const Vector>(columns[j].data(), static_cast<Index>(columns[j].size()));
    throw FileError("missing CSV column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  auto f = detail::open_in(path);
  CsvTable t;
  std::string line;
  if (!std::getline(f, line)) throw FileError("empty CSV: " + path.string());
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.names.push_back(cell);
  }
  t.columns.resize(t.names.size());
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ss.imbue(std::locale::classic());
    std::string cell;
    std::size_t j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= t.names.size()) throw FileError(path.string() + ":" + std::to_string(lineno) + ": too many fields");
      try {
        t.columns[j].push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FileError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
      ++j;
    }
    if (j != t.names.size()) throw FileError(path.string() + ":" + std::to_string(lineno) + ": too few fields");
  }
  return t;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto f = detail::open_out(path);
  f << j.dump(2) << '\n';
  if (!f) throw FileError("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  auto f = detail::open_in(path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FileError(path.string() + ": " + e.what());
  }
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace hbloc
