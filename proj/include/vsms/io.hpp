#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsms/error.hpp"

namespace vsms::io {

// Raw little-endian binary blocks. Matrices are written column-major behind
// an (int64 rows, int64 cols) header.

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorKind::format, "unexpected end of binary stream");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_len = 1u << 26) {
  const auto n = read_pod<std::uint64_t>(is);
  if (n > max_len) throw Error(ErrorKind::format, "string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw Error(ErrorKind::format, "unexpected end of binary stream");
  return s;
}

inline void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  write_pod<std::int64_t>(os, m.rows());
  write_pod<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Eigen::MatrixXd read_matrix(std::istream& is) {
  const auto r = read_pod<std::int64_t>(is);
  const auto c = read_pod<std::int64_t>(is);
  if (r < 0 || c < 0 || (r > 0 && c > (std::int64_t{1} << 40) / r)) throw Error(ErrorKind::format, "matrix shape out of range");
  Eigen::MatrixXd m(r, c);
  is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw Error(ErrorKind::format, "unexpected end of binary stream");
  return m;
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) { write_matrix(os, v); }

inline Eigen::VectorXd read_vector(std::istream& is) {
  Eigen::MatrixXd m = read_matrix(is);
  if (m.cols() != 1 && m.size() != 0) throw Error(ErrorKind::format, "expected a column vector");
  return Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error(ErrorKind::format, "cannot open " + path.string() + " for writing");
  os.precision(17);
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error(ErrorKind::format, "cannot open " + path.string());
  return is;
}

/// Header line then one row per matrix row.
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Eigen::MatrixXd& rows) {
  if (!header.empty() && static_cast<Eigen::Index>(header.size()) != rows.cols())
    throw Error(ErrorKind::invalid_dimension, "CSV header width != column count");
  auto os = open_out(path);
  for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
  if (!header.empty()) os << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) os << (c ? "," : "") << rows(r, c);
    os << '\n';
  }
}

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd rows;
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  auto is = open_in(path);
  CsvTable t;
  std::string line;
  const auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    out.push_back(cur);
    return out;
  };
  if (!std::getline(is, line)) throw Error(ErrorKind::format, "empty CSV file");
  t.header = split(line);
  std::vector<std::vector<double>> data;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorKind::format, "non-numeric CSV cell '" + cell + "'");
      }
    }
    if (row.size() != t.header.size()) throw Error(ErrorKind::format, "ragged CSV row");
    data.push_back(std::move(row));
  }
  t.rows.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < data.size(); ++r)
    for (std::size_t c = 0; c < data[r].size(); ++c) t.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data[r][c];
  return t;
}

/// 64-bit FNV-1a.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t k = 0; k < n; ++k) {
      h_ ^= p[k];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  Fnv1a& add(const T& v) {
    bytes(&v, sizeof(T));
    return *this;
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

}  // namespace vsms::io
