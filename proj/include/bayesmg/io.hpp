#pragma once

// File formats: dense CSV, triplet CSV, binary PGM (P5) and raw posterior
// sample dumps.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bayesmg/errors.hpp"
#include "bayesmg/linalg.hpp"
#include "bayesmg/observations.hpp"

namespace bayesmg {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, const std::string& where) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_index(std::string_view s, const std::string& where) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw IoError(where + ": cannot parse index '" + std::string(s) + "'");
  }
  return v;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError(path + ": cannot open for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  return out;
}

}  // namespace detail

/// Comma-separated rows, no header. Blank lines are skipped; all rows must
/// have the same width.
inline Matrix load_dense_csv(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    std::vector<double> row;
    for (auto field : detail::split_commas(line)) row.push_back(detail::parse_double(field, where));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw IoError(where + ": expected " + std::to_string(rows.front().size()) + " columns, got " +
                    std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return out;
}

inline void write_dense_csv(std::ostream& os, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) os << ',';
      os << detail::format_double(m(i, j));
    }
    os << '\n';
  }
}

inline void save_dense_csv(const std::string& path, const Matrix& m) {
  auto out = detail::open_out(path);
  write_dense_csv(out, m);
  if (!out) throw IoError(path + ": write failed");
}

/// Rows `i,j,value` with 0-based indices. Grid dimensions default to
/// max index + 1.
inline ObservationSet load_triplets(const std::string& path, std::optional<Index> m1 = std::nullopt,
                                    std::optional<Index> m2 = std::nullopt) {
  auto in = detail::open_in(path);
  std::vector<Observation> entries;
  std::string line;
  std::size_t lineno = 0;
  Index max_i = -1;
  Index max_j = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const auto f = detail::split_commas(line);
    if (f.size() != 3) throw IoError(where + ": expected i,j,value");
    const long long i = detail::parse_index(f[0], where);
    const long long j = detail::parse_index(f[1], where);
    if (i < 0 || j < 0) throw IoError(where + ": negative index");
    entries.push_back({{static_cast<Index>(i), static_cast<Index>(j)}, detail::parse_double(f[2], where)});
    max_i = std::max<Index>(max_i, static_cast<Index>(i));
    max_j = std::max<Index>(max_j, static_cast<Index>(j));
  }
  if (entries.empty()) throw IoError(path + ": no triplets");
  const Index rows = m1.value_or(max_i + 1);
  const Index cols = m2.value_or(max_j + 1);
  try {
    return ObservationSet(rows, cols, std::move(entries));
  } catch (const std::invalid_argument& ex) {
    throw IoError(path + ": " + ex.what());
  }
}

inline void write_triplets(std::ostream& os, const ObservationSet& obs) {
  for (const auto& e : obs.entries()) {
    os << e.index.i << ',' << e.index.j << ',' << detail::format_double(e.value) << '\n';
  }
}

inline void save_triplets(const std::string& path, const ObservationSet& obs) {
  auto out = detail::open_out(path);
  write_triplets(out, obs);
  if (!out) throw IoError(path + ": write failed");
}

/// Gray image: raw intensities plus the zero-mean, unit-variance version and
/// the constants to undo it (raw = normalized * scale + offset).
struct PgmImage {
  Matrix raw;
  Matrix normalized;
  double offset = 0.0;
  double scale = 1.0;
  int maxval = 255;

  Matrix denormalize(const Matrix& m) const { return (m.array() * scale + offset).matrix(); }
};

namespace detail {

inline std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw IoError(path + ": truncated PGM header");
  return tok;
}

}  // namespace detail

inline PgmImage load_pgm(const std::string& path) {
  auto in = detail::open_in(path, true);
  if (detail::pgm_token(in, path) != "P5") throw IoError(path + ": not a binary PGM (P5)");
  auto number = [&](const char* what) {
    const std::string tok = detail::pgm_token(in, path);
    const long long v = detail::parse_index(tok, path + " (" + what + ")");
    if (v <= 0) throw IoError(path + ": invalid " + std::string(what));
    return v;
  };
  const long long width = number("width");
  const long long height = number("height");
  const long long maxval = number("maxval");
  if (maxval > 255) throw IoError(path + ": only 8-bit PGM (maxval <= 255) is supported");
  // pgm_token consumed exactly one whitespace byte after maxval.
  std::vector<unsigned char> data(static_cast<std::size_t>(width * height));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size())) throw IoError(path + ": truncated pixel data");

  PgmImage img;
  img.maxval = static_cast<int>(maxval);
  img.raw.resize(static_cast<Index>(height), static_cast<Index>(width));
  for (Index i = 0; i < img.raw.rows(); ++i) {
    for (Index j = 0; j < img.raw.cols(); ++j) {
      const unsigned char px = data[static_cast<std::size_t>(i * width + j)];
      if (px > maxval) throw IoError(path + ": pixel exceeds maxval");
      img.raw(i, j) = px;
    }
  }
  img.offset = img.raw.mean();
  const double var = (img.raw.array() - img.offset).square().mean();
  img.scale = var > 0.0 ? std::sqrt(var) : 1.0;
  img.normalized = ((img.raw.array() - img.offset) / img.scale).matrix();
  return img;
}

/// Writes intensities rounded and clamped to [0, maxval].
inline void save_pgm(const std::string& path, const Matrix& raw, int maxval = 255) {
  detail::require_domain(maxval >= 1 && maxval <= 255, "save_pgm: maxval must lie in [1, 255]");
  detail::require_domain(raw.allFinite(), "save_pgm: non-finite intensity");
  auto out = detail::open_out(path, true);
  out << "P5\n" << raw.cols() << ' ' << raw.rows() << '\n' << maxval << '\n';
  std::vector<unsigned char> data(static_cast<std::size_t>(raw.size()));
  for (Index i = 0; i < raw.rows(); ++i) {
    for (Index j = 0; j < raw.cols(); ++j) {
      const double v = std::clamp(std::round(raw(i, j)), 0.0, static_cast<double>(maxval));
      data[static_cast<std::size_t>(i * raw.cols() + j)] = static_cast<unsigned char>(v);
    }
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError(path + ": write failed");
}

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in, const std::string& path) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw IoError(path + ": truncated sample file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

/// Header: rows and cols as little-endian uint64; then each sample as
/// row-major little-endian float64.
inline void save_samples_binary(const std::string& path, std::span<const Matrix> samples) {
  detail::require_domain(!samples.empty(), "save_samples: no samples");
  auto out = detail::open_out(path, true);
  const Index m1 = samples.front().rows();
  const Index m2 = samples.front().cols();
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m1));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m2));
  for (const auto& x : samples) {
    detail::require_dims(x.rows() == m1 && x.cols() == m2, "save_samples: mixed shapes");
    for (Index i = 0; i < m1; ++i) {
      for (Index j = 0; j < m2; ++j) detail::put_le<double>(out, x(i, j));
    }
  }
  if (!out) throw IoError(path + ": write failed");
}

inline std::vector<Matrix> load_samples_binary(const std::string& path) {
  auto in = detail::open_in(path, true);
  const auto m1 = detail::get_le<std::uint64_t>(in, path);
  const auto m2 = detail::get_le<std::uint64_t>(in, path);
  if (m1 == 0 || m2 == 0) throw IoError(path + ": zero dimension in header");
  std::vector<Matrix> out;
  while (in.peek() != EOF) {
    Matrix x(static_cast<Index>(m1), static_cast<Index>(m2));
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) x(i, j) = detail::get_le<double>(in, path);
    }
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace bayesmg
