#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "llm4ng/errors.hpp"

namespace llm4ng {

// Row-major so a node's representation is one contiguous row.
template <class Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;

// Flat tensor block: header {rows, cols, flags} as little-endian u64, then
// row-major float32 data. Flag bit 0 marks L2-normalized rows.
namespace tensor_flags {
inline constexpr std::uint64_t kNormalized = 1ull << 0;
}

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoFailure("truncated tensor header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_tensor_block(std::ostream& os, const Matrix& m,
                               std::uint64_t flags = 0) {
  detail::write_u64_le(os, static_cast<std::uint64_t>(m.rows()));
  detail::write_u64_le(os, static_cast<std::uint64_t>(m.cols()));
  detail::write_u64_le(os, flags);
  std::vector<float> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row[static_cast<std::size_t>(j)] = static_cast<float>(m(i, j));
    }
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!os) throw IoFailure("tensor write failed");
}

inline Matrix read_tensor_block(std::istream& is, std::uint64_t* flags_out = nullptr) {
  const std::uint64_t rows = detail::read_u64_le(is);
  const std::uint64_t cols = detail::read_u64_le(is);
  const std::uint64_t flags = detail::read_u64_le(is);
  if (flags_out) *flags_out = flags;
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::vector<float> row(static_cast<std::size_t>(cols));
  for (std::uint64_t i = 0; i < rows; ++i) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!is) throw IoFailure("truncated tensor data");
    for (std::uint64_t j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<double>(row[static_cast<std::size_t>(j)]);
    }
  }
  return m;
}

inline void save_tensors(const std::string& path,
                         const std::vector<Matrix>& tensors,
                         std::uint64_t flags = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot open for write: " + path);
  for (const auto& t : tensors) write_tensor_block(os, t, flags);
}

inline std::vector<Matrix> load_tensors(const std::string& path,
                                        std::size_t expected_count = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open for read: " + path);
  std::vector<Matrix> out;
  while (is.peek() != std::ifstream::traits_type::eof()) {
    out.push_back(read_tensor_block(is));
  }
  if (expected_count != 0 && out.size() != expected_count) {
    throw IoFailure("expected " + std::to_string(expected_count) +
                    " tensors in " + path + ", found " + std::to_string(out.size()));
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open for read: " + path);
  std::string content((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  return content;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoFailure("cannot open for write: " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!os) throw IoFailure("write failed: " + path);
}

}  // namespace llm4ng
