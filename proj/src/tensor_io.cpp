#include "tpi/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "tpi/errors.hpp"

namespace tpi::io {
namespace {

constexpr std::array<char, 4> kMagic = {'T', 'P', 'I', '3'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 24)};
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>(bits >> (8 * i));
  out.write(bytes, 8);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
    throw InvalidArgument("tensor container: truncated payload");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::uint32_t checked_u32(Index value, const char* what) {
  if (value < 0 || value > static_cast<Index>(UINT32_MAX)) {
    throw InvalidArgument(fmt::format("tensor container: {} {} does not fit in u32", what, value));
  }
  return static_cast<std::uint32_t>(value);
}

void write_header(std::ostream& out, RecordKind kind, Index d, Index k) {
  out.write(kMagic.data(), 4);
  out.put(static_cast<char>(kFormatVersion));
  out.put(static_cast<char>(kind));
  out.put(0);
  out.put(0);
  put_u32(out, checked_u32(d, "dimension"));
  put_u32(out, checked_u32(k, "column count"));
}

void put_matrix(std::ostream& out, const Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) put_f64(out, m(i, j));
}

Matrix get_matrix(std::istream& in, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = get_f64(in);
  return m;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ResourceError(fmt::format("cannot open '{}' for writing", path.string()));
  return out;
}

}  // namespace

void write_record(std::ostream& out, const DenseTensor3& tensor) {
  write_header(out, RecordKind::dense, tensor.dim(), 0);
  for (double e : tensor.entries()) put_f64(out, e);
}

void write_record(std::ostream& out, const FactoredTensor3& tensor) {
  const bool sym = tensor.symmetric();
  write_header(out, sym ? RecordKind::factored : RecordKind::factored_asymmetric, tensor.dim(),
               tensor.rank());
  for (Index j = 0; j < tensor.rank(); ++j) put_f64(out, tensor.weights()(j));
  put_matrix(out, tensor.components(Mode::first));
  if (!sym) {
    put_matrix(out, tensor.components(Mode::second));
    put_matrix(out, tensor.components(Mode::third));
  }
}

void write_record(std::ostream& out, const Matrix& matrix) {
  write_header(out, RecordKind::matrix, matrix.rows(), matrix.cols());
  put_matrix(out, matrix);
}

Record read_record(std::istream& in) {
  unsigned char header[16];
  if (!in.read(reinterpret_cast<char*>(header), 16)) {
    throw InvalidArgument("tensor container: truncated header");
  }
  if (std::memcmp(header, kMagic.data(), 4) != 0) {
    throw InvalidArgument("tensor container: bad magic (expected \"TPI3\")");
  }
  if (header[4] != kFormatVersion) {
    throw InvalidArgument(fmt::format("tensor container: unsupported version {}", header[4]));
  }
  const Index d = get_u32(header + 8);
  const Index k = get_u32(header + 12);
  switch (static_cast<RecordKind>(header[5])) {
    case RecordKind::dense: {
      DenseTensor3 probe(d);  // budget check before reading d^3 values
      std::vector<double> entries(static_cast<std::size_t>(d * d * d));
      for (double& e : entries) e = get_f64(in);
      DenseTensor3 result(d, std::move(entries), false);
      // The container has no symmetry bit; exact permutation invariance restores it.
      if (result.symmetry_defect() == 0.0) return DenseTensor3(d, result.entries(), true);
      return result;
    }
    case RecordKind::factored: {
      Vector w(k);
      for (Index j = 0; j < k; ++j) w(j) = get_f64(in);
      return FactoredTensor3(get_matrix(in, d, k), std::move(w));
    }
    case RecordKind::factored_asymmetric: {
      Vector w(k);
      for (Index j = 0; j < k; ++j) w(j) = get_f64(in);
      Matrix a = get_matrix(in, d, k);
      Matrix b = get_matrix(in, d, k);
      Matrix c = get_matrix(in, d, k);
      return FactoredTensor3(std::move(a), std::move(b), std::move(c), std::move(w));
    }
    case RecordKind::matrix:
      return get_matrix(in, d, k);
  }
  throw InvalidArgument(fmt::format("tensor container: unknown record kind {}", header[5]));
}

std::vector<Record> read_records(std::istream& in) {
  std::vector<Record> records;
  while (in.peek() != std::char_traits<char>::eof()) records.push_back(read_record(in));
  return records;
}

void save(const std::filesystem::path& path, const DenseTensor3& tensor) {
  auto out = open_out(path);
  write_record(out, tensor);
}

void save(const std::filesystem::path& path, const FactoredTensor3& tensor) {
  auto out = open_out(path);
  write_record(out, tensor);
}

void save(const std::filesystem::path& path, const std::vector<Matrix>& matrices) {
  auto out = open_out(path);
  for (const auto& m : matrices) write_record(out, m);
}

std::vector<Record> load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError(fmt::format("cannot open '{}'", path.string()));
  return read_records(in);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void write_sidecar(const std::filesystem::path& path, const nlohmann::json& metadata) {
  std::ofstream out(sidecar_path(path));
  if (!out) throw ResourceError(fmt::format("cannot write sidecar for '{}'", path.string()));
  out << metadata.dump(2) << '\n';
}

nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw ResourceError(fmt::format("missing sidecar for '{}'", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(fmt::format("malformed sidecar for '{}': {}", path.string(), e.what()));
  }
}

}  // namespace tpi::io
