#pragma once

// Binary tensor container.
//
// Every record starts with a 16-byte header
//
//   bytes 0..3   magic "TPI3"
//   byte  4      version (1)
//   byte  5      kind: 0 dense, 1 factored (symmetric), 2 matrix,
//                3 factored with per-mode components
//   bytes 6..7   reserved, zero
//   bytes 8..11  u32 d
//   bytes 12..15 u32 k (rank for factored kinds, column count for matrix,
//                0 for dense)
//
// followed by a little-endian f64 payload:
//   dense     d^3 entries, entry (i,j,l) at i*d*d + j*d + l
//   factored  k weights, then the d x k components column-major
//   matrix    d x k entries column-major
//   kind 3    k weights, then three d x k matrices column-major
//
// Dense records carry no symmetry flag; a reader marks the tensor symmetric
// when its entries are exactly permutation invariant.
//
// A file may hold several records back to back (sample batches store one
// matrix record per view).  Metadata lives in a JSON sidecar next to the
// binary file.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tpi/tensor.hpp"

namespace tpi::io {

inline constexpr std::uint8_t kFormatVersion = 1;

enum class RecordKind : std::uint8_t { dense = 0, factored = 1, matrix = 2, factored_asymmetric = 3 };

using Record = std::variant<DenseTensor3, FactoredTensor3, Matrix>;

void write_record(std::ostream& out, const DenseTensor3& tensor);
void write_record(std::ostream& out, const FactoredTensor3& tensor);
void write_record(std::ostream& out, const Matrix& matrix);

/// Reads one record.  Throws InvalidArgument on a malformed header or a
/// truncated payload.
Record read_record(std::istream& in);

/// Reads records until end of stream.
std::vector<Record> read_records(std::istream& in);

void save(const std::filesystem::path& path, const DenseTensor3& tensor);
void save(const std::filesystem::path& path, const FactoredTensor3& tensor);
void save(const std::filesystem::path& path, const std::vector<Matrix>& matrices);
/// Throws ResourceError when the file cannot be opened.
std::vector<Record> load(const std::filesystem::path& path);

/// `<path>.json`
std::filesystem::path sidecar_path(const std::filesystem::path& path);
void write_sidecar(const std::filesystem::path& path, const nlohmann::json& metadata);
nlohmann::json read_sidecar(const std::filesystem::path& path);

}  // namespace tpi::io
