#pragma once

// Versioned little-endian binary container shared by every on-disk artifact
// (parameters, features, GMMs, statistics, embeddings, backends).
//
// Layout:
//   magic    8 bytes  "XVFARCH\0"
//   version  u32      (kArchiveVersion)
//   count    u64      number of records
//   record*  u32 name length, name bytes, u8 dtype, u32 rank,
//            u64 extents[rank], raw element data (little-endian)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xvf/linalg.hpp"
#include "xvf/tensor.hpp"

namespace xvf {

inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { kFloat64 = 0, kFloat32 = 1, kInt64 = 2, kUint8 = 3 };

std::size_t dtype_size(DType dtype);

struct Record {
  std::string name;
  DType dtype = DType::kFloat64;
  std::vector<std::uint64_t> shape;
  std::vector<std::byte> bytes;

  std::uint64_t num_elements() const;
};

class Archive {
 public:
  Archive() = default;

  /// Stores doubles; kFloat32 storage rounds each value to single precision.
  void put(std::string name, std::span<const double> values, std::vector<std::uint64_t> shape,
           DType storage = DType::kFloat64);
  void put(std::string name, const Tensor& tensor, DType storage = DType::kFloat64);
  void put(std::string name, const RowMatrix& matrix, DType storage = DType::kFloat64);
  void put(std::string name, const Vector& vector, DType storage = DType::kFloat64);
  void put_ints(std::string name, std::span<const std::int64_t> values);
  void put_text(std::string name, std::string_view text);

  bool contains(std::string_view name) const;
  const Record& record(std::string_view name) const;
  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  Tensor tensor(std::string_view name) const;
  RowMatrix matrix(std::string_view name) const;
  Vector vector(std::string_view name) const;
  std::vector<std::int64_t> ints(std::string_view name) const;
  std::string text(std::string_view name) const;
  double scalar(std::string_view name) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  std::vector<std::byte> serialize() const;
  static Archive deserialize(std::span<const std::byte> bytes);

 private:
  void add(Record record);
  std::vector<double> as_doubles(const Record& record) const;

  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace xvf
