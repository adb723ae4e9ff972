#include "xvf/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "xvf/error.hpp"

namespace xvf {

static_assert(std::endian::native == std::endian::little,
              "archive serialization assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'X', 'V', 'F', 'A', 'R', 'C', 'H', '\0'};

template <typename T>
void append_pod(std::vector<std::byte>& out, T value) {
  const auto* p = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  std::span<const std::byte> take(std::size_t n) {
    require<IoError>(n <= bytes_.size() - pos_, "archive truncated at byte ", pos_);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kFloat64: return 8;
    case DType::kFloat32: return 4;
    case DType::kInt64: return 8;
    case DType::kUint8: return 1;
  }
  fail<IoError>("unknown dtype code ", static_cast<int>(dtype));
}

std::uint64_t Record::num_elements() const {
  std::uint64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void Archive::add(Record record) {
  require(!record.name.empty(), "archive record name must not be empty");
  require(!index_.contains(record.name), "duplicate archive record '", record.name, "'");
  index_.emplace(record.name, records_.size());
  records_.push_back(std::move(record));
}

void Archive::put(std::string name, std::span<const double> values,
                  std::vector<std::uint64_t> shape, DType storage) {
  Record r{std::move(name), storage, std::move(shape), {}};
  require<ShapeError>(r.num_elements() == values.size(), "archive record '", r.name,
                      "': shape does not match value count");
  if (storage == DType::kFloat64) {
    const auto* p = reinterpret_cast<const std::byte*>(values.data());
    r.bytes.assign(p, p + values.size_bytes());
  } else if (storage == DType::kFloat32) {
    r.bytes.reserve(values.size() * 4);
    for (double v : values) append_pod(r.bytes, static_cast<float>(v));
  } else {
    fail("archive: floating-point values cannot be stored as dtype ", static_cast<int>(storage));
  }
  add(std::move(r));
}

void Archive::put(std::string name, const Tensor& tensor, DType storage) {
  std::vector<std::uint64_t> shape(tensor.shape().begin(), tensor.shape().end());
  put(std::move(name), tensor.data(), std::move(shape), storage);
}

void Archive::put(std::string name, const RowMatrix& matrix, DType storage) {
  put(std::move(name), std::span<const double>(matrix.data(), static_cast<std::size_t>(matrix.size())),
      {static_cast<std::uint64_t>(matrix.rows()), static_cast<std::uint64_t>(matrix.cols())},
      storage);
}

void Archive::put(std::string name, const Vector& vector, DType storage) {
  put(std::move(name), std::span<const double>(vector.data(), static_cast<std::size_t>(vector.size())),
      {static_cast<std::uint64_t>(vector.size())}, storage);
}

void Archive::put_ints(std::string name, std::span<const std::int64_t> values) {
  Record r{std::move(name), DType::kInt64, {values.size()}, {}};
  const auto* p = reinterpret_cast<const std::byte*>(values.data());
  r.bytes.assign(p, p + values.size_bytes());
  add(std::move(r));
}

void Archive::put_text(std::string name, std::string_view text) {
  Record r{std::move(name), DType::kUint8, {text.size()}, {}};
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  r.bytes.assign(p, p + text.size());
  add(std::move(r));
}

bool Archive::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Record& Archive::record(std::string_view name) const {
  auto it = index_.find(std::string(name));
  require<IoError>(it != index_.end(), "archive has no record named '", name, "'");
  return records_[it->second];
}

std::vector<double> Archive::as_doubles(const Record& r) const {
  const auto n = static_cast<std::size_t>(r.num_elements());
  std::vector<double> out(n);
  switch (r.dtype) {
    case DType::kFloat64:
      std::memcpy(out.data(), r.bytes.data(), n * 8);
      break;
    case DType::kFloat32:
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, r.bytes.data() + i * 4, 4);
        out[i] = f;
      }
      break;
    default:
      fail<IoError>("archive record '", r.name, "' is not floating point");
  }
  return out;
}

Tensor Archive::tensor(std::string_view name) const {
  const Record& r = record(name);
  return Tensor(Shape(r.shape.begin(), r.shape.end()), as_doubles(r));
}

RowMatrix Archive::matrix(std::string_view name) const {
  const Record& r = record(name);
  require<ShapeError>(r.shape.size() == 2, "archive record '", name, "' is not a matrix");
  auto values = as_doubles(r);
  return Eigen::Map<RowMatrix>(values.data(), static_cast<Eigen::Index>(r.shape[0]),
                               static_cast<Eigen::Index>(r.shape[1]));
}

Vector Archive::vector(std::string_view name) const {
  const Record& r = record(name);
  auto values = as_doubles(r);
  return Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::vector<std::int64_t> Archive::ints(std::string_view name) const {
  const Record& r = record(name);
  require<IoError>(r.dtype == DType::kInt64, "archive record '", name, "' is not int64");
  std::vector<std::int64_t> out(r.num_elements());
  std::memcpy(out.data(), r.bytes.data(), r.bytes.size());
  return out;
}

std::string Archive::text(std::string_view name) const {
  const Record& r = record(name);
  require<IoError>(r.dtype == DType::kUint8, "archive record '", name, "' is not text");
  return std::string(reinterpret_cast<const char*>(r.bytes.data()), r.bytes.size());
}

double Archive::scalar(std::string_view name) const {
  auto values = as_doubles(record(name));
  require<ShapeError>(values.size() == 1, "archive record '", name, "' is not a scalar");
  return values[0];
}

std::vector<std::byte> Archive::serialize() const {
  std::vector<std::byte> out;
  const auto* magic = reinterpret_cast<const std::byte*>(kMagic);
  out.insert(out.end(), magic, magic + sizeof(kMagic));
  append_pod(out, kArchiveVersion);
  append_pod(out, static_cast<std::uint64_t>(records_.size()));
  for (const auto& r : records_) {
    append_pod(out, static_cast<std::uint32_t>(r.name.size()));
    const auto* name = reinterpret_cast<const std::byte*>(r.name.data());
    out.insert(out.end(), name, name + r.name.size());
    append_pod(out, static_cast<std::uint8_t>(r.dtype));
    append_pod(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) append_pod(out, e);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

Archive Archive::deserialize(std::span<const std::byte> bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kMagic));
  require<IoError>(std::memcmp(magic.data(), kMagic, sizeof(kMagic)) == 0,
                   "not an xvf archive (bad magic)");
  const auto version = in.pod<std::uint32_t>();
  require<IoError>(version == kArchiveVersion, "unsupported archive version ", version);
  const auto count = in.pod<std::uint64_t>();
  Archive archive;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    const auto name_len = in.pod<std::uint32_t>();
    auto name = in.take(name_len);
    r.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    const auto code = in.pod<std::uint8_t>();
    require<IoError>(code <= 3, "record '", r.name, "': unknown dtype ", static_cast<int>(code));
    r.dtype = static_cast<DType>(code);
    const auto rank = in.pod<std::uint32_t>();
    r.shape.resize(rank);
    for (auto& e : r.shape) e = in.pod<std::uint64_t>();
    auto data = in.take(r.num_elements() * dtype_size(r.dtype));
    r.bytes.assign(data.begin(), data.end());
    archive.add(std::move(r));
  }
  require<IoError>(in.done(), "trailing bytes after last archive record");
  return archive;
}

void Archive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require<IoError>(out.good(), "cannot open '", path.string(), "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require<IoError>(out.good(), "failed writing '", path.string(), "'");
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "cannot open archive '", path.string(), "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace xvf
