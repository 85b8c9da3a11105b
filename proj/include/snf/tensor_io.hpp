#ifndef SNF_TENSOR_IO_HPP
#define SNF_TENSOR_IO_HPP

// SNF1 weight container.
//
//   "SNF1" | u64 LE index length | index text | data region
//
// The index is a compact, key-sorted JSON document
//   {"tensors":{"<name>":{"byte_length":B,"dtype":"f32","offset":O,"shape":[...]}, ...}}
// with offsets relative to the start of the data region. Tensors are laid out
// back to back in name order, no padding, values as little-endian f32.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace snf {

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;  // row-major

  TensorRecord() = default;
  TensorRecord(std::string name, std::vector<std::int64_t> shape, std::vector<float> data);

  std::int64_t numel() const;
  std::int64_t dim(std::size_t axis) const { return shape.at(axis); }

  /// Throws ValidationError if shape is empty, has a non-positive extent,
  /// or disagrees with the number of stored values.
  void check() const;
};

/// Bit-level equality of name, shape and every stored value (NaN payloads included).
bool operator==(const TensorRecord& a, const TensorRecord& b);

class WeightArchive {
 public:
  using Map = std::map<std::string, TensorRecord>;

  WeightArchive() = default;

  /// Inserts a tensor; throws ValidationError on a duplicate name or a broken record.
  void add(TensorRecord tensor);
  /// Inserts or replaces.
  void put(TensorRecord tensor);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const TensorRecord& at(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }

  const Map& tensors() const { return tensors_; }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }

  friend bool operator==(const WeightArchive&, const WeightArchive&) = default;

 private:
  Map tensors_;
};

inline constexpr char kArchiveMagic[4] = {'S', 'N', 'F', '1'};

std::vector<std::byte> write_archive(const WeightArchive& archive);
WeightArchive read_archive(std::span<const std::byte> bytes);

WeightArchive load_archive(const std::filesystem::path& path);
void save_archive(const std::filesystem::path& path, const WeightArchive& archive);

/// Whole-file helpers. write_file_atomic writes to a sibling temporary and renames.
std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace snf

#endif  // SNF_TENSOR_IO_HPP
