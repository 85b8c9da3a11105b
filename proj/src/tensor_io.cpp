#include "snf/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "snf/error.hpp"

namespace snf {

namespace {

using json = nlohmann::json;

constexpr std::size_t kHeaderBytes = sizeof(kArchiveMagic) + sizeof(std::uint64_t);

void put_u64_le(std::vector<std::byte>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64_le(std::span<const std::byte> in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

void put_f32_le(std::vector<std::byte>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xFFu));
}

float get_f32_le(const std::byte* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

// Parses the index, rejecting duplicate keys. nlohmann keeps the last value for
// a repeated key, so duplicates are caught at the key event instead.
json parse_index(std::string_view text) {
  std::vector<std::set<std::string>> open_objects;
  bool duplicate_tensor = false;
  std::string duplicate_name;
  json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
    switch (event) {
      case json::parse_event_t::object_start:
        open_objects.emplace_back();
        break;
      case json::parse_event_t::object_end:
        if (!open_objects.empty()) open_objects.pop_back();
        break;
      case json::parse_event_t::key: {
        auto key = parsed.get<std::string>();
        if (!open_objects.empty() && !open_objects.back().insert(key).second) {
          if (depth == 2) {
            duplicate_tensor = true;
            duplicate_name = key;
          } else {
            throw FormatError("malformed index: duplicate key '" + key + "'");
          }
        }
        break;
      }
      default:
        break;
    }
    return true;
  };
  json index;
  try {
    index = json::parse(text.begin(), text.end(), cb);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed index: ") + e.what());
  }
  if (duplicate_tensor) throw FormatError("duplicate tensor name '" + duplicate_name + "'");
  return index;
}

std::uint64_t index_uint(const json& entry, const char* key, const std::string& name) {
  if (!entry.contains(key) || !entry.at(key).is_number_unsigned())
    throw FormatError("malformed index: tensor '" + name + "' lacks unsigned '" + key + "'");
  return entry.at(key).get<std::uint64_t>();
}

}  // namespace

TensorRecord::TensorRecord(std::string name, std::vector<std::int64_t> shape, std::vector<float> data)
    : name(std::move(name)), shape(std::move(shape)), data(std::move(data)) {}

std::int64_t TensorRecord::numel() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void TensorRecord::check() const {
  if (shape.empty()) throw ValidationError("tensor '" + name + "' has an empty shape");
  for (auto d : shape)
    if (d < 1) throw ValidationError("tensor '" + name + "' has a non-positive dimension");
  if (numel() != static_cast<std::int64_t>(data.size()))
    throw ValidationError("tensor '" + name + "' shape does not match its value count");
}

bool operator==(const TensorRecord& a, const TensorRecord& b) {
  if (a.name != b.name || a.shape != b.shape || a.data.size() != b.data.size()) return false;
  return a.data.empty() || std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

void WeightArchive::add(TensorRecord tensor) {
  tensor.check();
  if (contains(tensor.name)) throw ValidationError("duplicate tensor name '" + tensor.name + "'");
  auto key = tensor.name;
  tensors_.emplace(std::move(key), std::move(tensor));
}

void WeightArchive::put(TensorRecord tensor) {
  tensor.check();
  auto key = tensor.name;
  tensors_.insert_or_assign(std::move(key), std::move(tensor));
}

const TensorRecord& WeightArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("missing tensor '" + name + "'");
  return it->second;
}

std::vector<std::byte> write_archive(const WeightArchive& archive) {
  json entries = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive) {
    t.check();
    const std::uint64_t bytes = t.data.size() * sizeof(float);
    entries[name] = {{"byte_length", bytes}, {"dtype", "f32"}, {"offset", offset}, {"shape", t.shape}};
    offset += bytes;
  }
  const std::string index = json{{"tensors", entries}}.dump();

  std::vector<std::byte> out;
  out.reserve(kHeaderBytes + index.size() + offset);
  for (char c : kArchiveMagic) out.push_back(static_cast<std::byte>(c));
  put_u64_le(out, index.size());
  for (char c : index) out.push_back(static_cast<std::byte>(c));
  for (const auto& [name, t] : archive)
    for (float v : t.data) put_f32_le(out, v);
  return out;
}

WeightArchive read_archive(std::span<const std::byte> bytes) {
  if (bytes.size() < sizeof(kArchiveMagic) ||
      std::memcmp(bytes.data(), kArchiveMagic, sizeof(kArchiveMagic)) != 0)
    throw FormatError("bad magic: not an SNF1 archive");
  if (bytes.size() < kHeaderBytes) throw FormatError("truncated header");
  const std::uint64_t index_len = get_u64_le(bytes.subspan(sizeof(kArchiveMagic), 8));
  if (index_len > bytes.size() - kHeaderBytes) throw FormatError("index length exceeds input");

  auto index_bytes = bytes.subspan(kHeaderBytes, index_len);
  const std::string_view index_text(reinterpret_cast<const char*>(index_bytes.data()), index_bytes.size());
  const json index = parse_index(index_text);
  if (!index.is_object() || !index.contains("tensors") || !index.at("tensors").is_object())
    throw FormatError("malformed index: missing 'tensors' object");

  const auto data = bytes.subspan(kHeaderBytes + index_len);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  WeightArchive archive;
  for (const auto& [name, entry] : index.at("tensors").items()) {
    if (!entry.is_object()) throw FormatError("malformed index: entry '" + name + "' is not an object");
    if (!entry.contains("dtype") || entry.at("dtype") != "f32")
      throw FormatError("malformed index: tensor '" + name + "' dtype must be f32");
    if (!entry.contains("shape") || !entry.at("shape").is_array())
      throw FormatError("malformed index: tensor '" + name + "' lacks a shape list");
    std::vector<std::int64_t> shape;
    for (const auto& d : entry.at("shape")) {
      if (!d.is_number_unsigned() || d.get<std::uint64_t>() < 1)
        throw FormatError("malformed index: tensor '" + name + "' has an invalid dimension");
      shape.push_back(d.get<std::int64_t>());
    }
    if (shape.empty()) throw FormatError("malformed index: tensor '" + name + "' has an empty shape");

    const std::uint64_t offset = index_uint(entry, "offset", name);
    const std::uint64_t length = index_uint(entry, "byte_length", name);
    if (offset > data.size() || length > data.size() - offset)
      throw FormatError("tensor '" + name + "' extent lies past the end of the data region");
    std::uint64_t expected = sizeof(float);
    for (auto d : shape) expected *= static_cast<std::uint64_t>(d);
    if (expected != length) throw FormatError("tensor '" + name + "' shape does not match its byte length");
    extents.emplace_back(offset, length);

    std::vector<float> values(length / sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32_le(data.data() + offset + 4 * i);
    archive.add(TensorRecord(name, std::move(shape), std::move(values)));
  }

  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i)
    if (extents[i - 1].first + extents[i - 1].second > extents[i].first)
      throw FormatError("malformed index: overlapping tensor extents");
  return archive;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

WeightArchive load_archive(const std::filesystem::path& path) { return read_archive(read_file(path)); }

void save_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  write_file_atomic(path, write_archive(archive));
}

}  // namespace snf
