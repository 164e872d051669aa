#include "rceed/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>

#include "rceed/errors.hpp"

namespace rceed {

namespace {

constexpr char kMagic[4] = {'R', 'C', 'E', 'D'};
constexpr std::string_view kConfigPrefix = "config.";
constexpr std::string_view kStepName = "run.step";

using Kind = CheckpointError::Kind;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t crc_of(const unsigned char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < size; off += kChunk)
    crc = crc32(crc, data + off, static_cast<uInt>(std::min(kChunk, size - off)));
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& bytes, std::size_t begin, std::size_t end)
      : bytes_(bytes), pos_(begin), end_(end) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == end_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw CheckpointError(Kind::kTruncated, "checkpoint body is truncated");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_, end_;
};

// Offset one past the last tensor record, or nullopt if the records run off the end.
std::optional<std::size_t> records_end(const std::vector<unsigned char>& bytes) {
  try {
    Reader r(bytes, 8, bytes.size());
    const std::uint32_t count = r.u32();
    for (std::uint32_t k = 0; k < count; ++k) {
      r.skip(r.u32());
      const std::uint32_t rank = r.u32();
      if (rank == 0 || rank > 8) return std::nullopt;
      std::size_t n = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        n *= r.u32();
        if (n > bytes.size()) return std::nullopt;
      }
      r.skip(4 * n);
    }
    return r.position();
  } catch (const CheckpointError&) {
    return std::nullopt;
  }
}

}  // namespace

std::vector<unsigned char> encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  put_u32(out, crc_of(out.data() + 8, out.size() - 8));
  return out;
}

std::vector<NamedTensor> decode_tensors(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0)
    throw CheckpointError(Kind::kTruncated, "checkpoint is truncated");
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(Kind::kBadMagic, "not a checkpoint file (bad magic)");
  if (bytes.size() < 16) throw CheckpointError(Kind::kTruncated, "checkpoint is truncated");
  const std::uint32_t version = Reader(bytes, 4, 8).u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::kBadVersion, "unsupported checkpoint version " +
                                                 std::to_string(version) + " (expected " +
                                                 std::to_string(kCheckpointVersion) + ")");
  const std::size_t body_end = bytes.size() - 4;
  const std::uint32_t stored = Reader(bytes, body_end, bytes.size()).u32();
  if (crc_of(bytes.data() + 8, body_end - 8) != stored) {
    const auto end = records_end(bytes);
    if (!end || *end + 4 > bytes.size())
      throw CheckpointError(Kind::kTruncated, "checkpoint is truncated");
    throw CheckpointError(Kind::kBadCrc, "checkpoint integrity check failed (CRC mismatch)");
  }

  Reader r(bytes, 8, body_end);
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.text(r.u32());
    if (!seen.insert(t.name).second)
      throw CheckpointError(Kind::kMismatch, "duplicate tensor '" + t.name + "'");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
      throw CheckpointError(Kind::kMismatch, "tensor '" + t.name + "' has invalid rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(r.u32());
      if (shape.back() == 0)
        throw CheckpointError(Kind::kMismatch, "tensor '" + t.name + "' has a zero extent");
      n *= shape.back();
      if (n > body_end) throw CheckpointError(Kind::kTruncated, "checkpoint body is truncated");
    }
    std::vector<float> values(n);
    for (float& v : values) v = r.f32();
    t.value = Tensor<float>(shape, std::move(values));
    out.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(Kind::kMismatch, "trailing bytes after the last tensor");
  return out;
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_tensors(tensors);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::kIo, "cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(Kind::kIo, "failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::kIo, "cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return decode_tensors(bytes);
}

std::vector<NamedTensor> checkpoint_tensors(const Model<float>& model, std::size_t step) {
  std::vector<NamedTensor> out;
  for (const auto& [key, values] : model.config().to_fields()) {
    std::vector<float> v(values.begin(), values.end());
    out.push_back({std::string(kConfigPrefix) + key, Tensor<float>(Shape{v.size()}, v)});
  }
  out.push_back({std::string(kStepName), Tensor<float>::scalar(static_cast<float>(step))});
  for (const auto& p : model.parameters().all()) out.push_back({p.name, p.value.detach().clone()});
  return out;
}

ModelConfig checkpoint_config(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, std::vector<double>> fields;
  for (const auto& t : tensors)
    if (t.name.starts_with(kConfigPrefix))
      fields[t.name.substr(kConfigPrefix.size())] =
          std::vector<double>(t.value.data().begin(), t.value.data().end());
  return ModelConfig::from_fields(fields);
}

std::size_t checkpoint_step(const std::vector<NamedTensor>& tensors) {
  for (const auto& t : tensors)
    if (t.name == kStepName) return static_cast<std::size_t>(t.value.data()[0]);
  return 0;
}

void restore_parameters(Model<float>& model, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors)
    if (!t.name.starts_with(kConfigPrefix) && t.name != kStepName) by_name[t.name] = &t;
  auto& params = model.parameters().all();
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw CheckpointError(Kind::kMismatch, "checkpoint lacks parameter '" + p.name + "'");
    if (it->second->value.shape() != p.value.shape())
      throw CheckpointError(Kind::kMismatch, "parameter '" + p.name + "' has shape " +
                                                 shape_str(it->second->value.shape()) +
                                                 " in the checkpoint but the model expects " +
                                                 shape_str(p.value.shape()));
  }
  if (by_name.size() != params.size())
    for (const auto& [name, t] : by_name)
      if (!model.parameters().find(name))
        throw CheckpointError(Kind::kMismatch, "checkpoint has unknown parameter '" + name + "'");
  for (auto& p : params) {
    const auto src = by_name.at(p.name)->value.data();
    std::copy(src.begin(), src.end(), p.value.data().begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     std::size_t step) {
  save_tensors(path, checkpoint_tensors(model, step));
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  const auto tensors = load_tensors(path);
  LoadedModel out;
  out.config = checkpoint_config(tensors);
  out.step = checkpoint_step(tensors);
  try {
    out.model = std::make_unique<Model<float>>(out.config, 0);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kMismatch, std::string("checkpoint configuration is invalid: ") +
                                               e.what());
  }
  restore_parameters(*out.model, tensors);
  return out;
}

}  // namespace rceed
