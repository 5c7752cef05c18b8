#include "cardiofuse/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "cardiofuse/errors.hpp"

namespace cardiofuse {

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void little_endian(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void f64(double v) { little_endian(std::bit_cast<std::uint64_t>(v)); }
  void string(const std::string& s) {
    little_endian<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return in_.size() - pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(FormatErrorKind::kTruncated, pos_,
                        std::string("need ") + std::to_string(n) + " bytes for " + what + ", have " +
                            std::to_string(remaining()));
    }
  }
  template <typename T>
  T little_endian(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string string(const char* what) {
    const std::uint64_t len = little_endian<std::uint64_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  void skip(std::uint64_t n) { pos_ += n; }

 private:
  std::span<const std::uint8_t> in_;
  std::uint64_t pos_ = 0;
};

}  // namespace

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError(FormatErrorKind::kMalformed, 0, "archive has no tensor named '" + name + "'");
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_archive(const Magic& magic, std::uint32_t version, const TensorArchive& archive) {
  std::set<std::string> seen;
  for (const auto& t : archive.tensors) {
    if (!seen.insert(t.name).second) throw ContractError("encode_archive: duplicate tensor name '" + t.name + "'");
  }
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(archive));
  Writer w(out);
  w.bytes(magic.data(), magic.size());
  w.little_endian<std::uint32_t>(version);
  w.string(archive.metadata);
  w.little_endian<std::uint64_t>(archive.tensors.size());
  for (const auto& t : archive.tensors) {
    w.string(t.name);
    const Shape& shape = t.tensor.shape();
    w.little_endian<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) w.little_endian<std::uint64_t>(d);
    w.little_endian<std::uint8_t>(kDtypeF64);
    for (double v : t.tensor.data()) w.f64(v);
  }
  return out;
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes, const Magic& magic, std::uint32_t version) {
  Reader r(bytes);
  r.need(4, "magic");
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(magic[i])) {
      throw FormatError(FormatErrorKind::kBadMagic, 0,
                        "expected magic '" + std::string(magic.data(), 4) + "'");
    }
  }
  r.skip(4);
  const std::uint64_t version_offset = r.offset();
  const auto found_version = r.little_endian<std::uint32_t>("version");
  if (found_version != version) {
    throw FormatError(FormatErrorKind::kVersionMismatch, version_offset,
                      "expected version " + std::to_string(version) + ", found " + std::to_string(found_version));
  }
  TensorArchive archive;
  archive.metadata = r.string("metadata");
  const auto count = r.little_endian<std::uint64_t>("tensor count");
  std::set<std::string> seen;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t name_offset = r.offset();
    std::string name = r.string("tensor name");
    if (!seen.insert(name).second) {
      throw FormatError(FormatErrorKind::kDuplicateName, name_offset, "duplicate tensor name '" + name + "'");
    }
    const auto rank = r.little_endian<std::uint32_t>("tensor rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t dim_offset = r.offset();
      const auto d = r.little_endian<std::uint64_t>("tensor dim");
      if (d == 0 || numel > std::numeric_limits<std::uint64_t>::max() / 8 / d) {
        throw FormatError(FormatErrorKind::kMalformed, dim_offset, "invalid dimension for '" + name + "'");
      }
      numel *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    const std::uint64_t dtype_offset = r.offset();
    const auto dtype = r.little_endian<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) {
      throw FormatError(FormatErrorKind::kBadDtype, dtype_offset, "unsupported dtype " + std::to_string(dtype));
    }
    r.need(numel * 8, "tensor data");
    std::vector<double> data(numel);
    for (auto& v : data) v = std::bit_cast<double>(r.little_endian<std::uint64_t>("tensor data"));
    try {
      archive.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
    } catch (const ContractError& e) {
      throw FormatError(FormatErrorKind::kMalformed, dtype_offset + 1, e.what());
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorKind::kMalformed, r.offset(), std::to_string(r.remaining()) + " trailing bytes");
  }
  return archive;
}

std::uint64_t encoded_size(const TensorArchive& archive) {
  std::uint64_t total = 4 + 4 + 8 + archive.metadata.size() + 8;
  for (const auto& t : archive.tensors) {
    total += 8 + t.name.size() + 4 + 8 * t.tensor.rank() + 1 + 8 * t.tensor.size();
  }
  return total;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace cardiofuse
