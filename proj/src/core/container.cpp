#include "container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "error.hpp"

namespace tlh {

const char* to_string(ParseFailure f) noexcept {
  switch (f) {
    case ParseFailure::kBadMagic: return "bad magic";
    case ParseFailure::kBadVersion: return "unsupported version";
    case ParseFailure::kTruncated: return "truncated";
    case ParseFailure::kDimOverflow: return "dimension overflow";
    case ParseFailure::kBadFlag: return "bad flag";
    case ParseFailure::kBadShape: return "bad shape";
    case ParseFailure::kBadName: return "bad tensor name";
    case ParseFailure::kTrailingBytes: return "trailing bytes";
  }
  return "unknown";
}

ParseError::ParseError(ParseFailure failure, std::uint64_t offset, const std::string& detail)
    : Error(ErrorKind::kParse,
            std::string("container ") + to_string(failure) + " at offset " + std::to_string(offset) +
                (detail.empty() ? "" : ": " + detail)),
      failure_(failure),
      offset_(offset) {}

void FeatureSet::validate() const {
  if (n_variants == 0) throw ValidationError("feature set '" + name + "': variant count must be >= 1");
  if (data.size() != n_images * n_variants * dim) {
    throw ValidationError("feature set '" + name + "': payload holds " + std::to_string(data.size()) +
                          " floats, expected " + std::to_string(n_images * n_variants * dim));
  }
  if (has_labels() && labels.size() != n_images) {
    throw ValidationError("feature set '" + name + "': " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n_images) + " images");
  }
  if (!class_names.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_names.size()) {
        throw ValidationError("feature set '" + name + "': label " + std::to_string(labels[i]) +
                              " of image " + std::to_string(i) + " has no class name");
      }
    }
  }
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> ids) const {
  FeatureSet out;
  out.name = name;
  out.n_images = ids.size();
  out.n_variants = n_variants;
  out.dim = dim;
  out.class_names = class_names;
  const std::size_t stride = n_variants * dim;
  out.data.resize(ids.size() * stride);
  if (has_labels()) out.labels.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n_images) throw ValidationError("subset: image id out of range");
    std::memcpy(out.data.data() + i * stride, data.data() + ids[i] * stride, stride * sizeof(float));
    if (has_labels()) out.labels[i] = labels[ids[i]];
  }
  return out;
}

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    v = to_little(v);
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void put_floats(std::span<const float> v) {
    if constexpr (std::endian::native == std::endian::little) {
      put_bytes(v.data(), v.size_bytes());
    } else {
      for (float f : v) put(f);
    }
  }
  std::vector<std::byte> take() { return std::move(out_); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(ParseFailure::kTruncated, pos_,
                       std::string("need ") + std::to_string(n) + " bytes for " + what + ", " +
                           std::to_string(remaining()) + " left");
    }
  }

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  std::string get_string(std::size_t n) {
    need(n, "tensor name");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void get_floats(std::span<float> dst) {
    need(dst.size_bytes(), "float payload");
    std::memcpy(dst.data(), in_.data() + pos_, dst.size_bytes());
    if constexpr (std::endian::native != std::endian::little) {
      for (float& f : dst) f = to_little(f);
    }
    pos_ += dst.size_bytes();
  }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'F', 'T', 'B', '1'};

std::uint32_t checked_u32(std::size_t v, const std::string& what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError(what + " " + std::to_string(v) + " does not fit the container's u32 field");
  }
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<std::byte> encode_container(std::span<const FeatureSet> tensors) {
  Writer w;
  std::size_t total = 12;
  for (const auto& t : tensors) total += 2 + t.name.size() + 13 + 2 * t.labels.size() + 4 * t.data.size();
  w.reserve(total);

  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kContainerVersion);
  w.put<std::uint32_t>(checked_u32(tensors.size(), "tensor count"));
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    t.validate();
    if (t.name.empty() || t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("tensor name must be 1..65535 bytes");
    }
    if (!seen.insert(t.name).second) throw ValidationError("duplicate tensor name '" + t.name + "'");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint32_t>(checked_u32(t.n_images, "image count"));
    w.put<std::uint32_t>(checked_u32(t.n_variants, "variant count"));
    w.put<std::uint32_t>(checked_u32(t.dim, "dimension"));
    w.put<std::uint8_t>(t.has_labels() ? 1 : 0);
    for (auto label : t.labels) {
      if (label > std::numeric_limits<std::uint16_t>::max()) {
        throw ValidationError("label " + std::to_string(label) + " does not fit u16");
      }
      w.put<std::uint16_t>(static_cast<std::uint16_t>(label));
    }
    w.put_floats(t.data);
  }
  return w.take();
}

std::vector<FeatureSet> decode_container(std::span<const std::byte> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(ParseFailure::kBadMagic, 0,
                     "expected 'FTB1', got '" + std::string(reinterpret_cast<const char*>(bytes.data()), 4) + "'");
  }
  r.get<std::uint32_t>("magic");
  const auto version_offset = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw ParseError(ParseFailure::kBadVersion, version_offset, "version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("tensor count");

  std::vector<FeatureSet> out;
  std::set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    FeatureSet fs;
    const auto name_offset = r.offset();
    const auto name_len = r.get<std::uint16_t>("name length");
    if (name_len == 0) throw ParseError(ParseFailure::kBadName, name_offset, "empty name");
    fs.name = r.get_string(name_len);
    if (!seen.insert(fs.name).second) {
      throw ParseError(ParseFailure::kBadName, name_offset, "duplicate tensor '" + fs.name + "'");
    }
    const auto shape_offset = r.offset();
    const std::uint64_t n = r.get<std::uint32_t>("N");
    const std::uint64_t v = r.get<std::uint32_t>("V");
    const std::uint64_t d = r.get<std::uint32_t>("D");
    if (v == 0) throw ParseError(ParseFailure::kBadShape, shape_offset, "variant count 0");
    // Three u32 factors can exceed 2^64 bytes once multiplied by 4.
    const unsigned __int128 floats = static_cast<unsigned __int128>(n) * v * d;
    if (floats * sizeof(float) > std::numeric_limits<std::size_t>::max() / 2) {
      throw ParseError(ParseFailure::kDimOverflow, shape_offset,
                       std::to_string(n) + "x" + std::to_string(v) + "x" + std::to_string(d) +
                           " floats is not addressable");
    }
    const auto flag_offset = r.offset();
    const auto has_labels = r.get<std::uint8_t>("label flag");
    if (has_labels > 1) {
      throw ParseError(ParseFailure::kBadFlag, flag_offset, "label flag " + std::to_string(has_labels));
    }
    fs.n_images = static_cast<std::size_t>(n);
    fs.n_variants = static_cast<std::size_t>(v);
    fs.dim = static_cast<std::size_t>(d);
    if (has_labels) {
      r.need(2 * fs.n_images, "labels");
      fs.labels.resize(fs.n_images);
      for (auto& label : fs.labels) label = r.get<std::uint16_t>("label");
    }
    const auto payload = static_cast<std::size_t>(floats);
    r.need(payload * sizeof(float), "float payload");
    fs.data.resize(payload);
    r.get_floats(fs.data);
    out.push_back(std::move(fs));
  }
  if (r.remaining() != 0) {
    throw ParseError(ParseFailure::kTrailingBytes, r.offset(),
                     std::to_string(r.remaining()) + " bytes after the last tensor");
  }
  return out;
}

void write_container(const std::filesystem::path& path, std::span<const FeatureSet> tensors) {
  const auto bytes = encode_container(tensors);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::vector<FeatureSet> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  const auto size = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::byte> bytes(size);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!f) throw IoError("cannot read '" + path.string() + "'");
  return decode_container(bytes);
}

void write_feature_set(const std::filesystem::path& path, const FeatureSet& fs) {
  write_container(path, std::span<const FeatureSet>(&fs, 1));
}

FeatureSet read_feature_set(const std::filesystem::path& path) {
  auto all = read_container(path);
  if (all.size() != 1) {
    throw DataError("'" + path.string() + "' holds " + std::to_string(all.size()) + " tensors, expected 1");
  }
  return std::move(all.front());
}

}  // namespace tlh
