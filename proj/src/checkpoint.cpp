// Checkpoint container (little-endian):
//   "FSTDCKPT" | u32 version | u64 config hash | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 dims[rank] | f64 values
//   u64 FNV-1a of everything before it

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fstd/error.hpp"
#include "fstd/trainer.hpp"

namespace fstd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'F', 'S', 'T', 'D', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(source_ + ": truncated checkpoint");
  }
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t config_hash(const ModelConfig& model) { return fnv1a(model.fingerprint()); }

void save_checkpoint(const ad::ParamStore& params, const ModelConfig& model,
                     const std::filesystem::path& path) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, config_hash(model));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.tensors()) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(buf, d);
    for (double v : t.values()) put<double>(buf, v);
  }
  put<std::uint64_t>(buf, fnv1a(buf));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string src = path.string();
  if (data.size() < sizeof(kMagic) + 8 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(src + ": not a checkpoint file");
  }
  const std::string_view body(data.data(), data.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body.size(), 8);
  if (fnv1a(body) != stored) throw DataError(src + ": checksum mismatch (corrupted checkpoint)");

  Reader r(body, src);
  r.bytes(sizeof(kMagic));
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw DataError(src + ": checkpoint version " + std::to_string(ck.version) +
                    " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ck.config_hash = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.bytes(name_len));
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(src + ": implausible tensor rank for '" + name + "'");
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>());
    const std::size_t n = ad::numel(shape);
    if (n > (body.size() - r.pos()) / sizeof(double)) {
      throw DataError(src + ": truncated values for '" + name + "'");
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.get<double>();
    ck.params.add(name, std::move(shape), std::move(values));
  }
  if (r.pos() != body.size()) throw DataError(src + ": trailing bytes after last tensor");
  return ck;
}

ad::ParamStore load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& model) {
  Checkpoint ck = load_checkpoint(path);
  const ad::ParamStore expected = init_params(model, 0);
  std::vector<std::string> missing, extra, mismatched;
  for (const auto& name : expected.names()) {
    if (!ck.params.contains(name)) {
      missing.push_back(name);
    } else if (ck.params.get(name).shape() != expected.get(name).shape()) {
      mismatched.push_back(name + " " + ad::shape_str(ck.params.get(name).shape()) + " vs " +
                           ad::shape_str(expected.get(name).shape()));
    }
  }
  for (const auto& name : ck.params.names()) {
    if (!expected.contains(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty() || !mismatched.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s.empty() ? std::string("none") : s;
    };
    throw DataError(path.string() + ": architecture mismatch; missing: " + join(missing) +
                    "; extra: " + join(extra) + "; shape: " + join(mismatched));
  }
  return std::move(ck.params);
}

}  // namespace fstd
