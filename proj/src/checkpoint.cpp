#include "trimllm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "trimllm/errors.hpp"

namespace trimllm {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw FormatError("checkpoint: truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFull) throw FormatError(std::string("checkpoint: ") + what + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <class Real>
std::vector<std::uint8_t> serialize_checkpoint(const TrimModel<Real>& model) {
  Writer w;
  w.raw("TRIM");
  w.u32(kCheckpointVersion);
  const ModelConfig& c = model.config();
  for (std::size_t v : {c.vocab_size, c.d_model, c.n_heads, c.d_ffn, c.n_blocks, c.max_seq_len})
    w.u32(narrow(v, "config field"));
  w.u64(c.seed);
  for (std::uint8_t alive : model.mask().bytes()) w.u8(alive);
  const auto tensors = model.named_tensors();
  w.u32(narrow(tensors.size(), "record count"));
  for (const auto& [name, t] : tensors) {
    w.u32(narrow(name.size(), "name length"));
    w.raw(name);
    w.u32(narrow(t.rank(), "rank"));
    for (std::size_t d : t.shape()) w.u32(narrow(d, "dimension"));
    for (Real v : t.data()) w.f32(static_cast<float>(v));
  }
  w.u64(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

template <class Real>
TrimModel<Real> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint: file too short");
  const std::size_t body = bytes.size() - 8;
  Reader tail(bytes.data() + body, 8);
  if (tail.u64() != fnv1a64(bytes.data(), body)) throw FormatError("checkpoint: checksum mismatch");

  Reader r(bytes.data(), body);
  if (r.raw(4) != "TRIM") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  c.vocab_size = r.u32();
  c.d_model = r.u32();
  c.n_heads = r.u32();
  c.d_ffn = r.u32();
  c.n_blocks = r.u32();
  c.max_seq_len = r.u32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  UnitMask mask(c.n_units());
  for (std::size_t i = 0; i < c.n_units(); ++i) {
    const std::uint8_t alive = r.u8();
    if (alive > 1) throw FormatError("checkpoint: bad mask byte");
    mask.set_alive(UnitId::from_index(i), alive == 1);
  }
  std::map<std::string, std::vector<Real>> tensors;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.raw(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) numel *= r.u32();
    if (numel * 4 > r.remaining()) throw FormatError("checkpoint: truncated tensor " + name);
    std::vector<Real> values(numel);
    for (Real& v : values) v = static_cast<Real>(r.f32());
    if (!tensors.emplace(name, std::move(values)).second)
      throw FormatError("checkpoint: duplicate tensor " + name);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return TrimModel<Real>::from_state(c, mask, tensors);
}

template <class Real>
void save_checkpoint(const TrimModel<Real>& model, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

template <class Real>
TrimModel<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint<Real>(bytes);
}

template std::vector<std::uint8_t> serialize_checkpoint<float>(const TrimModel<float>&);
template std::vector<std::uint8_t> serialize_checkpoint<double>(const TrimModel<double>&);
template TrimModel<float> deserialize_checkpoint<float>(const std::vector<std::uint8_t>&);
template TrimModel<double> deserialize_checkpoint<double>(const std::vector<std::uint8_t>&);
template void save_checkpoint<float>(const TrimModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const TrimModel<double>&, const std::filesystem::path&);
template TrimModel<float> load_checkpoint<float>(const std::filesystem::path&);
template TrimModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace trimllm
