#include "segx/container.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace segx {
namespace {

constexpr char kMagic[4] = {'S', 'E', 'G', 'X'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) fail(ErrorKind::Format, "container truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::size_t record_elements(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

const Record& Container::find(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return r;
  }
  fail(ErrorKind::Format, "container has no record named '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode(const Container& c) {
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(Container::kVersion);
  const std::string header = c.header.canonical();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    if (record_elements(r.dims) != r.values.size()) {
      fail(ErrorKind::Shape, "record '" + r.name + "' dims do not match value count");
    }
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name);
    w.u8(static_cast<std::uint8_t>(r.dtype));
    w.u32(static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) w.u32(d);
    for (double v : r.values) {
      switch (r.dtype) {
        case DType::F32: w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
        case DType::F64: w.u64(std::bit_cast<std::uint64_t>(v)); break;
        case DType::U8:
          if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
            fail(ErrorKind::Argument, "record '" + r.name + "': value not representable as u8");
          }
          w.u8(static_cast<std::uint8_t>(v));
          break;
      }
    }
  }
  return w.take();
}

Container decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string_view(kMagic, 4)) fail(ErrorKind::Format, "bad magic: not a SEGX container");
  const std::uint32_t version = r.u32();
  if (version != Container::kVersion) {
    fail(ErrorKind::Format, "unsupported container version " + std::to_string(version));
  }
  Container c;
  const std::uint32_t header_len = r.u32();
  c.header = KeyValues::parse(r.bytes(header_len));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.name = r.bytes(r.u32());
    const std::uint8_t dt = r.u8();
    if (dt != 1 && dt != 2 && dt != 3) fail(ErrorKind::Format, "unknown dtype " + std::to_string(dt));
    rec.dtype = static_cast<DType>(dt);
    const std::uint32_t rank = r.u32();
    if (rank > 8) fail(ErrorKind::Format, "record rank " + std::to_string(rank) + " too large");
    for (std::uint32_t d = 0; d < rank; ++d) rec.dims.push_back(r.u32());
    const std::size_t n = record_elements(rec.dims);
    const std::size_t width = rec.dtype == DType::F64 ? 8 : rec.dtype == DType::F32 ? 4 : 1;
    r.need(n * width);
    rec.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      switch (rec.dtype) {
        case DType::F32: rec.values[j] = std::bit_cast<float>(r.u32()); break;
        case DType::F64: rec.values[j] = std::bit_cast<double>(r.u64()); break;
        case DType::U8: rec.values[j] = r.u8(); break;
      }
    }
    c.records.push_back(std::move(rec));
  }
  if (!r.done()) fail(ErrorKind::Format, "trailing bytes after last record");
  return c;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& c) { write_bytes(path, encode(c)); }

Container read_container(const std::filesystem::path& path) { return decode(read_bytes(path)); }

Record tensor_record(std::string name, const Tensor& t, DType dtype) {
  Record r;
  r.name = std::move(name);
  r.dtype = dtype;
  for (auto d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.values.assign(t.data().begin(), t.data().end());
  return r;
}

Tensor record_tensor(const Record& r) {
  Shape shape(r.dims.begin(), r.dims.end());
  return Tensor(std::move(shape), r.values);
}

Record mask_record(std::string name, const LabelMask& m) {
  Record r;
  r.name = std::move(name);
  r.dtype = DType::U8;
  r.dims = {static_cast<std::uint32_t>(m.batch()), static_cast<std::uint32_t>(m.height()),
            static_cast<std::uint32_t>(m.width())};
  r.values.assign(m.data().begin(), m.data().end());
  return r;
}

LabelMask record_mask(const Record& r) {
  if (r.dtype != DType::U8 || r.dims.size() != 3) fail(ErrorKind::Format, "record '" + r.name + "' is not a mask");
  std::vector<std::uint8_t> data(r.values.begin(), r.values.end());
  return LabelMask(r.dims[0], r.dims[1], r.dims[2], std::move(data));
}

}  // namespace segx
