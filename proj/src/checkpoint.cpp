#include "noisyforge/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "noisyforge/data.hpp"
#include "noisyforge/error.hpp"

namespace noisyforge {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint8_t kMagic[4] = {'N', 'F', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

enum Kind : std::uint8_t { kInput = 0, kDense = 1, kConv = 2, kRelu = 3, kMaxPool = 4, kFlatten = 5 };

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { raw(&v, 2); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void record(Kind kind, const std::vector<std::size_t>& dims) {
    u8(kind);
    u8(static_cast<std::uint8_t>(dims.size()));
    for (auto d : dims) u32(static_cast<std::uint32_t>(d));
  }
  void payload(const Tensor& t) {
    const auto values = t.data();
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
    const std::size_t size = values.size() * sizeof(float);
    crc_ = crc32(crc_, bytes, static_cast<uInt>(size));
    out_.insert(out_.end(), bytes, bytes + size);
  }
  std::vector<std::uint8_t> finish() {
    u32(static_cast<std::uint32_t>(crc_));
    return std::move(out_);
  }

 private:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> out_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    std::uint16_t v;
    std::memcpy(&v, take(2).data(), 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  }
  Tensor payload(Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0 || n > remaining() / sizeof(float) / d) {
        throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) + ": parameter " +
                          shape_string(shape) + " exceeds the remaining bytes");
      }
      n *= d;
    }
    const auto b = take(n * sizeof(float));
    crc_ = crc32(crc_, b.data(), static_cast<uInt>(b.size()));
    std::vector<float> values(n);
    std::memcpy(values.data(), b.data(), b.size());
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::uint32_t crc() const { return static_cast<std::uint32_t>(crc_); }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining()) {
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                        " more bytes)");
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

void expect_rank(std::uint8_t kind, std::size_t rank, std::size_t expected, std::size_t record) {
  if (rank != expected) {
    throw FormatError("checkpoint record " + std::to_string(record) + " (kind " + std::to_string(kind) + ") has rank " +
                      std::to_string(rank) + ", expected " + std::to_string(expected));
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelGraph& model) {
  Writer w;
  for (auto c : kMagic) w.u8(c);
  w.u16(kVersion);
  w.u16(static_cast<std::uint16_t>(model.layers().size() + 1));
  w.record(kInput, model.input_shape());
  for (const auto& layer : model.layers()) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      w.record(kDense, {d->in, d->out});
      w.payload(d->weight);
      w.payload(d->bias);
    } else if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      w.record(kConv, {c->out_channels, c->in_channels, c->kernel, c->stride, c->padding});
      w.payload(c->weight);
      w.payload(c->bias);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      w.record(kRelu, {});
    } else if (const auto* p = std::get_if<MaxPoolLayer>(&layer)) {
      w.record(kMaxPool, {p->window, p->stride});
    } else {
      w.record(kFlatten, {});
    }
  }
  return w.finish();
}

ModelGraph deserialize_checkpoint(std::span<const std::uint8_t> bytes, InjectionOptions options) {
  Reader r(bytes);
  for (auto c : kMagic) {
    if (r.u8() != c) throw FormatError("not a checkpoint: bad magic bytes");
  }
  const auto version = r.u16();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected 1)");
  }
  const std::size_t records = r.u16();
  if (records < 2) throw FormatError("checkpoint holds no layers");

  Shape input;
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < records; ++i) {
    const auto kind = r.u8();
    const std::size_t rank = r.u8();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    if (i == 0) {
      if (kind != kInput) throw FormatError("checkpoint does not start with an input record");
      input = dims;
      continue;
    }
    switch (kind) {
      case kDense: {
        expect_rank(kind, rank, 2, i);
        auto weight = r.payload({dims[0], dims[1]});
        auto bias = r.payload({dims[1]});
        layers.emplace_back(DenseLayer{dims[0], dims[1], std::move(weight), std::move(bias)});
        break;
      }
      case kConv: {
        expect_rank(kind, rank, 5, i);
        auto weight = r.payload({dims[0], dims[1], dims[2], dims[2]});
        auto bias = r.payload({dims[0]});
        layers.emplace_back(ConvLayer{dims[1], dims[0], dims[2], dims[3], dims[4], std::move(weight), std::move(bias)});
        break;
      }
      case kRelu:
        expect_rank(kind, rank, 0, i);
        layers.emplace_back(ReluLayer{});
        break;
      case kMaxPool:
        expect_rank(kind, rank, 2, i);
        layers.emplace_back(MaxPoolLayer{dims[0], dims[1]});
        break;
      case kFlatten:
        expect_rank(kind, rank, 0, i);
        layers.emplace_back(FlattenLayer{});
        break;
      default:
        throw FormatError("checkpoint record " + std::to_string(i) + " has unknown kind " + std::to_string(kind));
    }
  }
  const std::uint32_t computed = r.crc();
  const std::uint32_t stored = r.u32();
  if (stored != computed) throw FormatError("checkpoint CRC mismatch: payload is corrupted");
  if (r.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes after the CRC");
  }

  // The final Dense width defines the class count; the graph constructor
  // verifies that every shape composes.
  std::size_t classes = 0;
  for (const auto& l : layers)
    if (const auto* d = std::get_if<DenseLayer>(&l)) classes = d->out;
  try {
    auto points = default_injection_points(layers, options);
    return ModelGraph(std::move(input), std::move(layers), classes, std::move(points));
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint shape disagreement: ") + e.what());
  }
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing checkpoint " + path.string());
}

ModelGraph load_checkpoint(const std::filesystem::path& path, InjectionOptions options) {
  const auto bytes = read_file_bytes(path);
  return deserialize_checkpoint(bytes, options);
}

ModelGraph load_checkpoint_as(const std::filesystem::path& path, const ModelGraph& expected) {
  ModelGraph loaded = load_checkpoint(path);
  if (!loaded.same_architecture(expected)) {
    throw FormatError("checkpoint shape disagreement: " + path.string() + " does not hold the expected architecture");
  }
  loaded.set_injection_points(expected.injection_points());
  return loaded;
}

}  // namespace noisyforge
