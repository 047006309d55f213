#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hyneter/io.hpp"

namespace hyneter {
namespace {

constexpr char kMagic[8] = {'H', 'Y', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint8_t kFloat64Tag = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n) {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(model_config_json(model.config()));
  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    w.str(p.path);
    w.u8(kFloat64Tag);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) w.u64(e);
  }
  for (const Parameter& p : params) {
    for (double v : p.value.data()) w.f64(v);
  }
  return w.take();
}

void deserialize_checkpoint(Model& model, std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(sizeof kMagic);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  r.str();  // config echo; shapes below are authoritative

  auto& params = model.parameters();
  const std::uint32_t count = r.u32();
  std::vector<Shape> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string path = r.str();
    const std::uint8_t tag = r.u8();
    if (tag != kFloat64Tag) throw CheckpointError("parameter '" + path + "' has unsupported dtype tag " + std::to_string(tag));
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    if (i >= params.size()) {
      throw CheckpointError("checkpoint has extra parameter '" + path + "' (model has " +
                            std::to_string(params.size()) + ")");
    }
    if (params[i].path != path) {
      throw CheckpointError("parameter mismatch at '" + params[i].path + "': checkpoint has '" + path + "'");
    }
    if (params[i].value.shape() != shape) {
      throw CheckpointError("shape mismatch at '" + path + "': checkpoint " + shape_str(shape) + " vs model " +
                            shape_str(params[i].value.shape()));
    }
    shapes.push_back(std::move(shape));
  }
  if (count != params.size()) {
    throw CheckpointError("checkpoint is missing parameter '" + params[count].path + "'");
  }
  std::size_t values = 0;
  for (const Shape& s : shapes) values += shape_numel(s);
  if (r.remaining() != values * 8) {
    throw CheckpointError("checkpoint payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(values * 8) + (r.remaining() < values * 8 ? " (truncated)" : ""));
  }
  std::vector<Tensor> staged;
  staged.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t(shapes[i]);
    for (double& v : t.data()) v = r.f64();
    staged.push_back(std::move(t));
  }
  for (std::uint32_t i = 0; i < count; ++i) params[i].value = std::move(staged[i]);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  deserialize_checkpoint(model, bytes);
}

}  // namespace hyneter
