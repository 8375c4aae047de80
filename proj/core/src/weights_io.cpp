#include "musicnet/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <zlib.h>

namespace musicnet {

namespace {

constexpr std::size_t kHeaderBytes = 8;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  std::uint8_t u8() {
    need(1, "byte");
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2, "uint16");
    const auto v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "uint32");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | in_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated weight file while reading ") + what);
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

Tensor matrix_tensor(const MatrixRd& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    }
  }
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data));
}

MatrixRd tensor_matrix(const Tensor& t) {
  MatrixRd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

}  // namespace

const NamedTensor* WeightFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_weight_file(const std::vector<NamedTensor>& tensors) {
  Writer w;
  w.bytes(kWeightMagic, 4);
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw ContractViolation("tensor name too long: " + name);
    if (t.rank() > 0xFF) throw ContractViolation("tensor rank too large: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(kDtypeFloat32);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      w.u32(bits);
    }
  }
  auto& buf = w.buffer();
  const std::uint32_t crc =
      crc32_ieee(std::span<const std::uint8_t>(buf).subspan(kHeaderBytes));
  w.u32(crc);
  return std::move(buf);
}

WeightFile parse_weight_file(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kWeightMagic, 4) != 0) throw FormatError("bad magic, not an MNW1 file");
  WeightFile file;
  file.format_version = r.u32();
  if (file.format_version != kWeightFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(file.format_version));
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    const std::uint16_t name_len = r.u16();
    const auto name = r.take(name_len, "tensor name");
    nt.name.assign(name.begin(), name.end());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeFloat32) {
      throw FormatError("tensor " + nt.name + ": unknown dtype code " + std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) throw FormatError("truncated payload for tensor " + nt.name);
    const auto payload = r.take(n * 4, "payload");
    std::vector<float> data(n);
    std::memcpy(data.data(), payload.data(), n * 4);  // little-endian host assumed below
    if constexpr (std::endian::native != std::endian::little) {
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint8_t* p = payload.data() + 4 * k;
        const std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) |
                                   (static_cast<std::uint32_t>(p[3]) << 24);
        std::memcpy(&data[k], &bits, 4);
      }
    }
    nt.tensor = Tensor(std::move(shape), std::move(data));
    file.tensors.push_back(std::move(nt));
  }
  const std::size_t body_end = r.pos();
  file.stored_crc = r.u32();
  if (r.remaining() != 0) throw FormatError("trailing bytes after checksum");
  file.computed_crc = crc32_ieee(bytes.subspan(kHeaderBytes, body_end - kHeaderBytes));
  return file;
}

std::vector<NamedTensor> model_tensors(const MusicNetModel& model) {
  std::vector<NamedTensor> out;
  std::vector<float> window(model.plan.window.data(),
                            model.plan.window.data() + model.plan.window.size());
  const std::size_t n_window = window.size();
  out.push_back({"feat.window", Tensor({n_window}, std::move(window))});
  out.push_back({"feat.real_basis", matrix_tensor(model.plan.real_basis)});
  out.push_back({"feat.imag_basis", matrix_tensor(model.plan.imag_basis)});
  out.push_back({"feat.mel_weights", matrix_tensor(model.plan.mel_weights)});
  model.params.for_each([&](const std::string& name, const Tensor& t) { out.push_back({name, t}); });
  return out;
}

std::vector<std::uint8_t> save_weights(const MusicNetModel& model) {
  return encode_weight_file(model_tensors(model));
}

void save_weights(const MusicNetModel& model, const std::filesystem::path& path) {
  const auto bytes = save_weights(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path.string());
}

MusicNetModel load_weights(std::span<const std::uint8_t> bytes, const std::optional<Topology>& expected) {
  const WeightFile file = parse_weight_file(bytes);
  if (!file.crc_ok()) throw IntegrityError("weight file checksum mismatch");

  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : file.tensors) {
    if (!by_name.emplace(nt.name, &nt.tensor).second) {
      throw TopologyError("duplicate tensor " + nt.name);
    }
  }
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TopologyError("missing tensor " + name);
    return *it->second;
  };

  // Infer the widths from the file, then hold every tensor to them.
  Topology topo;
  for (std::size_t i = 0; i < kNumConv; ++i) {
    const Tensor& w = get("conv" + std::to_string(i + 1) + ".weight");
    if (w.rank() != 4) throw TopologyError("conv kernels must be rank 4");
    topo.conv_channels[i] = w.dim(3);
  }
  const Tensor& d1 = get("dense1.weight");
  if (d1.rank() != 2) throw TopologyError("dense weights must be rank 2");
  topo.dense_units = d1.dim(1);
  if (expected && !(topo == *expected)) {
    throw TopologyError("weight file topology (" + topo.to_string() +
                        ") deviates from the expected topology (" + expected->to_string() + ")");
  }

  MusicNetModel model;
  model.topology = topo;
  model.params = NetworkParams<float>::zeros(topo);
  const auto shapes = parameter_shapes(topo);
  std::size_t k = 0;
  model.params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& src = get(name);
    if (src.shape() != shapes[k].second) {
      throw TopologyError("tensor " + name + " has shape " + shape_string(src.shape()) +
                          ", expected " + shape_string(shapes[k].second));
    }
    t = src;
    ++k;
  });

  const Tensor& window = get("feat.window");
  const Tensor& real = get("feat.real_basis");
  const Tensor& imag = get("feat.imag_basis");
  const Tensor& mel = get("feat.mel_weights");
  if (window.rank() != 1 || real.rank() != 2 || imag.rank() != 2 || mel.rank() != 2) {
    throw TopologyError("featurization tensors have the wrong rank");
  }
  FeaturePlan& plan = model.plan;
  plan.n_fft = static_cast<int>(window.dim(0));
  plan.n_bins = plan.n_fft / 2 + 1;
  plan.n_mels = static_cast<int>(mel.dim(1));
  plan.window = Eigen::VectorXd(plan.n_fft);
  for (int i = 0; i < plan.n_fft; ++i) plan.window[i] = window[static_cast<std::size_t>(i)];
  plan.real_basis = tensor_matrix(real);
  plan.imag_basis = tensor_matrix(imag);
  plan.mel_weights = tensor_matrix(mel);
  try {
    plan.validate();
  } catch (const ContractViolation& e) {
    throw TopologyError(e.what());
  }
  if (by_name.size() != 4 + shapes.size()) throw TopologyError("unexpected extra tensors in file");
  return model;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

MusicNetModel load_weights(const std::filesystem::path& path, const std::optional<Topology>& expected) {
  return load_weights(read_file_bytes(path), expected);
}

}  // namespace musicnet
