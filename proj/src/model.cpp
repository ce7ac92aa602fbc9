#include "rrp/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rrp/errors.hpp"
#include "rrp/rng.hpp"

namespace rrp {

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.image_channels == 0) throw ValidationError("model: image_channels must be positive");
  if (cfg.channels.size() != 3) throw ValidationError("model: channel plan must have exactly three stages");
  for (auto c : cfg.channels) {
    if (c == 0) throw ValidationError("model: channel counts must be positive");
  }
  if (cfg.head_width == 0) throw ValidationError("model: head_width must be positive");
  if (!(cfg.init_std > 0.0)) throw ValidationError("model: init_std must be > 0");
  validate_label_config(cfg.label);
  validate_rram_config(cfg.rram);
}

// ---------------------------------------------------------------------------

void ModelParams::add(const std::string& name, Tensor tensor) {
  if (!index_.emplace(name, entries_.size()).second) throw ValidationError("duplicate parameter name " + name);
  entries_.push_back({name, std::move(tensor)});
}

const Tensor& ModelParams::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("missing parameter " + name);
  return entries_[it->second].tensor;
}

Tensor& ModelParams::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("missing parameter " + name);
  return entries_[it->second].tensor;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in = cfg.image_channels;
  std::size_t conv = 0;
  for (auto c : cfg.channels) {
    for (int rep = 0; rep < 2; ++rep, ++conv) {
      out.push_back({"backbone." + std::to_string(conv) + ".weight", {c, in, 3, 3}});
      out.push_back({"backbone." + std::to_string(conv) + ".bias", {c}});
      in = c;
    }
  }
  const std::size_t cx = cfg.feature_channels();
  if (cfg.rram_enabled) {
    const std::size_t n = cfg.rram.nodes, d = cfg.rram.dim;
    out.push_back({"rram.theta.weight", {n, cx, 1, 1}});
    out.push_back({"rram.theta.bias", {n}});
    out.push_back({"rram.phi.weight", {d, cx, 1, 1}});
    out.push_back({"rram.phi.bias", {d}});
    out.push_back({"rram.psi.weight", {cx, d, 1, 1}});
    out.push_back({"rram.psi.bias", {cx}});
    if (cfg.rram.gcn_layers > 0) out.push_back({"rram.adjacency", {n, n}});
    for (std::size_t l = 0; l < cfg.rram.gcn_layers; ++l) {
      out.push_back({"rram.gcn." + std::to_string(l) + ".weight", {d, d}});
    }
  }
  const std::size_t hw = cfg.head_width;
  out.push_back({"head.reg.0.weight", {hw, cx, 3, 3}});
  out.push_back({"head.reg.0.bias", {hw}});
  out.push_back({"head.reg.1.weight", {1, hw, 1, 1}});
  out.push_back({"head.reg.1.bias", {1}});
  out.push_back({"head.cls.0.weight", {hw, cx, 3, 3}});
  out.push_back({"head.cls.0.bias", {hw}});
  out.push_back({"head.cls.1.weight", {cfg.num_classes(), hw, 1, 1}});
  out.push_back({"head.cls.1.bias", {cfg.num_classes()}});
  return out;
}

namespace {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate_model_config(cfg);
  ModelParams params;
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    std::vector<double> values(shape_size(shape), 0.0);
    if (!ends_with(name, ".bias")) {
      double std = cfg.init_std;
      if (cfg.backbone_init == InitScheme::kaiming && name.starts_with("backbone.")) {
        std = std::sqrt(2.0 / static_cast<double>(shape[1] * shape[2] * shape[3]));
      }
      SplitMix64 rng(derive_key(seed, name_hash(name)));
      for (auto& v : values) v = std * rng.normal();
    }
    params.add(name, Tensor(shape, std::move(values), true));
  }
  return params;
}

void check_params_match(const ModelParams& params, const ModelConfig& cfg) {
  const auto layout = parameter_layout(cfg);
  for (const auto& [name, shape] : layout) {
    if (!params.contains(name)) throw ValidationError("checkpoint is missing parameter " + name + " required by config");
    const auto& got = params.get(name).shape();
    if (got != shape) {
      throw ValidationError("checkpoint parameter " + name + " has shape " + shape_string(got) + ", config expects " +
                            shape_string(shape));
    }
  }
  if (params.size() != layout.size()) {
    for (const auto& name : params.names()) {
      bool known = false;
      for (const auto& entry : layout) known = known || entry.first == name;
      if (!known) throw ValidationError("checkpoint parameter " + name + " is not part of the configured model");
    }
  }
}

RramParams rram_params(const ModelParams& params, const ModelConfig& cfg) {
  RramParams r;
  r.theta_weight = params.get("rram.theta.weight");
  r.theta_bias = params.get("rram.theta.bias");
  r.phi_weight = params.get("rram.phi.weight");
  r.phi_bias = params.get("rram.phi.bias");
  r.psi_weight = params.get("rram.psi.weight");
  r.psi_bias = params.get("rram.psi.bias");
  if (cfg.rram.gcn_layers > 0) r.adjacency = params.get("rram.adjacency");
  for (std::size_t l = 0; l < cfg.rram.gcn_layers; ++l) {
    r.gcn_weights.push_back(params.get("rram.gcn." + std::to_string(l) + ".weight"));
  }
  return r;
}

Tensor backbone_forward(const Tensor& image, const ModelParams& params, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_channels) {
    throw DimensionError("backbone: expected [" + std::to_string(cfg.image_channels) + ",h,w] image, got " +
                         shape_string(image.shape()));
  }
  if (image.dim(1) % kDownsample != 0 || image.dim(2) % kDownsample != 0) {
    throw DimensionError("backbone: image " + shape_string(image.shape()) + " not divisible by 8");
  }
  Tensor x = image;
  std::size_t conv = 0;
  for (std::size_t stage = 0; stage < cfg.channels.size(); ++stage) {
    for (int rep = 0; rep < 2; ++rep, ++conv) {
      const std::string prefix = "backbone." + std::to_string(conv);
      x = relu(conv2d(x, params.get(prefix + ".weight"), params.get(prefix + ".bias"), 1));
    }
    x = maxpool2(x);
  }
  return x;
}

ModelOutput model_forward(const Tensor& image, const ModelParams& params, const ModelConfig& cfg) {
  const std::size_t s = cfg.label.stride();
  if (image.rank() == 3 && (image.dim(1) % s != 0 || image.dim(2) % s != 0)) {
    throw DimensionError("model: image " + shape_string(image.shape()) + " not divisible by label stride " +
                         std::to_string(s));
  }
  Tensor x = backbone_forward(image, params, cfg);
  if (cfg.rram_enabled) x = rram_forward(x, rram_params(params, cfg)).fused;

  const auto [rows, cols] = label_grid_dims(image.dim(1), image.dim(2), cfg.label);
  x = bilinear_resize(x, rows, cols);

  ModelOutput out;
  Tensor reg = relu(conv2d(x, params.get("head.reg.0.weight"), params.get("head.reg.0.bias"), 1));
  out.count = conv2d(reg, params.get("head.reg.1.weight"), params.get("head.reg.1.bias"), 0);
  Tensor cls = relu(conv2d(x, params.get("head.cls.0.weight"), params.get("head.cls.0.bias"), 1));
  out.logits = conv2d(cls, params.get("head.cls.1.weight"), params.get("head.cls.1.bias"), 0);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'R', 'R', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw LengthError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    if (name.size() > 0xFFFF) throw FormatError("checkpoint: parameter name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const std::string magic = in.text(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic, expected RRPC");
  const auto version = in.le<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("checkpoint: version mismatch, file has " + std::to_string(version) + ", reader supports " +
                      std::to_string(kVersion));
  }
  const auto count = in.le<std::uint32_t>("tensor count");
  ModelParams params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = in.le<std::uint16_t>("name length");
    const std::string name = in.text(len, "name");
    if (params.contains(name)) throw FormatError("checkpoint: duplicate tensor name " + name);
    const auto rank = in.le<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.le<std::uint32_t>("dims");
      if (d == 0) throw FormatError("checkpoint: zero dimension in " + name);
    }
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<float>(in.le<std::uint32_t>("tensor data"));
    params.add(name, Tensor(shape, std::move(values), true));
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes after last tensor");
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ModelParams quantize_to_float(const ModelParams& params) {
  ModelParams out = params.clone();
  for (auto& e : out.entries()) {
    for (auto& v : e.tensor.mutable_data()) v = static_cast<float>(v);
  }
  return out;
}

}  // namespace rrp
