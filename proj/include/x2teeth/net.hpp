#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "x2teeth/ops.hpp"
#include "x2teeth/random.hpp"
#include "x2teeth/tensor.hpp"

// ExtNet (2D encoder-decoder with concatenation skips), SegNet (multi-label
// sigmoid head) and ReconNet (2D encoder, fully connected bottleneck, 3D
// transposed-conv decoder with a two-way softmax).
namespace x2t {

struct NetConfig {
  std::int64_t height = 96;
  std::int64_t width = 192;
  bool coord_channels = true;     // append normalised row/column planes to the input
  bool instance_norm = true;      // normalise every hidden conv output before its ReLU
  std::int64_t base_channels = 16;
  int stages = 3;                 // stride-2 stages in ExtNet, mirrored on the way up
  std::int64_t max_channels = 64;
  std::int64_t seg_hidden = 32;
  double seg_prior = 0.01;        // initial SegNet probability
  std::array<std::int64_t, 3> patch{24, 12, 12};   // Hp, Wp, Dp
  std::vector<std::int64_t> recon_encoder{32, 64}; // stride-2 conv widths
  std::int64_t latent = 256;
  std::vector<std::int64_t> recon_decoder{32, 16, 8};  // seed grid width, then one per 2x upsampling
  std::uint64_t init_seed = 1;

  std::int64_t in_channels() const { return coord_channels ? 3 : 1; }
  std::int64_t ext_channels(int s) const {
    std::int64_t c = base_channels;
    for (int i = 0; i < s; ++i) c = std::min(max_channels, c * 2);
    return c;
  }
  std::int64_t features() const { return ext_channels(0); }
  std::int64_t encoder_rows() const { return patch[0] >> recon_encoder.size(); }
  std::int64_t encoder_cols() const { return patch[1] >> recon_encoder.size(); }
  std::array<std::int64_t, 3> seed_grid() const {
    const auto up = recon_decoder.size() - 1;
    return {patch[0] >> up, patch[1] >> up, patch[2] >> up};
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("net config: " + m); };
    if (stages < 1 || height <= 0 || width <= 0) bad("stages and extents must be positive");
    const std::int64_t m = std::int64_t{1} << stages;
    if (height % m != 0 || width % m != 0) bad("input extents must be divisible by 2^stages");
    if (base_channels < 1 || max_channels < base_channels || seg_hidden < 1 || latent < 1) bad("channel widths");
    if (!(seg_prior > 0 && seg_prior < 1)) bad("seg_prior must lie in (0, 1)");
    if (recon_encoder.empty() || recon_decoder.empty()) bad("ReconNet needs encoder and decoder stages");
    const std::int64_t e = std::int64_t{1} << recon_encoder.size();
    if (patch[0] % e != 0 || patch[1] % e != 0) bad("patch rows/cols must be divisible by 2^encoder stages");
    const std::int64_t d = std::int64_t{1} << (recon_decoder.size() - 1);
    for (auto p : patch) {
      if (p <= 0 || p % d != 0) bad("patch extents must be divisible by 2^(decoder stages - 1)");
    }
    if (patch[0] > height || patch[1] > width) bad("patch larger than the image");
  }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Parameters are stored by name in creation order; the order is part of the
/// checkpoint format.
template <class T>
class X2TeethNet {
 public:
  explicit X2TeethNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.init_seed, 0x4e7));
    const auto& c = cfg_;
    // ExtNet
    conv("ext.in0", c.features(), c.in_channels(), {3, 3}, rng);
    conv("ext.in1", c.features(), c.features(), {3, 3}, rng);
    for (int s = 1; s <= c.stages; ++s) {
      const auto tag = "ext.down" + std::to_string(s);
      conv(tag + ".a", c.ext_channels(s), c.ext_channels(s - 1), {3, 3}, rng);
      conv(tag + ".b", c.ext_channels(s), c.ext_channels(s), {3, 3}, rng);
    }
    for (int s = c.stages; s >= 1; --s) {
      const auto tag = "ext.up" + std::to_string(s);
      // transpose weights are in×out×k×k
      add_param(tag + ".t.w", {c.ext_channels(s), c.ext_channels(s - 1), 4, 4}, rng, c.ext_channels(s) * 4);
      add_param(tag + ".t.b", {c.ext_channels(s - 1)});
      conv(tag + ".c", c.ext_channels(s - 1), 2 * c.ext_channels(s - 1), {3, 3}, rng);
    }
    ext_count_ = names_.size();
    // SegNet
    conv("seg.hidden", c.seg_hidden, c.features(), {3, 3}, rng);
    conv("seg.head", 32, c.seg_hidden, {1, 1}, rng);
    const T prior = static_cast<T>(std::log(c.seg_prior / (1.0 - c.seg_prior)));
    for (auto& v : param("seg.head.b").values()) v = prior;
    seg_count_ = names_.size();
    // ReconNet
    std::int64_t in = c.features();
    for (std::size_t i = 0; i < c.recon_encoder.size(); ++i) {
      conv("rec.enc" + std::to_string(i), c.recon_encoder[i], in, {3, 3}, rng);
      in = c.recon_encoder[i];
    }
    const std::int64_t flat = in * c.encoder_rows() * c.encoder_cols();
    fc("rec.fc0", c.latent, flat, rng);
    const auto g = c.seed_grid();
    fc("rec.fc1", c.recon_decoder[0] * g[0] * g[1] * g[2], c.latent, rng);
    for (std::size_t i = 1; i < c.recon_decoder.size(); ++i) {
      const auto tag = "rec.up" + std::to_string(i);
      add_param(tag + ".w", {c.recon_decoder[i - 1], c.recon_decoder[i], 4, 4, 4}, rng, c.recon_decoder[i - 1] * 8);
      add_param(tag + ".b", {c.recon_decoder[i]});
    }
    add_param("rec.out.w", {2, c.recon_decoder.back(), 3, 3, 3}, rng, c.recon_decoder.back() * 27);
    add_param("rec.out.b", {2});
  }

  const NetConfig& config() const { return cfg_; }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  Tensor<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return tensors_[it->second];
  }

  enum class Group { ext, seg, recon };
  Group group_of(std::size_t i) const {
    return i < ext_count_ ? Group::ext : (i < seg_count_ ? Group::seg : Group::recon);
  }

  /// 1×1×H×W radiograph -> 1×F×H×W features.
  Tensor<T> extnet(Tape<T>& tape, const Tensor<T>& x) {
    const auto& c = cfg_;
    if (x.shape() != Shape{1, 1, c.height, c.width}) {
      throw ShapeError("extnet: expected 1×1×" + std::to_string(c.height) + "×" + std::to_string(c.width) +
                       ", got " + to_string(x.shape()));
    }
    Tensor<T> h = c.coord_channels ? concat_channels(tape, x, coords()) : x;
    h = conv_relu(tape, h, "ext.in0", 1);
    h = conv_relu(tape, h, "ext.in1", 1);
    std::vector<Tensor<T>> skips{h};
    for (int s = 1; s <= c.stages; ++s) {
      const auto tag = "ext.down" + std::to_string(s);
      h = conv_relu(tape, h, tag + ".a", 2);
      h = conv_relu(tape, h, tag + ".b", 1);
      skips.push_back(h);
    }
    for (int s = c.stages; s >= 1; --s) {
      const auto tag = "ext.up" + std::to_string(s);
      h = conv_transpose2d(tape, h, param(tag + ".t.w"), param(tag + ".t.b"), {2, 2}, {1, 1});
      h = relu(tape, c.instance_norm ? instance_norm(tape, h) : h);
      h = concat_channels(tape, h, skips[static_cast<std::size_t>(s - 1)]);
      h = conv_relu(tape, h, tag + ".c", 1);
    }
    return h;
  }

  /// 1×F×H×W -> H×W×32 probabilities.
  Tensor<T> segnet(Tape<T>& tape, const Tensor<T>& f) {
    if (f.rank() != 4 || f.dim(1) != cfg_.features()) throw ShapeError("segnet: feature channel mismatch");
    Tensor<T> h = conv_relu(tape, f, "seg.hidden", 1);
    h = conv2d(tape, h, param("seg.head.w"), param("seg.head.b"));
    return to_channels_last(tape, sigmoid(tape, h));
  }

  /// Logits before the sigmoid, for tests that need to steer the head.
  Tensor<T> seg_logits(Tape<T>& tape, const Tensor<T>& f) {
    Tensor<T> h = conv_relu(tape, f, "seg.hidden", 1);
    return conv2d(tape, h, param("seg.head.w"), param("seg.head.b"));
  }

  /// N×F×Hp×Wp patches -> N tensors of Hp×Wp×Dp×2 (channel 1 = occupied).
  std::vector<Tensor<T>> reconnet(Tape<T>& tape, const Tensor<T>& patches) {
    const auto& c = cfg_;
    if (patches.rank() != 4 || patches.dim(1) != c.features() || patches.dim(2) != c.patch[0] ||
        patches.dim(3) != c.patch[1]) {
      throw ShapeError("reconnet: expected N×" + std::to_string(c.features()) + "×" + std::to_string(c.patch[0]) +
                       "×" + std::to_string(c.patch[1]) + ", got " + to_string(patches.shape()));
    }
    const std::int64_t N = patches.dim(0);
    Tensor<T> h = patches;
    for (std::size_t i = 0; i < c.recon_encoder.size(); ++i) h = conv_relu(tape, h, "rec.enc" + std::to_string(i), 2);
    h = flatten(tape, h);
    h = relu(tape, fully_connected(tape, h, param("rec.fc0.w"), param("rec.fc0.b")));
    h = relu(tape, fully_connected(tape, h, param("rec.fc1.w"), param("rec.fc1.b")));
    const auto g = c.seed_grid();
    h = reshape(tape, h, Shape{N, c.recon_decoder[0], g[0], g[1], g[2]});
    for (std::size_t i = 1; i < c.recon_decoder.size(); ++i) {
      const auto tag = "rec.up" + std::to_string(i);
      h = conv_transpose3d(tape, h, param(tag + ".w"), param(tag + ".b"), {2, 2, 2}, {1, 1, 1});
      h = relu(tape, c.instance_norm ? instance_norm(tape, h) : h);
    }
    h = conv3d(tape, h, param("rec.out.w"), param("rec.out.b"), {1, 1, 1}, {1, 1, 1});
    h = softmax_channels(tape, h);
    std::vector<Tensor<T>> out;
    for (std::int64_t n = 0; n < N; ++n) out.push_back(to_channels_last(tape, slice_batch(tape, h, n)));
    return out;
  }

 private:
  void add_param(const std::string& name, Shape shape, Rng& rng, std::int64_t fan_in) {
    Tensor<T> t(shape, T(0), true);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
    push(name, t);
  }
  void add_param(const std::string& name, Shape shape) { push(name, Tensor<T>(shape, T(0), true)); }
  void push(const std::string& name, Tensor<T> t) {
    if (index_.contains(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  }
  void conv(const std::string& name, std::int64_t out, std::int64_t in, std::array<std::int64_t, 2> k, Rng& rng) {
    add_param(name + ".w", {out, in, k[0], k[1]}, rng, in * k[0] * k[1]);
    add_param(name + ".b", {out});
  }
  void fc(const std::string& name, std::int64_t out, std::int64_t in, Rng& rng) {
    add_param(name + ".w", {out, in}, rng, in);
    add_param(name + ".b", {out});
  }

  Tensor<T> conv_relu(Tape<T>& tape, const Tensor<T>& x, const std::string& name, int stride) {
    const int pad = static_cast<int>(param(name + ".w").dim(2) / 2);
    auto h = conv2d(tape, x, param(name + ".w"), param(name + ".b"), {stride, stride}, {pad, pad});
    return relu(tape, cfg_.instance_norm ? instance_norm(tape, h) : h);
  }

  // Constant row/column planes in [-1, 1].
  Tensor<T> coords() {
    if (!coords_.defined()) {
      const auto H = cfg_.height, W = cfg_.width;
      coords_ = Tensor<T>(Shape{1, 2, H, W});
      for (std::int64_t r = 0; r < H; ++r) {
        for (std::int64_t c = 0; c < W; ++c) {
          coords_.data()[r * W + c] = static_cast<T>(H > 1 ? 2.0 * r / (H - 1) - 1.0 : 0.0);
          coords_.data()[H * W + r * W + c] = static_cast<T>(W > 1 ? 2.0 * c / (W - 1) - 1.0 : 0.0);
        }
      }
    }
    return coords_;
  }

  NetConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
  std::size_t ext_count_ = 0, seg_count_ = 0;
  Tensor<T> coords_;
};

}  // namespace x2t
