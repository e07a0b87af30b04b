#include "jekyll/translator/networks.hpp"

#include <random>

#include "jekyll/core/error.hpp"

namespace jekyll::translator {

namespace {

void record(ShapeTrace* trace, const std::string& name, const nn::Var& v) {
  if (!trace) return;
  const auto& s = v.shape();
  trace->emplace_back(name, std::vector<int>(s.begin() + 1, s.end()));
}

}  // namespace

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  if (config.channels != 1 && config.channels != 3)
    throw ValidationError("generator channels must be 1 or 3");
  if (config.base_width < 1 || config.residual_blocks < 1)
    throw ValidationError("generator width and residual block count must be positive");
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store_, rng, nn::InitScheme::normal_002);
  const int w = config.base_width;
  using G = nn::Conv2dGeometry;

  encoder_.push_back({make.conv("enc0.conv", config.channels, w, 7, G::symmetric(1, 0)),
                      make.instance_norm("enc0.norm", w)});
  encoder_.push_back({make.conv("enc1.conv", w, 2 * w, 3, G::symmetric(2, 1)),
                      make.instance_norm("enc1.norm", 2 * w)});
  encoder_.push_back({make.conv("enc2.conv", 2 * w, 4 * w, 3, G::symmetric(2, 1)),
                      make.instance_norm("enc2.norm", 4 * w)});
  for (int b = 0; b < config.residual_blocks; ++b) {
    const std::string p = "res" + std::to_string(b);
    ResidualBlock block;
    block.first = {make.conv(p + ".conv0", 4 * w, 4 * w, 3, G::symmetric(1, 0)),
                   make.instance_norm(p + ".norm0", 4 * w)};
    block.second = {make.conv(p + ".conv1", 4 * w, 4 * w, 3, G::symmetric(1, 0)),
                    make.instance_norm(p + ".norm1", 4 * w)};
    blocks_.push_back(std::move(block));
  }
  decoder_.push_back({make.deconv("dec0.deconv", 4 * w, 2 * w, 3, 2, 1, 1),
                      make.instance_norm("dec0.norm", 2 * w)});
  decoder_.push_back({make.deconv("dec1.deconv", 2 * w, w, 3, 2, 1, 1),
                      make.instance_norm("dec1.norm", w)});
  output_ = {make.conv("out.conv", w, config.channels, 7, G::symmetric(1, 0)),
             make.instance_norm("out.norm", config.channels)};
}

nn::Var Generator::forward(const nn::Var& x, ShapeTrace* trace) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.channels)
    throw ValidationError("generator expects [N," + std::to_string(config_.channels) + ",H,W] input");
  if (s[2] % 4 != 0 || s[3] % 4 != 0 || s[2] < 8 || s[3] < 8)
    throw ValidationError("generator input resolution must be a multiple of 4 and at least 8");

  nn::Var h = nn::reflect_pad(x, 3);
  record(trace, "padding", h);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    h = nn::relu(encoder_[i].norm(encoder_[i].conv(h)));
    record(trace, "conv2d", h);
  }
  for (const auto& b : blocks_) {
    nn::Var r = nn::relu(b.first.norm(b.first.conv(nn::reflect_pad(h, 1))));
    r = b.second.norm(b.second.conv(nn::reflect_pad(r, 1)));
    h = nn::add(h, r);
    record(trace, "residual block", h);
  }
  for (const auto& d : decoder_) {
    h = nn::relu(d.norm(d.deconv(h)));
    record(trace, "deconv2d", h);
  }
  h = nn::reflect_pad(h, 3);
  record(trace, "padding", h);
  h = nn::tanh(output_.norm(output_.conv(h)));
  record(trace, "conv2d", h);
  return h;
}

PatchDiscriminator::PatchDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed)
    : config_(config) {
  if (config.channels != 1 && config.channels != 3)
    throw ValidationError("discriminator channels must be 1 or 3");
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store_, rng, nn::InitScheme::normal_002);
  const int w = config.base_width;
  using G = nn::Conv2dGeometry;
  const int widths[] = {config.channels, w, 2 * w, 4 * w, 8 * w};
  for (int i = 0; i < 3; ++i) {
    const std::string p = "stage" + std::to_string(i);
    stages_.push_back({make.conv(p + ".conv", widths[i], widths[i + 1], 4, G::symmetric(2, 1)),
                       make.instance_norm(p + ".norm", widths[i + 1]), true});
  }
  stages_.push_back({make.conv("stage3.conv", widths[3], widths[4], 4, G::same(4)),
                     make.instance_norm("stage3.norm", widths[4]), true});
  Stage last;
  last.conv = make.conv("score.conv", widths[4], 1, 4, G::same(4));
  last.normalized = false;
  stages_.push_back(std::move(last));
}

nn::Var PatchDiscriminator::forward(const nn::Var& x, ShapeTrace* trace) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != config_.channels)
    throw ValidationError("discriminator expects [N," + std::to_string(config_.channels) +
                          ",H,W] input");
  if (s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] < 16 || s[3] < 16)
    throw ValidationError("discriminator input resolution must be a multiple of 8 and at least 16");
  nn::Var h = x;
  for (const auto& st : stages_) {
    h = st.conv(h);
    if (st.normalized) h = nn::relu(st.norm(h));
    record(trace, "conv2d", h);
  }
  return h;
}

int PatchDiscriminator::receptive_field() {
  // Walk back from one output cell through (kernel, stride) pairs.
  const int kernels[] = {4, 4, 4, 4, 4};
  const int strides[] = {2, 2, 2, 1, 1};
  int rf = 1;
  for (int i = 4; i >= 0; --i) rf = (rf - 1) * strides[i] + kernels[i];
  return rf;
}

int PatchDiscriminator::output_size(int input_size) { return input_size / 8; }

GlobalDiscriminatorHead::GlobalDiscriminatorHead(int patch_cells, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store_, rng, nn::InitScheme::normal_002);
  dense_ = make.dense("global.fc", patch_cells, 1);
}

nn::Var GlobalDiscriminatorHead::forward(const nn::Var& patch_map) const {
  return dense_(nn::flatten(patch_map));
}

}  // namespace jekyll::translator
