#include "jekyll/classifiers/backbone.hpp"

#include <random>

#include "jekyll/core/error.hpp"

namespace jekyll::classifiers {

using nn::Conv2dGeometry;

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec, nn::ParameterStore& store,
                                        std::uint64_t seed) {
  std::unique_ptr<Backbone> b;
  if (spec.name == "toy_cnn") {
    if (spec.width < 1) throw ValidationError("toy_cnn width must be positive");
    b = std::make_unique<ToyCnn>(spec.width, store, seed);
  } else if (spec.name == "densenet121") {
    b = std::make_unique<DenseNet121>(store, seed);
  } else {
    throw ValidationError("unknown backbone '" + spec.name + "'");
  }
  return b;
}

ToyCnn::ToyCnn(int width, nn::ParameterStore& store, std::uint64_t seed) : width_(width) {
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store, rng, nn::InitScheme::kaiming_uniform);
  conv1_ = make.conv("block1.conv", 3, width, 3, Conv2dGeometry::symmetric(1, 1));
  conv2_ = make.conv("block2.conv", width, 2 * width, 3, Conv2dGeometry::symmetric(1, 1));
  conv3_ = make.conv("block3.conv", 2 * width, 4 * width, 3, Conv2dGeometry::symmetric(1, 1));
}

BackboneOutput ToyCnn::forward(const nn::Var& x, bool, bool stop_at_tap) const {
  nn::Var h = nn::max_pool2d(nn::relu(conv1_(x)), 2, 2);
  BackboneOutput out;
  out.tap = nn::relu(conv2_(h));
  if (stop_at_tap) return out;
  out.final_maps = nn::relu(conv3_(nn::max_pool2d(out.tap, 2, 2)));
  return out;
}

DenseNet121::DenseNet121(nn::ParameterStore& store, std::uint64_t seed) {
  constexpr int kGrowth = 32;
  constexpr int kBottleneck = 4;
  const int layers_per_block[] = {6, 12, 24, 16};
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store, rng, nn::InitScheme::kaiming_uniform);

  stem_conv_ = make.conv("stem.conv", 3, 64, 7, Conv2dGeometry::symmetric(2, 3), false);
  stem_norm_ = make.batch_norm("stem.norm", 64);
  int channels = 64;
  for (int b = 0; b < 4; ++b) {
    std::vector<DenseLayer> block;
    for (int l = 0; l < layers_per_block[b]; ++l) {
      const std::string p = "denseblock" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1);
      DenseLayer layer;
      layer.norm1 = make.batch_norm(p + ".norm1", channels);
      layer.conv1 = make.conv(p + ".conv1", channels, kBottleneck * kGrowth, 1,
                              Conv2dGeometry::symmetric(1, 0), false);
      layer.norm2 = make.batch_norm(p + ".norm2", kBottleneck * kGrowth);
      layer.conv2 = make.conv(p + ".conv2", kBottleneck * kGrowth, kGrowth, 3,
                              Conv2dGeometry::symmetric(1, 1), false);
      block.push_back(std::move(layer));
      channels += kGrowth;
    }
    blocks_.push_back(std::move(block));
    if (b < 3) {
      const std::string p = "transition" + std::to_string(b + 1);
      Transition t;
      t.norm = make.batch_norm(p + ".norm", channels);
      t.conv = make.conv(p + ".conv", channels, channels / 2, 1, Conv2dGeometry::symmetric(1, 0),
                         false);
      transitions_.push_back(std::move(t));
      channels /= 2;
    }
  }
  final_norm_ = make.batch_norm("final.norm", channels);
  channels_out_ = channels;
}

BackboneOutput DenseNet121::forward(const nn::Var& x, bool training, bool stop_at_tap) const {
  nn::Var h = nn::relu(stem_norm_(stem_conv_(x), training));
  h = nn::max_pool2d(h, 3, 2, 1);
  BackboneOutput out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (const auto& layer : blocks_[b]) {
      nn::Var y = layer.conv1(nn::relu(layer.norm1(h, training)));
      y = layer.conv2(nn::relu(layer.norm2(y, training)));
      h = nn::concat_channels({h, y});
    }
    if (b < transitions_.size()) {
      const auto& t = transitions_[b];
      h = t.conv(nn::relu(t.norm(h, training)));
      if (b == 2) {
        out.tap = h;
        if (stop_at_tap) return out;
      }
      h = nn::avg_pool2d(h, 2, 2);
    }
  }
  out.final_maps = nn::relu(final_norm_(h, training));
  return out;
}

}  // namespace jekyll::classifiers
