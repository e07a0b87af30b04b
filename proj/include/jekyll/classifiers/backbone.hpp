#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "jekyll/nn/module.hpp"

namespace jekyll::classifiers {

struct BackboneSpec {
  std::string name = "toy_cnn";  // "toy_cnn" or "densenet121"
  int width = 16;                // toy_cnn only: channels of the first block
  std::string pretrained_weights;  // optional weight file for the backbone layers
};

struct BackboneOutput {
  nn::Var tap;         // feature-tap activation (identity features)
  nn::Var final_maps;  // last convolutional feature maps (CAM source)
};

/// Convolutional feature extractor. Registers its layers into a caller-owned store.
class Backbone {
 public:
  virtual ~Backbone() = default;

  // With stop_at_tap the pass ends once the tap is computed (final_maps left empty).
  virtual BackboneOutput forward(const nn::Var& x, bool training, bool stop_at_tap) const = 0;
  virtual int feature_channels() const = 0;
  virtual const std::string& tap_layer() const = 0;
  virtual const std::string& name() const = 0;
};

// Throws ValidationError for unknown backbone names.
std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec, nn::ParameterStore& store,
                                        std::uint64_t seed);

/// Three conv blocks; the tap is the second block's activation and the third
/// block provides the final maps.
class ToyCnn final : public Backbone {
 public:
  ToyCnn(int width, nn::ParameterStore& store, std::uint64_t seed);
  BackboneOutput forward(const nn::Var& x, bool training, bool stop_at_tap) const override;
  int feature_channels() const override { return 4 * width_; }
  const std::string& tap_layer() const override { return tap_; }
  const std::string& name() const override { return name_; }

 private:
  int width_;
  nn::Conv2d conv1_, conv2_, conv3_;
  std::string tap_ = "block2.conv";
  std::string name_ = "toy_cnn";
};

/// DenseNet-121 feature extractor (growth 32, blocks 6/12/24/16, compression 0.5).
/// The tap is the transition convolution that precedes the final dense block.
class DenseNet121 final : public Backbone {
 public:
  DenseNet121(nn::ParameterStore& store, std::uint64_t seed);
  BackboneOutput forward(const nn::Var& x, bool training, bool stop_at_tap) const override;
  int feature_channels() const override { return channels_out_; }
  const std::string& tap_layer() const override { return tap_; }
  const std::string& name() const override { return name_; }

 private:
  struct DenseLayer {
    nn::BatchNorm2d norm1;
    nn::Conv2d conv1;
    nn::BatchNorm2d norm2;
    nn::Conv2d conv2;
  };
  struct Transition {
    nn::BatchNorm2d norm;
    nn::Conv2d conv;
  };

  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_norm_;
  std::vector<std::vector<DenseLayer>> blocks_;
  std::vector<Transition> transitions_;
  nn::BatchNorm2d final_norm_;
  int channels_out_ = 0;
  std::string tap_ = "transition3.conv";
  std::string name_ = "densenet121";
};

}  // namespace jekyll::classifiers
