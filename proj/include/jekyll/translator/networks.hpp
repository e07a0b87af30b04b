#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jekyll/nn/module.hpp"

namespace jekyll::translator {

// Per-layer output shapes recorded during a forward pass (N omitted).
using ShapeTrace = std::vector<std::pair<std::string, std::vector<int>>>;

struct GeneratorConfig {
  int channels = 3;        // image channels in and out
  int base_width = 64;     // channels after the first convolution
  int residual_blocks = 9;

  static GeneratorConfig reference(int channels = 3) { return {channels, 64, 9}; }
  // Desk-scale 64x64 configuration: same topology, six residual blocks.
  static GeneratorConfig toy(int channels = 1, int base_width = 8) { return {channels, base_width, 6}; }
};

/// Residual encoder/decoder generator with instance normalization and a tanh output.
class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed);

  // x: [N, channels, H, W] with H, W divisible by 4.
  nn::Var forward(const nn::Var& x, ShapeTrace* trace = nullptr) const;
  nn::Var operator()(const nn::Var& x) const { return forward(x); }

  const GeneratorConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

 private:
  struct ConvUnit {
    nn::Conv2d conv;
    nn::InstanceNorm2d norm;
  };
  struct DeconvUnit {
    nn::ConvTranspose2d deconv;
    nn::InstanceNorm2d norm;
  };
  struct ResidualBlock {
    ConvUnit first;
    ConvUnit second;
  };

  GeneratorConfig config_;
  nn::ParameterStore store_;
  std::vector<ConvUnit> encoder_;
  std::vector<ResidualBlock> blocks_;
  std::vector<DeconvUnit> decoder_;
  ConvUnit output_;
};

struct DiscriminatorConfig {
  int channels = 3;
  int base_width = 64;

  static DiscriminatorConfig reference(int channels = 3) { return {channels, 64}; }
  static DiscriminatorConfig toy(int channels = 1, int base_width = 8) { return {channels, base_width}; }
};

/// 70x70 PatchGAN: a 256x256 input yields a 32x32x1 map of unbounded patch scores.
class PatchDiscriminator {
 public:
  PatchDiscriminator(const DiscriminatorConfig& config, std::uint64_t seed);

  nn::Var forward(const nn::Var& x, ShapeTrace* trace = nullptr) const;
  nn::Var operator()(const nn::Var& x) const { return forward(x); }

  const DiscriminatorConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  static int receptive_field();
  static int output_size(int input_size);

 private:
  struct Stage {
    nn::Conv2d conv;
    nn::InstanceNorm2d norm;
    bool normalized = true;
  };

  DiscriminatorConfig config_;
  nn::ParameterStore store_;
  std::vector<Stage> stages_;
};

/// Single fully-connected layer scoring the whole flattened patch map.
class GlobalDiscriminatorHead {
 public:
  GlobalDiscriminatorHead(int patch_cells, std::uint64_t seed);

  nn::Var forward(const nn::Var& patch_map) const;  // [N,1,h,w] -> [N,1]

  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  nn::Dense& layer() { return dense_; }

 private:
  nn::ParameterStore store_;
  nn::Dense dense_;
};

}  // namespace jekyll::translator
