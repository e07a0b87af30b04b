#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "jekyll/nn/ops.hpp"

namespace jekyll::nn {

struct NamedParameter {
  std::string name;
  Var var;
  bool buffer = false;  // running statistics: persisted, never optimized
  int layer = -1;
};

/// Ordered registry of a network's parameters, grouped into named layers.
/// Layer order is construction order, which the freezing policy relies on.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  void begin_layer(const std::string& name);
  Var add(const std::string& name, Tensor init);
  Var add_buffer(const std::string& name, Tensor init);

  const std::vector<NamedParameter>& entries() const { return entries_; }
  const std::vector<std::string>& layer_names() const { return layers_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }
  bool has_layer(const std::string& name) const;
  const NamedParameter* find(const std::string& name) const;

  // Parameters that currently take part in optimization.
  std::vector<Var> trainable() const;
  std::vector<Var> all_parameters() const;
  std::size_t parameter_count() const;

  void set_trainable(bool on);
  // Freezes every layer except the last k (k >= layer_count unfreezes all).
  void freeze_all_but_last(int k);
  void zero_grad() const;

  // SHA-256 over names, shapes and values, buffers included.
  std::string digest() const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);
  // Loads tensors whose name and shape match; returns how many were loaded.
  std::size_t load_matching(const std::filesystem::path& path);
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<NamedParameter> entries_;
  std::vector<std::string> layers_;
  std::string prefix_;
};

enum class InitScheme { normal_002, kaiming_uniform, zeros };

struct Conv2d {
  Var weight;
  Var bias;
  Conv2dGeometry geometry;
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, geometry); }
};

struct ConvTranspose2d {
  Var weight;
  Var bias;
  int stride = 2;
  int padding = 1;
  int output_padding = 1;
  Var operator()(const Var& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding, output_padding);
  }
};

struct InstanceNorm2d {
  Var gamma;
  Var beta;
  Var operator()(const Var& x) const { return instance_norm(x, gamma, beta); }
};

struct BatchNorm2d {
  Var gamma;
  Var beta;
  Var running_mean;
  Var running_var;
  Var operator()(const Var& x, bool training) const;
};

struct Dense {
  Var weight;
  Var bias;
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

/// Layer factories; each registers one layer in the store.
class LayerFactory {
 public:
  LayerFactory(ParameterStore& store, std::mt19937_64& rng, InitScheme scheme)
      : store_(store), rng_(rng), scheme_(scheme) {}

  Conv2d conv(const std::string& name, int in, int out, int kernel, Conv2dGeometry geom,
              bool bias = true);
  ConvTranspose2d deconv(const std::string& name, int in, int out, int kernel, int stride,
                         int padding, int output_padding, bool bias = true);
  InstanceNorm2d instance_norm(const std::string& name, int channels);
  BatchNorm2d batch_norm(const std::string& name, int channels);
  Dense dense(const std::string& name, int in, int out);

 private:
  Tensor init_weight(std::vector<int> shape, int fan_in);

  ParameterStore& store_;
  std::mt19937_64& rng_;
  InitScheme scheme_;
};

}  // namespace jekyll::nn
