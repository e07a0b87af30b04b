#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "jekyll/nn/tensor.hpp"

namespace jekyll {

/// Planar (CHW) image with values normalized to [-1, 1]; 1 or 3 channels.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, std::vector<float> values);
  // Constant-valued image.
  ImageTensor(int height, int width, int channels, float fill);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<const float> values() const { return values_; }
  float at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  // Replicates a grayscale image to three channels; RGB input is returned unchanged.
  ImageTensor to_rgb() const;
  // Channel mean; grayscale input is returned unchanged.
  ImageTensor to_gray() const;

  bool operator==(const ImageTensor& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> values_;
};

// Pixel p in [0, 255] maps to 2p/255 - 1.
inline float normalize_pixel(std::uint8_t p) { return 2.0f * static_cast<float>(p) / 255.0f - 1.0f; }
std::uint8_t denormalize_pixel(float v);

// Batches images into an NCHW tensor; all images must share one shape.
nn::Tensor to_batch(std::span<const ImageTensor> images);
nn::Tensor to_batch(const ImageTensor& image);
// Splits an NCHW tensor into images, clamping to [-1, 1].
std::vector<ImageTensor> from_batch(const nn::Tensor& batch);

// 8-bit PNG/JPEG I/O. Grayscale files load as 1 channel, colour files as RGB.
ImageTensor load_image(const std::filesystem::path& path);
void save_image(const ImageTensor& image, const std::filesystem::path& path);
// Nearest-resolution resampling (bilinear) to a square target.
ImageTensor resize_image(const ImageTensor& image, int resolution);

// FNV-1a over the 8-bit quantized pixels; stable identifier for generated images.
std::uint64_t content_hash(const ImageTensor& image);

}  // namespace jekyll
