#include "jekyll/core/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "jekyll/core/error.hpp"

namespace jekyll {

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height <= 0 || width <= 0) throw ValidationError("image shape must be positive");
  if (channels != 1 && channels != 3) throw ValidationError("image must have 1 or 3 channels");
  if (values_.size() != static_cast<std::size_t>(height) * width * channels)
    throw ValidationError("image value count does not match its shape");
  for (float v : values_) {
    if (!(v >= -1.0f && v <= 1.0f)) throw ValidationError("image value outside [-1, 1]");
  }
}

ImageTensor::ImageTensor(int height, int width, int channels, float fill)
    : ImageTensor(height, width, channels,
                  std::vector<float>(static_cast<std::size_t>(std::max(height, 0)) *
                                         std::max(width, 0) * std::max(channels, 0),
                                     fill)) {}

ImageTensor ImageTensor::to_rgb() const {
  if (channels_ == 3) return *this;
  std::vector<float> v;
  v.reserve(values_.size() * 3);
  for (int c = 0; c < 3; ++c) v.insert(v.end(), values_.begin(), values_.end());
  return ImageTensor(height_, width_, 3, std::move(v));
}

ImageTensor ImageTensor::to_gray() const {
  if (channels_ == 1) return *this;
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  std::vector<float> v(plane);
  for (std::size_t i = 0; i < plane; ++i)
    v[i] = std::clamp((values_[i] + values_[plane + i] + values_[2 * plane + i]) / 3.0f, -1.0f, 1.0f);
  return ImageTensor(height_, width_, 1, std::move(v));
}

std::uint8_t denormalize_pixel(float v) {
  const float p = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0f, 255.0f));
}

nn::Tensor to_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw ValidationError("cannot batch zero images");
  const ImageTensor& first = images.front();
  nn::Tensor t({static_cast<int>(images.size()), first.channels(), first.height(), first.width()});
  std::size_t off = 0;
  for (const auto& img : images) {
    if (!img.same_shape(first)) throw ValidationError("batched images differ in shape");
    for (float v : img.values()) t[off++] = static_cast<nn::Real>(v);
  }
  return t;
}

nn::Tensor to_batch(const ImageTensor& image) { return to_batch(std::span(&image, 1)); }

std::vector<ImageTensor> from_batch(const nn::Tensor& batch) {
  if (batch.rank() != 4) throw ValidationError("expected NCHW batch, got " + batch.shape_string());
  const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t per = static_cast<std::size_t>(c) * h * w;
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    std::vector<float> v(per);
    for (std::size_t i = 0; i < per; ++i)
      v[i] = std::clamp(static_cast<float>(batch[s * per + i]), -1.0f, 1.0f);
    out.emplace_back(h, w, c, std::move(v));
  }
  return out;
}

ImageTensor load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  if (m.depth() != CV_8U) throw IoError("only 8-bit images are supported: " + path.string());
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  const int h = m.rows, w = m.cols, c = m.channels() == 1 ? 1 : 3;
  std::vector<float> v(static_cast<std::size_t>(h) * w * c);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (c == 1) {
        v[y * w + x] = normalize_pixel(row[x]);
      } else {
        // OpenCV stores BGR.
        for (int ch = 0; ch < 3; ++ch) v[ch * plane + y * w + x] = normalize_pixel(row[3 * x + 2 - ch]);
      }
    }
  }
  return ImageTensor(h, w, c, std::move(v));
}

void save_image(const ImageTensor& image, const std::filesystem::path& path) {
  const int h = image.height(), w = image.width(), c = image.channels();
  cv::Mat m(h, w, c == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < h; ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (c == 1) {
        row[x] = denormalize_pixel(image.at(0, y, x));
      } else {
        for (int ch = 0; ch < 3; ++ch) row[3 * x + 2 - ch] = denormalize_pixel(image.at(ch, y, x));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

ImageTensor resize_image(const ImageTensor& image, int resolution) {
  if (image.height() == resolution && image.width() == resolution) return image;
  const std::size_t plane = static_cast<std::size_t>(image.height()) * image.width();
  std::vector<float> out;
  for (int ch = 0; ch < image.channels(); ++ch) {
    cv::Mat src(image.height(), image.width(), CV_32FC1,
                const_cast<float*>(image.values().data() + ch * plane));
    cv::Mat dst;
    cv::resize(src, dst, cv::Size(resolution, resolution), 0, 0, cv::INTER_LINEAR);
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) out.push_back(std::clamp(dst.at<float>(y, x), -1.0f, 1.0f));
  }
  return ImageTensor(resolution, resolution, image.channels(), std::move(out));
}

std::uint64_t content_hash(const ImageTensor& image) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  mix(static_cast<std::uint64_t>(image.height()));
  mix(static_cast<std::uint64_t>(image.width()));
  mix(static_cast<std::uint64_t>(image.channels()));
  for (float v : image.values()) mix(denormalize_pixel(v));
  return h;
}

}  // namespace jekyll
