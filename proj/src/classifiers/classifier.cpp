#include "jekyll/classifiers/classifier.hpp"

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "jekyll/core/error.hpp"
#include "jekyll/nn/optim.hpp"

namespace jekyll::classifiers {

namespace {

constexpr int kHiddenUnits = 256;
constexpr double kHeadDropout = 0.5;
constexpr int kInferenceBatch = 32;

nn::Var as_rgb(const nn::Var& x) {
  if (x.dim(1) == 3) return x;
  if (x.dim(1) == 1) return nn::repeat_channels(x, 3);
  throw ValidationError("classifier input must have 1 or 3 channels");
}

template <typename Fn>
void for_each_batch(std::span<const ImageTensor> images, Fn&& fn) {
  for (std::size_t begin = 0; begin < images.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(images.size(), begin + kInferenceBatch);
    fn(begin, nn::Var(to_batch(images.subspan(begin, end - begin))));
  }
}

}  // namespace

const char* to_string(ClassifierRole role) {
  switch (role) {
    case ClassifierRole::attack_disease: return "C_a^d";
    case ClassifierRole::evaluation_disease: return "C_e^d";
    case ClassifierRole::attack_identity: return "C_a^i";
    case ClassifierRole::evaluation_identity: return "C_e^i";
  }
  return "?";
}

ClassifierRole role_from_string(const std::string& s) {
  for (auto r : {ClassifierRole::attack_disease, ClassifierRole::evaluation_disease,
                 ClassifierRole::attack_identity, ClassifierRole::evaluation_identity}) {
    if (s == to_string(r)) return r;
  }
  throw ValidationError("unknown classifier role '" + s + "'");
}

bool is_disease_role(ClassifierRole role) {
  return role == ClassifierRole::attack_disease || role == ClassifierRole::evaluation_disease;
}

void TrainingRecipe::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (freeze == FreezePolicy::freeze_all_but_last_k && trainable_last_k < 1)
    throw ValidationError("trainable_last_k must be >= 1");
}

ClassifierHandle::ClassifierHandle(ClassifierRole role, std::vector<std::string> class_names,
                                   const BackboneSpec& backbone, std::uint64_t seed)
    : role_(role), class_names_(std::move(class_names)), spec_(backbone), seed_(seed) {
  if (is_disease_role(role) && class_names_.size() != 2)
    throw ValidationError("disease classifiers have exactly 2 classes");
  if (class_names_.size() < 2) throw ValidationError("a classifier needs at least 2 classes");
  if (std::set<std::string>(class_names_.begin(), class_names_.end()).size() != class_names_.size())
    throw ValidationError("class names must be unique");
  backbone_ = make_backbone(backbone, store_, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  nn::LayerFactory make(store_, rng, nn::InitScheme::kaiming_uniform);
  hidden_ = make.dense("head.dense256", backbone_->feature_channels(), kHiddenUnits);
  output_ = make.dense("head.classify", kHiddenUnits, class_count());
  if (!backbone.pretrained_weights.empty()) {
    if (store_.load_matching(backbone.pretrained_weights) == 0)
      throw IoError("no backbone tensors matched in " + backbone.pretrained_weights);
  }
}

int ClassifierHandle::class_index(const std::string& name) const {
  for (int i = 0; i < class_count(); ++i)
    if (class_names_[i] == name) return i;
  return -1;
}

void ClassifierHandle::mark_trained(double accuracy) {
  trained_ = true;
  accuracy_ = accuracy;
}

nn::Var ClassifierHandle::logits(const nn::Var& x, bool training,
                                 std::mt19937_64* dropout_rng) const {
  ++forward_calls_;
  BackboneOutput b = backbone_->forward(as_rgb(x), training, false);
  nn::Var h = hidden_(nn::global_avg_pool(b.final_maps));
  if (training) {
    if (!dropout_rng) throw std::logic_error("training-mode logits need a dropout RNG");
    h = nn::dropout(h, static_cast<nn::Real>(kHeadDropout), *dropout_rng, true);
  }
  return output_(h);
}

nn::Var ClassifierHandle::features(const nn::Var& x) const {
  ++forward_calls_;
  return backbone_->forward(as_rgb(x), false, true).tap;
}

nn::Var ClassifierHandle::final_maps(const nn::Var& x) const {
  return backbone_->forward(as_rgb(x), false, false).final_maps;
}

std::vector<std::vector<double>> ClassifierHandle::probabilities(
    std::span<const ImageTensor> images) const {
  nn::NoGradGuard no_grad;
  std::vector<std::vector<double>> out(images.size());
  for_each_batch(images, [&](std::size_t begin, const nn::Var& batch) {
    nn::Var p = nn::softmax(logits(batch, false));
    const int c = class_count();
    for (int s = 0; s < batch.dim(0); ++s) {
      out[begin + s].resize(static_cast<std::size_t>(c));
      for (int j = 0; j < c; ++j) out[begin + s][j] = p.value()[s * c + j];
    }
  });
  return out;
}

std::vector<double> ClassifierHandle::class_weights(int cls) const {
  if (cls < 0 || cls >= class_count()) throw ValidationError("class index out of range");
  const nn::Tensor& w1 = hidden_.weight.value();  // [256, K]
  const nn::Tensor& w2 = output_.weight.value();  // [C, 256]
  const int k = w1.dim(1), hidden = w1.dim(0);
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  for (int j = 0; j < hidden; ++j) {
    const double a = w2[static_cast<std::size_t>(cls) * hidden + j];
    for (int i = 0; i < k; ++i) out[i] += a * w1[static_cast<std::size_t>(j) * k + i];
  }
  return out;
}

void ClassifierHandle::save(const std::filesystem::path& dir, const std::string& config_hash) const {
  std::filesystem::create_directories(dir);
  store_.save(dir / "weights.bin");
  nlohmann::json meta = {{"role", to_string(role_)},
                         {"class_count", class_count()},
                         {"class_names", class_names_},
                         {"backbone", spec_.name},
                         {"backbone_width", spec_.width},
                         {"feature_tap_layer", feature_tap_layer()},
                         {"trained", trained_},
                         {"accuracy", accuracy_},
                         {"seed", seed_},
                         {"config_hash", config_hash}};
  std::ofstream os(dir / "meta.json");
  if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

std::unique_ptr<ClassifierHandle> ClassifierHandle::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw IoError("missing classifier metadata in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt classifier metadata in " + dir.string() + ": " + e.what());
  }
  BackboneSpec spec;
  spec.name = meta.at("backbone").get<std::string>();
  spec.width = meta.at("backbone_width").get<int>();
  auto handle = std::make_unique<ClassifierHandle>(
      role_from_string(meta.at("role").get<std::string>()),
      meta.at("class_names").get<std::vector<std::string>>(), spec,
      meta.at("seed").get<std::uint64_t>());
  handle->store_.load(dir / "weights.bin");
  handle->trained_ = meta.at("trained").get<bool>();
  handle->accuracy_ = meta.at("accuracy").get<double>();
  return handle;
}

std::unique_ptr<ClassifierHandle> build_classifier(ClassifierRole role,
                                                   std::vector<std::string> class_names,
                                                   const BackboneSpec& backbone, std::uint64_t seed) {
  return std::make_unique<ClassifierHandle>(role, std::move(class_names), backbone, seed);
}

namespace {

double dataset_loss(const ClassifierHandle& handle, const LabeledImages& data) {
  nn::NoGradGuard no_grad;
  double total = 0;
  const std::span<const ImageTensor> images(data.images);
  for_each_batch(images, [&](std::size_t begin, const nn::Var& batch) {
    const std::vector<int> labels(data.labels.begin() + static_cast<long>(begin),
                                  data.labels.begin() + static_cast<long>(begin) + batch.dim(0));
    total += nn::cross_entropy(handle.logits(batch, false), labels).value()[0] * batch.dim(0);
  });
  return total / static_cast<double>(data.images.size());
}

void check_labels(const ClassifierHandle& handle, const LabeledImages& data, const char* what) {
  if (data.images.size() != data.labels.size())
    throw ValidationError(std::string(what) + ": image and label counts differ");
  for (int l : data.labels)
    if (l < 0 || l >= handle.class_count())
      throw ValidationError(std::string(what) + ": label out of range for " + to_string(handle.role()));
}

}  // namespace

TrainingReport train_classifier(ClassifierHandle& handle, const LabeledImages& train,
                                const LabeledImages& validation, const TrainingRecipe& recipe,
                                std::uint64_t seed) {
  recipe.validate();
  check_labels(handle, train, "training set");
  check_labels(handle, validation, "validation set");
  if (train.images.empty()) throw ValidationError("empty training set");
  if (validation.images.empty()) throw ValidationError("empty validation set");
  std::vector<int> counts(static_cast<std::size_t>(handle.class_count()), 0);
  for (int l : train.labels) ++counts[l];
  for (int c = 0; c < handle.class_count(); ++c)
    if (counts[c] == 0)
      throw ValidationError("class '" + handle.class_names()[c] + "' absent from training data");

  if (recipe.freeze == FreezePolicy::freeze_all_but_last_k)
    handle.parameters().freeze_all_but_last(recipe.trainable_last_k);
  else
    handle.parameters().set_trainable(true);

  TrainingReport report;
  report.initial_loss = dataset_loss(handle, train);
  nn::Adam adam(handle.parameters().trainable(),
                {recipe.learning_rate, recipe.beta1, recipe.beta2, 1e-8});
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(train.images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += recipe.batch_size) {
      const std::size_t end = std::min(order.size(), begin + recipe.batch_size);
      std::vector<ImageTensor> batch;
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(train.images[order[i]]);
        labels.push_back(train.labels[order[i]]);
      }
      adam.zero_grad();
      nn::Var loss = nn::cross_entropy(handle.logits(nn::Var(to_batch(batch)), true, &rng), labels);
      epoch_loss += loss.value()[0] * static_cast<double>(labels.size());
      loss.backward();
      adam.step();
    }
    report.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  report.final_loss = dataset_loss(handle, train);
  report.accuracy = evaluate_accuracy(handle, validation);
  handle.mark_trained(report.accuracy);
  return report;
}

double evaluate_accuracy(const ClassifierHandle& handle, const LabeledImages& data) {
  if (data.images.empty()) throw ValidationError("cannot evaluate on an empty set");
  const auto probs = handle.probabilities(data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto best = std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin();
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

namespace {

void require_role(const ClassifierHandle& handle, bool disease, const char* op) {
  if (is_disease_role(handle.role()) != disease)
    throw ValidationError(std::string(op) + ": wrong classifier role " + to_string(handle.role()));
  if (!handle.trained()) throw ValidationError(std::string(op) + ": classifier is untrained");
}

}  // namespace

double predict_disease(const ClassifierHandle& handle, const ImageTensor& image) {
  return predict_disease(handle, std::span(&image, 1)).front();
}

std::vector<double> predict_disease(const ClassifierHandle& handle,
                                    std::span<const ImageTensor> images) {
  require_role(handle, true, "predict_disease");
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& p : handle.probabilities(images)) out.push_back(p[kDiseaseClass]);
  return out;
}

IdentityPrediction predict_identity(const ClassifierHandle& handle, const ImageTensor& image) {
  return predict_identity(handle, std::span(&image, 1)).front();
}

std::vector<IdentityPrediction> predict_identity(const ClassifierHandle& handle,
                                                 std::span<const ImageTensor> images) {
  require_role(handle, false, "predict_identity");
  std::vector<IdentityPrediction> out;
  out.reserve(images.size());
  for (const auto& p : handle.probabilities(images)) {
    const auto best = std::max_element(p.begin(), p.end()) - p.begin();
    out.push_back({handle.class_names()[static_cast<std::size_t>(best)], p[best]});
  }
  return out;
}

std::vector<float> extract_identity_features(const ClassifierHandle& handle,
                                             const ImageTensor& image) {
  if (handle.feature_tap_layer().empty() ||
      !handle.parameters().has_layer(handle.feature_tap_layer()))
    throw ValidationError("feature tap layer is not bound");
  nn::NoGradGuard no_grad;
  nn::Var f = handle.features(nn::Var(to_batch(image)));
  return std::vector<float>(f.value().values().begin(), f.value().values().end());
}

std::vector<float> cam_from_maps(const nn::Tensor& maps, std::span<const double> weights,
                                 int out_height, int out_width) {
  if (maps.rank() != 3 || static_cast<std::size_t>(maps.dim(0)) != weights.size())
    throw ValidationError("CAM maps/weights mismatch");
  const int k = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  cv::Mat cam(h, w, CV_64FC1, cv::Scalar(0));
  for (int c = 0; c < k; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        cam.at<double>(y, x) += weights[c] * maps[(static_cast<std::size_t>(c) * h + y) * w + x];
  double lo, hi;
  cv::minMaxLoc(cam, &lo, &hi);
  const double range = hi - lo;
  if (range <= 1e-12 * std::max(1.0, std::abs(hi))) {
    cam.setTo(0.0);
  } else {
    cam = (cam - lo) / range;
  }
  cv::Mat up;
  cv::resize(cam, up, cv::Size(out_width, out_height), 0, 0, cv::INTER_LINEAR);
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width);
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x)
      out[static_cast<std::size_t>(y) * out_width + x] =
          static_cast<float>(std::clamp(up.at<double>(y, x), 0.0, 1.0));
  return out;
}

ImageTensor class_activation_map(const ClassifierHandle& handle, const ImageTensor& image,
                                 int cls) {
  nn::NoGradGuard no_grad;
  nn::Var maps = handle.final_maps(nn::Var(to_batch(image)));
  const auto& s = maps.shape();
  const nn::Tensor first = maps.value().reshaped({s[1], s[2], s[3]});
  const auto weights = handle.class_weights(cls);
  return ImageTensor(image.height(), image.width(), 1,
                     cam_from_maps(first, weights, image.height(), image.width()));
}

}  // namespace jekyll::classifiers
