#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jekyll/core/image.hpp"
#include "jekyll/core/types.hpp"
#include "jekyll/translator/losses.hpp"
#include "jekyll/translator/networks.hpp"

namespace jekyll::classifiers {
class ClassifierHandle;
}

namespace jekyll::translator {

enum class Direction { x_to_y, y_to_x };
Direction direction_from_string(const std::string& s);  // "xy" | "yx"

struct TranslatorOptions {
  AdversarialConvention convention = AdversarialConvention::standard_lsgan;
  IdentityVariant identity_variant = IdentityVariant::as_printed;
  bool use_image_pool = true;
  int pool_size = 50;
};

/// History buffer of generated images for discriminator updates. Once full,
/// each query returns a stored image half of the time and swaps in the new one.
class ImagePool {
 public:
  ImagePool(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}
  nn::Tensor query(const nn::Tensor& fakes);
  std::size_t size() const { return stored_.size(); }

 private:
  int capacity_;
  std::mt19937_64 rng_;
  std::vector<nn::Tensor> stored_;  // each [1, C, H, W]
};

struct DiscriminatorOutput {
  nn::Var patch;  // [N, 1, h, w]
  nn::Var score;  // [N, 1]; empty unless a global head is attached
};

/// Generators G: X -> Y and F: Y -> X with discriminators D_X and D_Y.
/// The classifiers guiding training are shared, frozen and not owned here.
class TranslationModel {
 public:
  // resolution: square working size of the images; fixes the patch-map size.
  TranslationModel(const GeneratorConfig& generator, const DiscriminatorConfig& discriminator,
                   int resolution, const LossWeights& weights, std::uint64_t seed,
                   TranslatorOptions options = {});

  Generator& G() { return *g_; }
  Generator& F() { return *f_; }
  const Generator& G() const { return *g_; }
  const Generator& F() const { return *f_; }
  PatchDiscriminator& DX() { return *dx_; }
  PatchDiscriminator& DY() { return *dy_; }
  const PatchDiscriminator& DX() const { return *dx_; }
  const PatchDiscriminator& DY() const { return *dy_; }

  const GeneratorConfig& generator_config() const { return gcfg_; }
  const DiscriminatorConfig& discriminator_config() const { return dcfg_; }
  int resolution() const { return resolution_; }
  const LossWeights& weights() const { return weights_; }
  void set_weights(const LossWeights& w);
  const TranslatorOptions& options() const { return options_; }
  std::uint64_t seed() const { return seed_; }

  void attach_classifiers(std::shared_ptr<classifiers::ClassifierHandle> disease,
                          std::shared_ptr<classifiers::ClassifierHandle> identity);
  classifiers::ClassifierHandle* disease_model() const { return disease_.get(); }
  classifiers::ClassifierHandle* identity_model() const { return identity_.get(); }

  bool repurposed() const { return static_cast<bool>(head_x_); }
  // Patch map plus, for the repurposed variant, the whole-image score.
  DiscriminatorOutput discriminate_x(const nn::Var& images) const;
  DiscriminatorOutput discriminate_y(const nn::Var& images) const;
  GlobalDiscriminatorHead* head_x() { return head_x_.get(); }
  GlobalDiscriminatorHead* head_y() { return head_y_.get(); }

  int epochs_completed() const { return epochs_completed_; }
  void set_epochs_completed(int e) { epochs_completed_ = e; }
  bool trained() const { return epochs_completed_ > 0; }

  std::vector<nn::Var> generator_parameters() const;
  std::vector<nn::Var> discriminator_parameters() const;
  void set_discriminators_trainable(bool on);

  // Weight blobs per network plus meta.json (configs, weights, flags, seed, extras).
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  // SHA-256 over every network's weights.
  std::string digest() const;
  static std::unique_ptr<TranslationModel> load(const std::filesystem::path& dir);

 private:
  friend void attach_global_discriminator(TranslationModel& model, std::uint64_t seed);

  GeneratorConfig gcfg_;
  DiscriminatorConfig dcfg_;
  LossWeights weights_;
  std::uint64_t seed_;
  TranslatorOptions options_;
  std::unique_ptr<Generator> g_, f_;
  std::unique_ptr<PatchDiscriminator> dx_, dy_;
  std::unique_ptr<GlobalDiscriminatorHead> head_x_, head_y_;
  std::shared_ptr<classifiers::ClassifierHandle> disease_, identity_;
  int resolution_;
  int epochs_completed_ = 0;
};

// Adds a single dense scalar head over each discriminator's patch map (the
// repurposed variant). Idempotent.
void attach_global_discriminator(TranslationModel& model, std::uint64_t seed);

}  // namespace jekyll::translator
