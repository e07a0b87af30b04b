#include "jekyll/translator/model.hpp"

#include <fstream>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/error.hpp"
#include "jekyll/core/hash.hpp"
#include "jekyll/core/rng.hpp"

namespace jekyll::translator {

using nlohmann::json;

Direction direction_from_string(const std::string& s) {
  if (s == "xy") return Direction::x_to_y;
  if (s == "yx") return Direction::y_to_x;
  throw ValidationError("direction must be 'xy' or 'yx', got '" + s + "'");
}

nn::Tensor ImagePool::query(const nn::Tensor& fakes) {
  if (capacity_ <= 0) return fakes;
  const int n = fakes.dim(0);
  const std::vector<int> one{1, fakes.dim(1), fakes.dim(2), fakes.dim(3)};
  const std::size_t per = fakes.size() / static_cast<std::size_t>(n);
  nn::Tensor out(fakes.shape());
  for (int i = 0; i < n; ++i) {
    nn::Tensor img(one);
    std::copy_n(fakes.data() + i * per, per, img.data());
    const nn::Tensor* pick = &img;
    nn::Tensor swapped;
    if (static_cast<int>(stored_.size()) < capacity_) {
      stored_.push_back(img);
    } else if (std::bernoulli_distribution(0.5)(rng_)) {
      const auto k = std::uniform_int_distribution<std::size_t>(0, stored_.size() - 1)(rng_);
      swapped = stored_[k];
      stored_[k] = img;
      pick = &swapped;
    }
    std::copy_n(pick->data(), per, out.data() + i * per);
  }
  return out;
}

TranslationModel::TranslationModel(const GeneratorConfig& generator,
                                   const DiscriminatorConfig& discriminator, int resolution,
                                   const LossWeights& weights, std::uint64_t seed,
                                   TranslatorOptions options)
    : gcfg_(generator),
      dcfg_(discriminator),
      weights_(weights),
      seed_(seed),
      options_(options),
      resolution_(resolution) {
  weights.validate();
  if (generator.channels != discriminator.channels)
    throw ValidationError("generator and discriminator channel counts differ");
  if (resolution < 16 || resolution % 8 != 0)
    throw ValidationError("working resolution must be a multiple of 8 and at least 16");
  g_ = std::make_unique<Generator>(generator, mix_seed(seed, "G"));
  f_ = std::make_unique<Generator>(generator, mix_seed(seed, "F"));
  dx_ = std::make_unique<PatchDiscriminator>(discriminator, mix_seed(seed, "D_X"));
  dy_ = std::make_unique<PatchDiscriminator>(discriminator, mix_seed(seed, "D_Y"));
}

void TranslationModel::set_weights(const LossWeights& w) {
  w.validate();
  weights_ = w;
}

void TranslationModel::attach_classifiers(std::shared_ptr<classifiers::ClassifierHandle> disease,
                                          std::shared_ptr<classifiers::ClassifierHandle> identity) {
  using classifiers::ClassifierRole;
  if (disease && disease->role() != ClassifierRole::attack_disease)
    throw ValidationError("the translator is guided by the attack disease classifier");
  if (identity && identity->role() != ClassifierRole::attack_identity)
    throw ValidationError("the translator is guided by the attack identity classifier");
  disease_ = std::move(disease);
  identity_ = std::move(identity);
}

DiscriminatorOutput TranslationModel::discriminate_x(const nn::Var& images) const {
  DiscriminatorOutput out{dx_->forward(images), {}};
  if (head_x_) out.score = head_x_->forward(out.patch);
  return out;
}

DiscriminatorOutput TranslationModel::discriminate_y(const nn::Var& images) const {
  DiscriminatorOutput out{dy_->forward(images), {}};
  if (head_y_) out.score = head_y_->forward(out.patch);
  return out;
}

std::vector<nn::Var> TranslationModel::generator_parameters() const {
  auto out = g_->parameters().all_parameters();
  for (auto& v : f_->parameters().all_parameters()) out.push_back(v);
  return out;
}

std::vector<nn::Var> TranslationModel::discriminator_parameters() const {
  auto out = dx_->parameters().all_parameters();
  for (auto& v : dy_->parameters().all_parameters()) out.push_back(v);
  if (head_x_) {
    for (auto& v : head_x_->parameters().all_parameters()) out.push_back(v);
    for (auto& v : head_y_->parameters().all_parameters()) out.push_back(v);
  }
  return out;
}

void TranslationModel::set_discriminators_trainable(bool on) {
  dx_->parameters().set_trainable(on);
  dy_->parameters().set_trainable(on);
  if (head_x_) {
    head_x_->parameters().set_trainable(on);
    head_y_->parameters().set_trainable(on);
  }
}

std::string TranslationModel::digest() const {
  std::string all = g_->parameters().digest() + f_->parameters().digest() +
                    dx_->parameters().digest() + dy_->parameters().digest();
  if (head_x_) all += head_x_->parameters().digest() + head_y_->parameters().digest();
  return sha256_hex(all);
}

void TranslationModel::save(const std::filesystem::path& dir, const json& extra) const {
  std::filesystem::create_directories(dir);
  g_->parameters().save(dir / "G.bin");
  f_->parameters().save(dir / "F.bin");
  dx_->parameters().save(dir / "D_X.bin");
  dy_->parameters().save(dir / "D_Y.bin");
  if (head_x_) {
    head_x_->parameters().save(dir / "H_X.bin");
    head_y_->parameters().save(dir / "H_Y.bin");
  }
  json meta{
      {"generator",
       {{"channels", gcfg_.channels},
        {"base_width", gcfg_.base_width},
        {"residual_blocks", gcfg_.residual_blocks}}},
      {"discriminator", {{"channels", dcfg_.channels}, {"base_width", dcfg_.base_width}}},
      {"resolution", resolution_},
      {"lambda",
       {{"adversarial", weights_.adversarial},
        {"disease", weights_.disease},
        {"identity", weights_.identity},
        {"cycle", weights_.cycle}}},
      {"convention", to_string(options_.convention)},
      {"identity_variant", to_string(options_.identity_variant)},
      {"image_pool", options_.use_image_pool ? options_.pool_size : 0},
      {"repurposed", repurposed()},
      {"seed", seed_},
      {"epoch", epochs_completed_},
      {"digest", digest()}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  std::ofstream os(dir / "meta.json");
  if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

std::unique_ptr<TranslationModel> TranslationModel::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw IoError("no translation model at " + dir.string());
  json meta;
  try {
    meta = json::parse(is);
    const auto& g = meta.at("generator");
    const auto& d = meta.at("discriminator");
    const auto& l = meta.at("lambda");
    TranslatorOptions opts;
    opts.convention = adversarial_convention_from_string(meta.at("convention").get<std::string>());
    opts.identity_variant =
        identity_variant_from_string(meta.at("identity_variant").get<std::string>());
    opts.pool_size = meta.at("image_pool").get<int>();
    opts.use_image_pool = opts.pool_size > 0;
    auto model = std::make_unique<TranslationModel>(
        GeneratorConfig{g.at("channels").get<int>(), g.at("base_width").get<int>(),
                        g.at("residual_blocks").get<int>()},
        DiscriminatorConfig{d.at("channels").get<int>(), d.at("base_width").get<int>()},
        meta.at("resolution").get<int>(),
        LossWeights{l.at("adversarial").get<double>(), l.at("disease").get<double>(),
                    l.at("identity").get<double>(), l.at("cycle").get<double>()},
        meta.at("seed").get<std::uint64_t>(), opts);
    model->g_->parameters().load(dir / "G.bin");
    model->f_->parameters().load(dir / "F.bin");
    model->dx_->parameters().load(dir / "D_X.bin");
    model->dy_->parameters().load(dir / "D_Y.bin");
    if (meta.at("repurposed").get<bool>()) {
      attach_global_discriminator(*model, 0);
      model->head_x_->parameters().load(dir / "H_X.bin");
      model->head_y_->parameters().load(dir / "H_Y.bin");
    }
    model->epochs_completed_ = meta.at("epoch").get<int>();
    return model;
  } catch (const json::exception& e) {
    throw IoError("corrupt translation model metadata in " + dir.string() + ": " + e.what());
  }
}

void attach_global_discriminator(TranslationModel& model, std::uint64_t seed) {
  if (model.head_x_) return;
  const int side = PatchDiscriminator::output_size(model.resolution());
  model.head_x_ = std::make_unique<GlobalDiscriminatorHead>(side * side, mix_seed(seed, "H_X"));
  model.head_y_ = std::make_unique<GlobalDiscriminatorHead>(side * side, mix_seed(seed, "H_Y"));
}

}  // namespace jekyll::translator
