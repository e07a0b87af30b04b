#include "jekyll/translator/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/error.hpp"
#include "jekyll/core/rng.hpp"
#include "jekyll/nn/optim.hpp"

namespace jekyll::translator {

double learning_rate_at(int epoch, const ExperimentConfig& config) {
  if (epoch < config.epochs_constant || config.epochs_decay == 0) return config.learning_rate;
  const double remaining = config.epochs_constant + config.epochs_decay - epoch;
  return config.learning_rate * std::clamp(remaining / config.epochs_decay, 0.0, 1.0);
}

namespace {

nn::Var batch_of(const std::vector<ImageTensor>& pool, const std::vector<std::size_t>& order,
                 std::size_t& cursor, int batch, std::mt19937_64& rng) {
  std::vector<ImageTensor> picked;
  picked.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    if (cursor == order.size()) cursor = 0;
    picked.push_back(pool[order[cursor++]]);
  }
  (void)rng;
  return nn::Var(to_batch(picked));
}

nn::Var generator_adversarial(const DiscriminatorOutput& d, AdversarialConvention c) {
  nn::Var loss = generator_adversarial_loss(d.patch, c);
  if (d.score) loss = nn::add(loss, generator_adversarial_loss(d.score, c));
  return loss;
}

nn::Var discriminator_objective(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                                AdversarialConvention c) {
  nn::Var loss = adversarial_loss(real.patch, fake.patch, c);
  if (real.score) loss = nn::add(loss, adversarial_loss(real.score, fake.score, c));
  return loss;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b) {
  into.adversarial += b.adversarial;
  into.disease += b.disease;
  into.identity += b.identity;
  into.cycle += b.cycle;
  into.total += b.total;
}

void scale(LossBreakdown& b, double s) {
  b.adversarial *= s;
  b.disease *= s;
  b.identity *= s;
  b.cycle *= s;
  b.total *= s;
}

}  // namespace

TrainingHistory train_jekyll(TranslationModel& model, const std::vector<ImageTensor>& x_pool,
                             const std::vector<ImageTensor>& y_pool, const ExperimentConfig& config,
                             const GanTrainingOptions& options) {
  config.validate();
  model.set_weights(config.loss_weights);
  const LossWeights& w = model.weights();
  const TranslatorOptions& opts = model.options();
  auto* disease = model.disease_model();
  auto* identity = model.identity_model();
  if (w.disease > 0 && !disease) throw ValidationError("disease loss enabled without a classifier");
  if (w.identity > 0 && !identity)
    throw ValidationError("identity loss enabled without a classifier");

  TrainingHistory history;
  const int total_epochs = config.epochs_constant + config.epochs_decay;
  if (disease) history.disease_digest_before = disease->parameters().digest();
  if (identity) history.identity_digest_before = identity->parameters().digest();
  auto finish = [&] {
    if (disease) history.disease_digest_after = disease->parameters().digest();
    if (identity) history.identity_digest_after = identity->parameters().digest();
  };
  if (total_epochs == 0) {
    finish();
    return history;
  }
  if (x_pool.empty() || y_pool.empty()) throw ValidationError("both image pools must be non-empty");
  const int channels = model.generator_config().channels;
  for (const auto* pool : {&x_pool, &y_pool})
    for (const auto& img : *pool)
      if (img.channels() != channels || img.height() != model.resolution() ||
          img.width() != model.resolution())
        throw ValidationError("training image does not match the model's channels/resolution");

  if (disease) disease->freeze();
  if (identity) identity->freeze();

  nn::Adam adam_g(model.generator_parameters(),
                  {config.learning_rate, config.adam_beta1, config.adam_beta2, 1e-8});
  nn::Adam adam_d(model.discriminator_parameters(),
                  {config.learning_rate, config.adam_beta1, config.adam_beta2, 1e-8});
  const int pool_capacity = opts.use_image_pool ? opts.pool_size : 0;
  ImagePool pool_x(pool_capacity, mix_seed(config.seed, "pool_x"));
  ImagePool pool_y(pool_capacity, mix_seed(config.seed, "pool_y"));
  std::mt19937_64 rng(mix_seed(config.seed, "gan"));

  const int batch = config.batch_size;
  const int steps = options.steps_per_epoch > 0
                        ? options.steps_per_epoch
                        : static_cast<int>(std::max(x_pool.size(), y_pool.size()) / batch);
  std::vector<std::size_t> order_x(x_pool.size()), order_y(y_pool.size());
  std::iota(order_x.begin(), order_x.end(), 0);
  std::iota(order_y.begin(), order_y.end(), 0);
  std::size_t cursor_x = order_x.size(), cursor_y = order_y.size();

  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const double lr = learning_rate_at(epoch, config);
    adam_g.set_learning_rate(lr);
    adam_d.set_learning_rate(lr);
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    for (int step = 0; step < std::max(steps, 1); ++step) {
      if (cursor_x >= order_x.size()) {
        std::shuffle(order_x.begin(), order_x.end(), rng);
        cursor_x = 0;
      }
      if (cursor_y >= order_y.size()) {
        std::shuffle(order_y.begin(), order_y.end(), rng);
        cursor_y = 0;
      }
      const nn::Var x = batch_of(x_pool, order_x, cursor_x, batch, rng);
      const nn::Var y = batch_of(y_pool, order_y, cursor_y, batch, rng);

      // Generator update with the discriminators held fixed.
      model.set_discriminators_trainable(false);
      adam_g.zero_grad();
      const nn::Var fake_y = model.G()(x);
      const nn::Var fake_x = model.F()(y);
      const bool need_rec_x = w.cycle > 0 || w.identity > 0;
      const nn::Var rec_x = need_rec_x ? model.F()(fake_y) : nn::Var();
      const nn::Var rec_y = w.cycle > 0 ? model.G()(fake_x) : nn::Var();
      LossTerms terms;
      if (w.adversarial > 0)
        terms.adversarial =
            nn::add(generator_adversarial(model.discriminate_y(fake_y), opts.convention),
                    generator_adversarial(model.discriminate_x(fake_x), opts.convention));
      if (w.disease > 0) terms.disease = disease_loss(*disease, fake_y);
      if (w.identity > 0)
        terms.identity = identity_loss(*identity, x, fake_y, rec_x, opts.identity_variant);
      if (w.cycle > 0) terms.cycle = cycle_loss(x, rec_x, y, rec_y);
      LossBreakdown b;
      nn::Var total = total_loss(w, terms, &b);
      if (!std::isfinite(b.total))
        throw TrainingDiverged("generator loss became non-finite at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(step));
      if (total.requires_grad()) {
        total.backward();
        adam_g.step();
      }
      if (epoch == 0 && step == 0) history.first_step = b;
      accumulate(record.generator, b);

      // Discriminator update on real images and (pooled) detached fakes.
      model.set_discriminators_trainable(true);
      adam_d.zero_grad();
      const nn::Var pooled_y(pool_y.query(fake_y.value()));
      const nn::Var pooled_x(pool_x.query(fake_x.value()));
      nn::Var d_loss =
          nn::add(discriminator_objective(model.discriminate_y(y), model.discriminate_y(pooled_y),
                                          opts.convention),
                  discriminator_objective(model.discriminate_x(x), model.discriminate_x(pooled_x),
                                          opts.convention));
      const double d_value = d_loss.value()[0];
      if (!std::isfinite(d_value))
        throw TrainingDiverged("discriminator loss became non-finite at epoch " +
                               std::to_string(epoch));
      d_loss.backward();
      adam_d.step();
      record.discriminator += d_value;
    }
    scale(record.generator, 1.0 / std::max(steps, 1));
    record.discriminator /= std::max(steps, 1);
    history.epochs.push_back(record);
    model.set_epochs_completed(model.epochs_completed() + 1);
    spdlog::debug("epoch {} lr {:.2e} G {:.4f} (adv {:.4f} dis {:.4f} id {:.4f} cyc {:.4f}) D {:.4f}",
                  epoch, lr, record.generator.total, record.generator.adversarial,
                  record.generator.disease, record.generator.identity, record.generator.cycle,
                  record.discriminator);
    if (!options.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d", epoch);
      model.save(options.checkpoint_dir / name,
                 {{"loss_breakdown",
                   {{"adversarial", record.generator.adversarial},
                    {"disease", record.generator.disease},
                    {"identity", record.generator.identity},
                    {"cycle", record.generator.cycle},
                    {"total", record.generator.total},
                    {"discriminator", record.discriminator}}},
                  {"learning_rate", lr}});
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  finish();
  return history;
}

ImageTensor translate(const TranslationModel& model, const ImageTensor& image, Direction direction) {
  return translate(model, std::vector<ImageTensor>{image}, direction).front();
}

std::vector<ImageTensor> translate(const TranslationModel& model,
                                   const std::vector<ImageTensor>& images, Direction direction) {
  if (!model.trained()) spdlog::warn("translating with an untrained model");
  if (images.empty()) return {};
  nn::NoGradGuard no_grad;
  const Generator& gen = direction == Direction::x_to_y ? model.G() : model.F();
  std::vector<ImageTensor> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    const std::span<const ImageTensor> chunk(images.data() + begin, end - begin);
    for (auto& img : from_batch(gen(nn::Var(to_batch(chunk))).value())) out.push_back(std::move(img));
  }
  return out;
}

}  // namespace jekyll::translator
