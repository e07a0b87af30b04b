#include "jekyll/translator/losses.hpp"

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/error.hpp"

namespace jekyll::translator {

const char* to_string(AdversarialConvention c) {
  return c == AdversarialConvention::as_written ? "as_written" : "standard_lsgan";
}

AdversarialConvention adversarial_convention_from_string(const std::string& s) {
  if (s == "as_written") return AdversarialConvention::as_written;
  if (s == "standard_lsgan") return AdversarialConvention::standard_lsgan;
  throw ValidationError("unknown adversarial convention '" + s + "'");
}

const char* to_string(IdentityVariant v) {
  return v == IdentityVariant::against_input ? "against_input" : "as_printed";
}

IdentityVariant identity_variant_from_string(const std::string& s) {
  if (s == "as_printed") return IdentityVariant::as_printed;
  if (s == "against_input") return IdentityVariant::against_input;
  throw ValidationError("unknown identity variant '" + s + "'");
}

namespace {

void require_batch(const nn::Var& v, const char* what) {
  if (!v || v.value().empty() || v.dim(0) == 0)
    throw ValidationError(std::string(what) + ": empty batch");
}

nn::Real real_target(AdversarialConvention c) {
  return c == AdversarialConvention::as_written ? nn::Real(0) : nn::Real(1);
}

}  // namespace

nn::Var adversarial_loss(const nn::Var& real_scores, const nn::Var& fake_scores,
                         AdversarialConvention convention) {
  require_batch(real_scores, "adversarial_loss");
  require_batch(fake_scores, "adversarial_loss");
  const nn::Real r = real_target(convention);
  return nn::add(nn::squared_error_to(real_scores, r),
                 nn::squared_error_to(fake_scores, nn::Real(1) - r));
}

nn::Var generator_adversarial_loss(const nn::Var& fake_scores, AdversarialConvention convention) {
  require_batch(fake_scores, "generator_adversarial_loss");
  return nn::squared_error_to(fake_scores, real_target(convention));
}

nn::Var disease_loss_from_probabilities(const nn::Var& target_probabilities) {
  require_batch(target_probabilities, "disease_loss");
  return nn::mean_neg_log(target_probabilities, nn::Real(kProbabilityClamp));
}

nn::Var disease_loss(const classifiers::ClassifierHandle& disease_model, const nn::Var& translated) {
  if (!classifiers::is_disease_role(disease_model.role()))
    throw ValidationError("disease_loss needs a disease classifier");
  require_batch(translated, "disease_loss");
  const nn::Var p = nn::softmax(disease_model.logits(translated, false));
  return disease_loss_from_probabilities(nn::select_column(p, classifiers::kDiseaseClass));
}

nn::Var cycle_loss(const nn::Var& x, const nn::Var& fgx, const nn::Var& y, const nn::Var& gfy) {
  if (x.shape() != fgx.shape() || y.shape() != gfy.shape())
    throw ValidationError("cycle_loss: shape mismatch");
  return nn::add(nn::l1_mean(fgx, x), nn::l1_mean(gfy, y));
}

nn::Var identity_loss_from_features(const nn::Var& ex, const nn::Var& egx, const nn::Var& efgx,
                                    IdentityVariant variant) {
  if (ex.shape() != egx.shape() || ex.shape() != efgx.shape())
    throw ValidationError("identity_loss: feature shape mismatch");
  const nn::Var& anchor = variant == IdentityVariant::as_printed ? egx : ex;
  return nn::add(nn::l1_mean(ex, egx), nn::l1_mean(efgx, anchor));
}

nn::Var identity_loss(const classifiers::ClassifierHandle& identity_model, const nn::Var& x,
                      const nn::Var& gx, const nn::Var& fgx, IdentityVariant variant) {
  if (identity_model.feature_tap_layer().empty())
    throw ValidationError("identity_loss: identity model has no feature tap");
  if (x.shape() != gx.shape() || x.shape() != fgx.shape())
    throw ValidationError("identity_loss: shape mismatch");
  return identity_loss_from_features(identity_model.features(x), identity_model.features(gx),
                                     identity_model.features(fgx), variant);
}

nn::Var total_loss(const LossWeights& weights, const LossTerms& terms, LossBreakdown* breakdown) {
  weights.validate();
  std::vector<nn::Var> parts;
  std::vector<nn::Real> w;
  LossBreakdown b;
  auto take = [&](const nn::Var& term, double weight, double& slot) {
    if (weight == 0.0) return;
    if (!term) throw ValidationError("total_loss: missing term with nonzero weight");
    slot = term.value()[0];
    parts.push_back(term);
    w.push_back(static_cast<nn::Real>(weight));
  };
  take(terms.adversarial, weights.adversarial, b.adversarial);
  take(terms.disease, weights.disease, b.disease);
  take(terms.identity, weights.identity, b.identity);
  take(terms.cycle, weights.cycle, b.cycle);
  nn::Var total = parts.empty() ? nn::Var(nn::Tensor({1}, nn::Real(0))) : nn::weighted_sum(parts, w);
  b.total = total.value()[0];
  if (breakdown) *breakdown = b;
  return total;
}

}  // namespace jekyll::translator
