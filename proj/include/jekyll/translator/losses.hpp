#pragma once

#include "jekyll/core/types.hpp"
#include "jekyll/nn/ops.hpp"

namespace jekyll::classifiers {
class ClassifierHandle;
}

namespace jekyll::translator {

// Least-squares target assignment. as_written reproduces the printed objective
// (real -> 0, fake -> 1); standard_lsgan uses real -> 1, fake -> 0.
enum class AdversarialConvention { standard_lsgan, as_written };
const char* to_string(AdversarialConvention c);
AdversarialConvention adversarial_convention_from_string(const std::string& s);

// Second perceptual term: as_printed compares E(F(G(x))) with E(G(x));
// against_input compares it with E(x).
enum class IdentityVariant { as_printed, against_input };
const char* to_string(IdentityVariant v);
IdentityVariant identity_variant_from_string(const std::string& s);

inline constexpr double kProbabilityClamp = 1e-7;

// Discriminator objective over score maps, averaged over patches and batch.
nn::Var adversarial_loss(const nn::Var& real_scores, const nn::Var& fake_scores,
                         AdversarialConvention convention);
// Generator objective: pull fake scores to the convention's real target.
nn::Var generator_adversarial_loss(const nn::Var& fake_scores, AdversarialConvention convention);

// mean(-log S(G(x) | target)), probabilities clamped to [1e-7, 1 - 1e-7].
nn::Var disease_loss(const classifiers::ClassifierHandle& disease_model, const nn::Var& translated);
nn::Var disease_loss_from_probabilities(const nn::Var& target_probabilities);

// mean|F(G(x)) - x| + mean|G(F(y)) - y|.
nn::Var cycle_loss(const nn::Var& x, const nn::Var& fgx, const nn::Var& y, const nn::Var& gfy);

// Feature-space L1 at the identity model's tap.
nn::Var identity_loss(const classifiers::ClassifierHandle& identity_model, const nn::Var& x,
                      const nn::Var& gx, const nn::Var& fgx,
                      IdentityVariant variant = IdentityVariant::as_printed);
nn::Var identity_loss_from_features(const nn::Var& ex, const nn::Var& egx, const nn::Var& efgx,
                                    IdentityVariant variant = IdentityVariant::as_printed);

struct LossBreakdown {
  double adversarial = 0.0;
  double disease = 0.0;
  double identity = 0.0;
  double cycle = 0.0;
  double total = 0.0;
};

struct LossTerms {
  nn::Var adversarial;  // both directions already summed
  nn::Var disease;
  nn::Var identity;
  nn::Var cycle;
};

// Weighted sum; terms whose weight is zero may be left empty.
nn::Var total_loss(const LossWeights& weights, const LossTerms& terms, LossBreakdown* breakdown);

}  // namespace jekyll::translator
