#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/translator/model.hpp"
#include "support/architecture.hpp"

using namespace jekyll;
using translator::DiscriminatorConfig;
using translator::GeneratorConfig;

namespace {

nn::Var zeros(int channels, int side) {
  nn::Tensor t({1, channels, side, side});
  t.fill(0.1f);
  return nn::Var(t);
}

void report(const std::vector<std::string>& problems) {
  for (const auto& p : problems) MESSAGE(p);
  CHECK(problems.empty());
}

}  // namespace

TEST_CASE("generator parameters follow the published table") {
  translator::Generator g(GeneratorConfig::reference(), 1);
  report(testing::parameter_mismatches(g.parameters(), testing::generator_table(), 3, "generator"));
}

TEST_CASE("generator layer shapes") {
  translator::Generator g(GeneratorConfig::reference(), 1);
  nn::NoGradGuard guard;
  translator::ShapeTrace trace;
  const auto out = g.forward(zeros(3, 256), &trace);
  report(testing::trace_mismatches(trace, testing::generator_table(), 256, "generator"));
  CHECK(out.shape() == std::vector<int>{1, 3, 256, 256});
}

TEST_CASE("discriminator at 256") {
  translator::PatchDiscriminator d(DiscriminatorConfig::reference(), 2);
  report(testing::parameter_mismatches(d.parameters(), testing::discriminator_table(), 3, "discriminator"));
  nn::NoGradGuard guard;
  translator::ShapeTrace trace;
  const auto out = d.forward(zeros(3, 256), &trace);
  report(testing::trace_mismatches(trace, testing::discriminator_table(), 256, "discriminator"));
  CHECK(out.shape() == std::vector<int>{1, 1, 32, 32});
}

TEST_CASE("discriminator geometry") {
  // Three stride-2 k4 p1 convolutions halve the side; the stride-1 pair keeps it.
  auto side_after = [](int n) {
    for (int i = 0; i < 3; ++i) n = (n + 2 - 4) / 2 + 1;
    return n;
  };
  CHECK(side_after(256) == 32);
  CHECK(side_after(64) == 8);
  CHECK(translator::PatchDiscriminator::output_size(256) == 32);
  CHECK(translator::PatchDiscriminator::output_size(64) == 8);
  // Receptive field grows backwards: r <- (r - 1) * stride + kernel.
  int r = 1;
  for (int stride : {1, 1, 2, 2, 2}) r = (r - 1) * stride + 4;
  CHECK(r == 70);
  CHECK(translator::PatchDiscriminator::receptive_field() == 70);

  translator::PatchDiscriminator d(DiscriminatorConfig::toy(1, 4), 3);
  nn::NoGradGuard guard;
  CHECK(d.forward(zeros(1, 64)).shape() == std::vector<int>{1, 1, 8, 8});
  CHECK_THROWS(d.forward(zeros(1, 60)));
}

TEST_CASE("densenet-121 feature extractor") {
  nn::ParameterStore store;
  classifiers::BackboneSpec spec;
  spec.name = "densenet121";
  const auto bb = classifiers::make_backbone(spec, store, 1);
  CHECK(store.parameter_count() == 6953856);
  CHECK(bb->feature_channels() == 1024);
  CHECK(store.has_layer(bb->tap_layer()));
}

TEST_CASE("mesonet at 256x256x3") {
  const auto net = defense::build_mesonet(256, 4);
  nn::NoGradGuard guard;
  const auto out = net->logits(zeros(3, 256), false);
  CHECK(out.shape() == std::vector<int>{1});
  const auto p = net->probabilities({ImageTensor(256, 256, 3, 0.2f)});
  CHECK(p.size() == 1);
  CHECK(p[0] > 0.0);
  CHECK(p[0] < 1.0);
}
