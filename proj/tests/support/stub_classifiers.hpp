#pragma once

#include <memory>
#include <string>
#include <vector>

#include "jekyll/classifiers/classifier.hpp"

namespace jekyll::testing {

// A trained-looking classifier whose output ignores the image: zero head
// weights and the given logits as biases.
inline std::unique_ptr<classifiers::ClassifierHandle> constant_classifier(
    classifiers::ClassifierRole role, std::vector<std::string> names, const std::vector<float>& logits) {
  classifiers::BackboneSpec spec;
  spec.width = 4;
  auto h = classifiers::build_classifier(role, std::move(names), spec, 99);
  auto& out = h->output_layer();
  out.weight.mutable_value().fill(0);
  for (std::size_t i = 0; i < logits.size(); ++i) out.bias.mutable_value()[i] = logits[i];
  h->mark_trained(1.0);
  return h;
}

}  // namespace jekyll::testing
