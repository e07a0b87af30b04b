#pragma once

#include <string>
#include <vector>

#include "jekyll/nn/var.hpp"
#include "jekyll/translator/networks.hpp"

namespace jekyll::testing {

struct LayerRow {
  std::string type;
  int channels;
  int kernel;  // 0 for layers without a filter
  int stride;
  int side;    // output side at 256x256 input
};

// The published generator and discriminator tables, top to bottom.
inline std::vector<LayerRow> generator_table() {
  std::vector<LayerRow> rows{{"padding", 3, 0, 0, 262},
                             {"conv2d", 64, 7, 1, 256},
                             {"conv2d", 128, 3, 2, 128},
                             {"conv2d", 256, 3, 2, 64}};
  for (int i = 0; i < 9; ++i) rows.push_back({"residual block", 256, 0, 0, 64});
  rows.push_back({"deconv2d", 128, 3, 2, 128});
  rows.push_back({"deconv2d", 64, 3, 2, 256});
  rows.push_back({"padding", 64, 0, 0, 262});
  rows.push_back({"conv2d", 3, 7, 1, 256});
  return rows;
}

inline std::vector<LayerRow> discriminator_table() {
  return {{"conv2d", 64, 4, 2, 128},
          {"conv2d", 128, 4, 2, 64},
          {"conv2d", 256, 4, 2, 32},
          {"conv2d", 512, 4, 1, 32},
          {"conv2d", 1, 4, 1, 32}};
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Filter-bearing parameters in registration order, checked against the tables
// (weights [out, in, k, k]; transposed [in, out, k, k]).
inline std::vector<std::string> parameter_mismatches(const nn::ParameterStore& store,
                                                     const std::vector<LayerRow>& table, int in_channels,
                                                     const std::string& what) {
  std::vector<std::vector<int>> expected;
  int in = in_channels;
  for (const auto& row : table) {
    if (row.type == "residual block") {
      expected.push_back({256, 256, 3, 3});
      expected.push_back({256, 256, 3, 3});
      in = 256;
    } else if (row.type == "conv2d") {
      expected.push_back({row.channels, in, row.kernel, row.kernel});
      in = row.channels;
    } else if (row.type == "deconv2d") {
      expected.push_back({in, row.channels, row.kernel, row.kernel});
      in = row.channels;
    }
  }
  std::vector<std::vector<int>> actual;
  for (const auto& e : store.entries())
    if (e.var.shape().size() == 4) actual.push_back(e.var.shape());
  std::vector<std::string> out;
  if (actual.size() != expected.size())
    out.push_back(what + ": " + std::to_string(actual.size()) + " filter tensors, table has " +
                  std::to_string(expected.size()));
  for (std::size_t i = 0; i < std::min(actual.size(), expected.size()); ++i)
    if (actual[i] != expected[i])
      out.push_back(what + " filter " + std::to_string(i) + ": " + shape_str(actual[i]) + " vs " +
                    shape_str(expected[i]));
  return out;
}

// Layer output shapes [C, H, W] at the given input side, scaled from the 256 table.
inline std::vector<std::string> trace_mismatches(const translator::ShapeTrace& trace,
                                                 const std::vector<LayerRow>& table, int side,
                                                 const std::string& what) {
  std::vector<std::string> out;
  if (trace.size() != table.size()) {
    out.push_back(what + ": " + std::to_string(trace.size()) + " traced layers, table has " +
                  std::to_string(table.size()));
    return out;
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& row = table[i];
    const int s = row.type == "padding" ? side + 6 : row.side * side / 256;
    const std::vector<int> want{row.channels, s, s};
    if (trace[i].first != row.type || trace[i].second != want)
      out.push_back(what + " layer " + std::to_string(i) + ": " + trace[i].first + " " +
                    shape_str(trace[i].second) + " vs " + row.type + " " + shape_str(want));
  }
  return out;
}

}  // namespace jekyll::testing
