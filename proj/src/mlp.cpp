// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "prefedit/mlp.hpp"

#include <cmath>

#include "prefedit/error.hpp"

namespace prefedit {

std::size_t Architecture::num_params() const {
  std::size_t n = 0;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    n += h * in + h;
    in = h;
  }
  return n + output_dim * in + output_dim;
}

Json to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim}, {"hidden", a.hidden}, {"output_dim", a.output_dim}};
}

Architecture architecture_from_json(const Json& j) {
  try {
    Architecture a;
    a.input_dim = j.at("input_dim").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    a.output_dim = j.at("output_dim").get<std::size_t>();
    return a;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad architecture: ") + e.what());
  }
}

Mlp::Mlp(Architecture arch) : arch_(std::move(arch)) {
  if (arch_.input_dim == 0 || arch_.output_dim == 0) throw ValidationError("MLP needs non-zero input and output");
  widths_.push_back(arch_.input_dim);
  for (std::size_t h : arch_.hidden) {
    if (h == 0) throw ValidationError("MLP hidden width must be positive");
    widths_.push_back(h);
  }
  widths_.push_back(arch_.output_dim);
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(off);
    off += widths_[l + 1] * widths_[l] + widths_[l + 1];
  }
  n_params_ = off;
}

void Mlp::forward(std::span<const double> params, std::span<const double> input, MlpTape& tape) const {
  if (params.size() != n_params_) throw ValidationError("parameter vector size mismatch");
  if (input.size() != arch_.input_dim) throw ValidationError("input dimension mismatch");
  const std::size_t n_layers = offsets_.size();
  tape.activations.resize(n_layers + 1);
  tape.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const double* w = params.data() + offsets_[l];
    const double* b = w + out * in;
    const auto& x = tape.activations[l];
    auto& y = tape.activations[l + 1];
    y.assign(out, 0.0);
    const bool hidden = l + 1 < n_layers;
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
      y[o] = hidden ? std::tanh(s) : s;
    }
  }
}

void Mlp::backward(std::span<const double> params, const MlpTape& tape, std::span<const double> d_output,
                   std::span<double> grad, std::span<double> d_input) const {
  if (grad.size() != n_params_) throw ValidationError("gradient vector size mismatch");
  const std::size_t n_layers = offsets_.size();
  std::vector<double> delta(d_output.begin(), d_output.end());  // d loss / d pre-activation
  for (std::size_t l = n_layers; l-- > 0;) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const double* w = params.data() + offsets_[l];
    double* gw = grad.data() + offsets_[l];
    double* gb = gw + out * in;
    const auto& x = tape.activations[l];
    for (std::size_t o = 0; o < out; ++o) {
      gb[o] += delta[o];
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += delta[o] * x[i];
    }
    if (l == 0 && d_input.empty()) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * delta[o];
    }
    if (l == 0) {
      std::copy(prev.begin(), prev.end(), d_input.begin());
      break;
    }
    // x is tanh output of the previous layer.
    for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - x[i] * x[i];
    delta = std::move(prev);
  }
}

std::vector<double> Mlp::init_params(Rng& rng, double scale) const {
  std::vector<double> p(n_params_, 0.0);
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const std::size_t in = widths_[l], out = widths_[l + 1];
    const double bound = scale / std::sqrt(static_cast<double>(in));
    for (std::size_t k = 0; k < out * in; ++k) p[offsets_[l] + k] = rng.uniform(-bound, bound);
  }
  return p;
}

}  // namespace prefedit
