// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "prefedit/jsonl.hpp"
#include "prefedit/random.hpp"

namespace prefedit {

/// Layer widths of a fully connected network: tanh hidden layers, linear output.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;

  bool operator==(const Architecture&) const = default;
  std::size_t num_params() const;
};

Json to_json(const Architecture& a);
Architecture architecture_from_json(const Json& j);

/// Activations recorded by a forward pass, consumed by backward().
struct MlpTape {
  std::vector<std::vector<double>> activations;  // [0] = input, back() = output
};

/// Stateless evaluator over a flat parameter vector.
///
/// Layout per layer: weights (out x in, row-major) followed by biases (out).
class Mlp {
 public:
  explicit Mlp(Architecture arch);

  const Architecture& architecture() const { return arch_; }
  std::size_t num_params() const { return n_params_; }

  /// Writes outputs into tape.activations.back().
  void forward(std::span<const double> params, std::span<const double> input, MlpTape& tape) const;

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
  /// Optionally writes d(loss)/d(input).
  void backward(std::span<const double> params, const MlpTape& tape, std::span<const double> d_output,
                std::span<double> grad, std::span<double> d_input = {}) const;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  std::vector<double> init_params(Rng& rng, double scale = 1.0) const;

 private:
  Architecture arch_;
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;  // start of each layer's weights
  std::size_t n_params_ = 0;
};

}  // namespace prefedit
