// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace prefedit::detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (contiguous chunks).
/// The first exception thrown by any worker is rethrown.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Per-sample gradients reduced in index order, so the sum does not depend
/// on the number of workers. fn(i, grad) returns sample i's loss and adds its
/// gradient into `grad`.
template <typename F>
double reduce_samples(std::size_t n, std::size_t n_params, std::size_t threads, std::vector<double>& grad, F&& fn) {
  std::vector<std::vector<double>> grads(n, std::vector<double>(n_params, 0.0));
  std::vector<double> losses(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) { losses[i] = fn(i, grads[i]); });
  grad.assign(n_params, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    loss += losses[i];
    for (std::size_t k = 0; k < n_params; ++k) grad[k] += grads[i][k];
  }
  return loss;
}

/// As reduce_samples, but returns the running mean of the losses, which is
/// exact when every sample has the same loss.
template <typename F>
double mean_samples(std::size_t n, std::size_t n_params, std::size_t threads, std::vector<double>& grad, F&& fn) {
  std::vector<double> losses(n, 0.0);
  reduce_samples(n, n_params, threads, grad, [&](std::size_t i, std::vector<double>& g) {
    losses[i] = fn(i, g);
    return losses[i];
  });
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += (losses[i] - mean) / static_cast<double>(i + 1);
  return mean;
}

}  // namespace prefedit::detail
