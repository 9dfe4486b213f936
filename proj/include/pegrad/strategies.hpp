#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "pegrad/errors.hpp"
#include "pegrad/layers.hpp"
#include "pegrad/per_example.hpp"
#include "pegrad/tensor.hpp"

namespace pegrad {

// ---------------------------------------------------------------------------
// Strategy selection
// ---------------------------------------------------------------------------

// naive: one singleton forward/backward per example, sequential.
// crb:   one batched pass, per-example weight gradients via the
//        chain-rule-based kernels (grouped convolution for conv layers).
// multi: one parameter-shared replica pass per example, distributed over a
//        worker pool.
enum class StrategyKind { naive, crb, multi };

inline const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::naive: return "naive";
    case StrategyKind::crb: return "crb";
    case StrategyKind::multi: return "multi";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string_view name) {
  if (name == "naive") return StrategyKind::naive;
  if (name == "crb") return StrategyKind::crb;
  if (name == "multi") return StrategyKind::multi;
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected naive, crb, or multi)");
}

struct GradientRequest {
  const Network* network = nullptr;
  const Tensor* input = nullptr;
  StrategyKind strategy = StrategyKind::crb;
  int worker_count = 1;  // multi only
};

namespace detail {

inline void validate_gradient_inputs(const Network& net, const Tensor& x) {
  if (net.parameterized_count() == 0) {
    throw ConfigError("network has no parameterized layers");
  }
  if (x.rank() < 1 || x.dim(0) < 1) {
    throw ShapeError("input batch must be non-empty, got " +
                     x.shape().to_string());
  }
}

// Empty per-example gradient holder with the right tensor shapes.
inline PerExampleGrads make_empty_grads(const Network& net, std::int64_t batch) {
  PerExampleGrads out;
  out.batch_size = batch;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (const auto* c = std::get_if<ConvLayer>(&net.layers[i])) {
      std::vector<std::int64_t> w{batch};
      const auto& kd = c->kernel.shape().dims();
      w.insert(w.end(), kd.begin(), kd.end());
      PerExampleLayerGrads lg{i, Tensor{Shape(w)}, std::nullopt};
      if (c->bias) lg.bias = Tensor{Shape{batch, c->geometry.out_channels}};
      out.layers.push_back(std::move(lg));
    } else if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
      PerExampleLayerGrads lg{
          i, Tensor{Shape{batch, d->weight.dim(0), d->weight.dim(1)}},
          std::nullopt};
      if (d->bias) lg.bias = Tensor{Shape{batch, d->weight.dim(0)}};
      out.layers.push_back(std::move(lg));
    }
  }
  return out;
}

inline void copy_into_row(Tensor& dst, std::int64_t row, const Tensor& src) {
  const std::int64_t per = dst.numel() / dst.dim(0);
  std::copy(src.data(), src.data() + per, dst.data() + row * per);
}

// Runs the singleton pass for example b and writes row b of out. Shared by
// naive (sequential loop) and multi (worker pool).
inline void example_grads_into_row(const Network& net, const Tensor& x,
                                   std::int64_t b, PerExampleGrads& out) {
  const Tensor xb = slice_example(x, b);
  ForwardResult fr = forward(net, xb);
  const AggregateGrads ag =
      aggregate_backward(net, fr.cache, per_example_loss_grad(fr.activations));
  for (std::size_t li = 0; li < ag.layers.size(); ++li) {
    copy_into_row(out.layers[li].weight, b, ag.layers[li].weight);
    if (ag.layers[li].bias) {
      copy_into_row(*out.layers[li].bias, b, *ag.layers[li].bias);
    }
  }
}

inline PerExampleGrads run_naive(const Network& net, const Tensor& x) {
  PerExampleGrads out = make_empty_grads(net, x.dim(0));
  for (std::int64_t b = 0; b < x.dim(0); ++b) {
    example_grads_into_row(net, x, b, out);
  }
  return out;
}

inline PerExampleGrads run_crb(const Network& net, const Tensor& x) {
  PerExampleGrads out;
  out.batch_size = x.dim(0);
  ForwardResult fr = forward(net, x);
  Tensor dy = per_example_loss_grad(fr.activations);
  std::vector<PerExampleLayerGrads> reversed;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const Layer& layer = net.layers[i];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      PerExampleLayerGrads lg{
          i, conv_per_example_grad(fr.cache.inputs[i], dy, c->geometry),
          std::nullopt};
      if (c->bias) lg.bias = conv_per_example_bias_grad(dy);
      reversed.push_back(std::move(lg));
    } else if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      PerExampleLayerGrads lg{
          i, dense_per_example_grad(fr.cache.inputs[i], dy), std::nullopt};
      if (d->bias) lg.bias = dy;  // dL/d(bias_j) per example is dy[b, j]
      reversed.push_back(std::move(lg));
    }
    if (i > 0) dy = backward_input(net, fr.cache, i, dy);
  }
  out.layers.assign(std::make_move_iterator(reversed.rbegin()),
                    std::make_move_iterator(reversed.rend()));
  return out;
}

inline PerExampleGrads run_multi(const Network& net, const Tensor& x,
                                 int worker_count) {
  const std::int64_t batch = x.dim(0);
  const std::int64_t workers =
      std::clamp<std::int64_t>(worker_count, 1, batch);
  PerExampleGrads out = make_empty_grads(net, batch);

  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto run_range = [&](std::int64_t lo, std::int64_t hi) {
    try {
      for (std::int64_t b = lo; b < hi; ++b) {
        example_grads_into_row(net, x, b, out);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (workers == 1) {
    run_range(0, batch);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::int64_t chunk = (batch + workers - 1) / workers;
    for (std::int64_t w = 0; w < workers; ++w) {
      const std::int64_t lo = w * chunk;
      const std::int64_t hi = std::min(batch, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (std::thread& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace detail

// Per-example gradients of L[b] w.r.t. every parameter. The result is
// independent of the strategy (up to floating-point noise) and, for multi,
// independent of the worker count: each example's computation is
// self-contained and rows are gathered by example index.
inline PerExampleGrads per_example_grads(const Network& net, const Tensor& x,
                                         StrategyKind strategy,
                                         int worker_count = 1) {
  detail::validate_gradient_inputs(net, x);
  switch (strategy) {
    case StrategyKind::naive: return detail::run_naive(net, x);
    case StrategyKind::crb: return detail::run_crb(net, x);
    case StrategyKind::multi: return detail::run_multi(net, x, worker_count);
  }
  throw ConfigError("invalid strategy");
}

inline PerExampleGrads per_example_grads(const GradientRequest& req) {
  if (req.network == nullptr || req.input == nullptr) {
    throw ConfigError("gradient request is missing the network or input");
  }
  if (req.worker_count < 1) {
    throw ConfigError("worker_count must be >= 1");
  }
  return per_example_grads(*req.network, *req.input, req.strategy,
                           req.worker_count);
}

// ---------------------------------------------------------------------------
// Cross-strategy comparison
// ---------------------------------------------------------------------------

struct DeviationEntry {
  std::size_t layer_index;
  std::string tensor;  // "weight" or "bias"
  std::string pair;    // e.g. "naive/crb"
  double max_abs_dev;
};

struct DeviationReport {
  std::vector<DeviationEntry> entries;
  double worst = 0.0;

  bool all_within(double tol) const { return worst <= tol; }

  std::vector<DeviationEntry> failures(double tol) const {
    std::vector<DeviationEntry> out;
    for (const DeviationEntry& e : entries) {
      if (e.max_abs_dev > tol) out.push_back(e);
    }
    return out;
  }
};

namespace detail {

inline double max_abs_dev(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare gradients of shapes " +
                     a.shape().to_string() + " and " + b.shape().to_string());
  }
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    if (d > worst) worst = d;
  }
  return worst;
}

}  // namespace detail

// Pairwise per-layer deviations across named gradient runs.
inline DeviationReport build_deviation_report(
    const std::vector<std::pair<std::string, const PerExampleGrads*>>& runs) {
  DeviationReport report;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      const PerExampleGrads& a = *runs[i].second;
      const PerExampleGrads& b = *runs[j].second;
      if (a.layers.size() != b.layers.size()) {
        throw ShapeError("gradient runs disagree on layer count");
      }
      const std::string pair = runs[i].first + "/" + runs[j].first;
      for (std::size_t li = 0; li < a.layers.size(); ++li) {
        DeviationEntry e{a.layers[li].layer_index, "weight", pair,
                         detail::max_abs_dev(a.layers[li].weight,
                                             b.layers[li].weight)};
        report.worst = std::max(report.worst, e.max_abs_dev);
        report.entries.push_back(std::move(e));
        if (a.layers[li].bias && b.layers[li].bias) {
          DeviationEntry be{a.layers[li].layer_index, "bias", pair,
                            detail::max_abs_dev(*a.layers[li].bias,
                                                *b.layers[li].bias)};
          report.worst = std::max(report.worst, be.max_abs_dev);
          report.entries.push_back(std::move(be));
        }
      }
    }
  }
  return report;
}

struct VerifyResult {
  DeviationReport report;
  double tol = 0.0;
  bool passed = false;
};

// Runs all three strategies on the same batch and reports per-layer maximum
// absolute deviations; flags any pair exceeding tol.
inline VerifyResult verify_equivalence(const Network& net, const Tensor& x,
                                       double tol, int worker_count = 2) {
  if (tol <= 0) throw ConfigError("tolerance must be positive");
  const PerExampleGrads naive =
      per_example_grads(net, x, StrategyKind::naive);
  const PerExampleGrads crb = per_example_grads(net, x, StrategyKind::crb);
  const PerExampleGrads multi =
      per_example_grads(net, x, StrategyKind::multi, worker_count);
  VerifyResult result;
  result.report = build_deviation_report(
      {{"naive", &naive}, {"crb", &crb}, {"multi", &multi}});
  result.tol = tol;
  result.passed = result.report.all_within(tol);
  return result;
}

}  // namespace pegrad
