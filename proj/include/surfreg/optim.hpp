#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "surfreg/tensor.hpp"

namespace surfreg::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one buffer per parameter.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t t = 0;
};

/// One Adam update of `params` given `grads` (same order and sizes). An
/// empty gradient span counts as zero.
template <typename Real>
void adam_step(std::vector<Tensor<Real>>& params, const std::vector<std::span<const Real>>& grads,
               AdamState& state, const AdamOptions& opt) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  ++state.t;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    const auto g = grads[k];
    if (!g.empty() && g.size() != w.size())
      throw std::invalid_argument("adam_step: gradient size mismatch for parameter " +
                                  std::to_string(k));
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

/// Adam bound to a fixed parameter list; reads each parameter's own
/// accumulated gradient.
template <typename Real>
class Adam {
public:
  Adam(std::vector<Tensor<Real>> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {}

  void step() {
    std::vector<std::span<const Real>> grads;
    for (const auto& p : params_) grads.push_back(p.grad());
    adam_step(params_, grads, state_, opt_);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const AdamState& state() const { return state_; }
  AdamOptions& options() { return opt_; }

private:
  std::vector<Tensor<Real>> params_;
  AdamOptions opt_;
  AdamState state_;
};

}  // namespace surfreg::ad
