#pragma once

#include <cmath>
#include <vector>

#include "sobbo/errors.hpp"
#include "sobbo/mlp.hpp"
#include "sobbo/tensor.hpp"

namespace sobbo {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;  // first moments, one per parameter tensor
  std::vector<Tensor> v;  // second moments
  std::size_t step = 0;   // number of updates applied

  static AdamState zeros_like(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
      s.m.push_back(Tensor::zeros(p->shape));
      s.v.push_back(Tensor::zeros(p->shape));
    }
    return s;
  }
};

/// One bias-corrected Adam update over a parameter list.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw config_error("adam_step: parameter/gradient/state count mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = *grads[p];
    if (!same_shape(w, g)) throw shape_error("adam_step: gradient shape mismatch");
    if (!g.all_finite()) throw numeric_error("adam_step: non-finite gradient");
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
      v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
      const double mh = m.data[i] / bc1;
      const double vh = v.data[i] / bc2;
      w.data[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

inline std::vector<Tensor*> model_params(MlpModel& m) {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    out.push_back(&m.weights[l]);
    out.push_back(&m.biases[l]);
  }
  return out;
}

}  // namespace sobbo
