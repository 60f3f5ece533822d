#pragma once

#include <cmath>
#include <vector>

#include "unimotion/errors.hpp"
#include "unimotion/nn/core.hpp"

namespace unimotion::nn {

/// Adam with bias correction. Moment buffers follow the tensor order of the
/// parameter list handed to init().
template <typename Scalar>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Vector<Scalar>> m, v;

  void init(const std::vector<TensorRef<Scalar>>& params) {
    m.clear();
    v.clear();
    step_count = 0;
    for (const auto& p : params) {
      m.push_back(Vector<Scalar>::Zero(p.size()));
      v.push_back(Vector<Scalar>::Zero(p.size()));
    }
  }

  void step(const std::vector<TensorRef<Scalar>>& params,
            const std::vector<TensorRef<Scalar>>& grads) {
    if (params.size() != m.size() || grads.size() != params.size())
      throw InvalidInput("Adam: tensor list mismatch");
    ++step_count;
    const Scalar c1 = Scalar(1.0 - std::pow(beta1, step_count));
    const Scalar c2 = Scalar(1.0 - std::pow(beta2, step_count));
    for (size_t i = 0; i < params.size(); ++i) {
      auto p = Eigen::Map<Vector<Scalar>>(params[i].data, params[i].size());
      auto g = Eigen::Map<const Vector<Scalar>>(grads[i].data, grads[i].size());
      m[i] = Scalar(beta1) * m[i] + Scalar(1 - beta1) * g;
      v[i] = Scalar(beta2) * v[i] + Scalar(1 - beta2) * g.cwiseProduct(g);
      p.array() -= Scalar(lr) * (m[i].array() / c1) /
                   ((v[i].array() / c2).sqrt() + Scalar(eps));
    }
  }
};

}  // namespace unimotion::nn
