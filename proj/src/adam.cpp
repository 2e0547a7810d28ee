#include "cirlab/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cirlab {

AdamState::AdamState(const AdamConfig& cfg, const std::vector<const Tensor*>& params) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor* p : params) {
    m_.emplace_back(p->shape, 0.0);
    v_.emplace_back(p->shape, 0.0);
  }
}

void AdamState::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                     const std::vector<std::string>& names) {
  if (params.size() != m_.size() || grads.size() != m_.size() || names.size() != m_.size())
    throw std::invalid_argument("adam: block count mismatch with optimizer state");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!params[b]->same_shape(m_[b]) || !grads[b]->same_shape(m_[b]))
      throw std::invalid_argument("adam: shape mismatch in block " + names[b]);
    for (double gv : grads[b]->data)
      if (!std::isfinite(gv))
        throw std::runtime_error("adam: non-finite gradient in block " + names[b] + ", step aborted");
  }

  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    Tensor& m = m_[b];
    Tensor& v = v_[b];
    Tensor& p = *params[b];
    const Tensor& g = *grads[b];
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace cirlab
