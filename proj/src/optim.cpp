#include "mwf/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mwf {

AdamState::AdamState(std::vector<NamedParam> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const NamedParam& p : params_) {
    if (!p.tensor.defined())
      throw std::runtime_error("optimizer: parameter '" + p.name + "' is undefined");
    m_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
  }
}

void AdamState::step(double lr_override) {
  for (const NamedParam& p : params_)
    if (!p.tensor.has_grad())
      throw std::runtime_error("optimizer: no gradient reached parameter '" +
                               p.name + "'");
  ++t_;
  double lr = lr_override >= 0.0 ? lr_override : config_.lr;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor t = params_[pi].tensor;
    double* w = t.data();
    const double* g = t.grad();
    std::vector<double>& m = m_[pi];
    std::vector<double>& v = v_[pi];
    for (size_t i = 0; i < m.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) +
                    config_.weight_decay * w[i]);
    }
  }
}

void AdamState::zero_grads() {
  for (NamedParam& p : params_) {
    p.tensor.ensure_grad();
    p.tensor.zero_grad();
  }
}

double AdamState::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (const NamedParam& p : params_) {
    if (!p.tensor.has_grad()) continue;
    const double* g = p.tensor.grad();
    for (int64_t i = 0; i < p.tensor.size(); ++i) sq += g[i] * g[i];
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (NamedParam& p : params_) {
      if (!p.tensor.has_grad()) continue;
      double* g = p.tensor.grad();
      for (int64_t i = 0; i < p.tensor.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

void AdamState::restore(const std::vector<std::vector<double>>& m,
                        const std::vector<std::vector<double>>& v, int64_t t) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw std::runtime_error("optimizer: checkpoint moment count " +
                             std::to_string(m.size()) + " != parameter count " +
                             std::to_string(m_.size()));
  for (size_t i = 0; i < m.size(); ++i) {
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
      throw std::runtime_error("optimizer: checkpoint moment size mismatch for '" +
                               params_[i].name + "'");
    m_[i] = m[i];
    v_[i] = v[i];
  }
  t_ = t;
}

}  // namespace mwf
