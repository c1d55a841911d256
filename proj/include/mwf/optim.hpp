#pragma once

#include <string>
#include <vector>

#include "mwf/tensor.hpp"

namespace mwf {

// A trainable tensor together with the name it is checkpointed under.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;  // decoupled: applied to the value, not the gradient
};

// AdamW over a fixed parameter list. Moment buffers are keyed by position and
// validated by name, so the list must not change between steps; rebuilding the
// same registration order from a checkpoint resumes the exact trajectory.
class AdamState {
 public:
  AdamState(std::vector<NamedParam> params, AdamConfig config);

  // One update using the gradients currently stored on the parameters.
  // Throws std::runtime_error naming any parameter whose gradient buffer was
  // never written: a missing gradient means the graph silently dropped it.
  void step(double lr_override = -1.0);

  void zero_grads();

  // Scales all gradients by min(1, max_norm / ||g||) and returns the
  // pre-clip global norm.
  double clip_global_norm(double max_norm);

  int64_t step_count() const { return t_; }
  const std::vector<NamedParam>& params() const { return params_; }
  const AdamConfig& config() const { return config_; }

  // Checkpoint surface: first and second moments per parameter, same order
  // as params().
  const std::vector<std::vector<double>>& moment1() const { return m_; }
  const std::vector<std::vector<double>>& moment2() const { return v_; }
  void restore(const std::vector<std::vector<double>>& m,
               const std::vector<std::vector<double>>& v, int64_t t);

 private:
  std::vector<NamedParam> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t t_ = 0;
};

}  // namespace mwf
