#ifndef FRESH_OPTIMIZER_H_
#define FRESH_OPTIMIZER_H_

#include <vector>

#include "fresh/tensor.h"

namespace fresh {

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over an ordered list of tensors. The gradient list passed to step()
// must line up with the parameter list given at construction.
class Adam {
 public:
  Adam(const std::vector<NamedTensor>& params, AdamConfig cfg);

  void step(const std::vector<NamedTensor>& grads);

 private:
  std::vector<NamedTensor> params_;
  AdamConfig cfg_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  long step_ = 0;
};

double global_norm(const std::vector<NamedTensor>& grads);

// Rescales grads so their global norm is at most max_norm. Returns the norm
// before clipping.
double clip_global_norm(const std::vector<NamedTensor>& grads, double max_norm);

// Throws kNumeric naming the first tensor holding a non-finite entry.
void check_finite(const std::vector<NamedTensor>& tensors);
void check_finite(const std::vector<ConstNamedTensor>& tensors);

}  // namespace fresh

#endif  // FRESH_OPTIMIZER_H_
