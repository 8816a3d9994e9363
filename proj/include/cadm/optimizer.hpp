#pragma once

#include <vector>

#include "cadm/model.hpp"

namespace cadm {

// Adam over one parameter group. Callers must pass param/grad views produced
// by the same traversal every step; moment buffers are sized on first use.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);

  void step(const std::vector<TensorView>& params,
            const std::vector<ConstTensorView>& grads);
  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<Scalar>> m_, v_;
};

}  // namespace cadm
