#pragma once

#include <vector>

#include "vncseg/nn/simd.hpp"
#include "vncseg/tensor.hpp"
#include "vncseg/threadpool.hpp"

namespace vncseg {

template <typename T>
struct DiceLossResult {
  double loss;                        // negative sum of per-class soft Dice
  std::vector<double> per_class;      // soft Dice per class
  Tensor<T> grad_probs;
};

// Soft Dice over every class: D_c = (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps),
// loss = -sum_c D_c. Sums run over the whole batch in double precision.
template <typename T>
DiceLossResult<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target,
                                 double eps) {
  if (!probs.same_shape(target))
    throw std::runtime_error("probability and target shapes differ: " +
                             probs.shape_str() + " vs " + target.shape_str());
  int B = probs.shape[0], C = probs.shape[1], H = probs.shape[2], W = probs.shape[3];
  std::size_t plane = static_cast<std::size_t>(H) * W;

  DiceLossResult<T> res;
  res.per_class.assign(C, 0.0);
  res.grad_probs = Tensor<T>({B, C, H, W});

  const T* pd = probs.data.data();
  const T* td = target.data.data();
  T* gd = res.grad_probs.data.data();
  parallel_for(0, C, [&](std::int64_t clo, std::int64_t chi) {
    for (std::int64_t c = clo; c < chi; ++c) {
      double inter = 0.0, psum = 0.0, gsum = 0.0;
      for (int b = 0; b < B; ++b) {
        std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
        inter += detail::dot_as_double(pd + off, td + off, static_cast<int>(plane));
        psum += detail::sum_as_double(pd + off, static_cast<int>(plane));
        gsum += detail::sum_as_double(td + off, static_cast<int>(plane));
      }
      double num = 2.0 * inter + eps;
      double den = psum + gsum + eps;
      res.per_class[c] = num / den;

      // d(-D_c)/dp = (num - 2*g*den) / den^2
      T c1 = static_cast<T>(num / (den * den));
      T c2 = static_cast<T>(2.0 / den);
      for (int b = 0; b < B; ++b) {
        std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          gd[off + i] = c1 - c2 * td[off + i];
      }
    }
  });

  double loss = 0.0;
  for (double d : res.per_class) loss -= d;
  res.loss = loss;
  return res;
}

}  // namespace vncseg
