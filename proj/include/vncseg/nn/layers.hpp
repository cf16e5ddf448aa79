#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "vncseg/nn/simd.hpp"
#include "vncseg/tensor.hpp"
#include "vncseg/threadpool.hpp"

// Layers keep explicit forward caches and expose backward() that accumulates
// into grad tensors. Reductions follow a fixed order (see simd.hpp) and work
// is split so that every output element is produced by exactly one worker;
// both together make results independent of the thread count.

namespace vncseg {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
struct StateRef {
  std::string name;
  Tensor<T>* value;
};

// Two execution strategies share one accumulation order (kernel taps in
// (ic, kh, kw) sequence per output element): a cols path that lowers each
// batch item to a (in_ch*k*k) x (OH*OW) patch matrix and runs fixed-order
// row updates over it, and a direct row path for planes too large to lower.
template <typename T>
struct Conv2d {
  int in_ch, out_ch, ksize, stride, pad;
  Tensor<T> weight, bias, grad_weight, grad_bias;
  Tensor<T> x_cache;           // row path
  std::vector<T> cols_cache;   // cols path, B * K * OH*OW
  bool has_cache = false;
  bool cached_cols = false;
  int cache_B = 0, cache_H = 0, cache_W = 0;

  Conv2d(int in_ch_, int out_ch_, int ksize_, int stride_, int pad_)
      : in_ch(in_ch_),
        out_ch(out_ch_),
        ksize(ksize_),
        stride(stride_),
        pad(pad_),
        weight({out_ch_, in_ch_, ksize_, ksize_}),
        bias({out_ch_}),
        grad_weight({out_ch_, in_ch_, ksize_, ksize_}),
        grad_bias({out_ch_}) {}

  int out_dim(int in) const { return (in + 2 * pad - ksize) / stride + 1; }
  int patch_rows() const { return in_ch * ksize * ksize; }

  bool use_cols(int B, int OH, int OW) const {
    std::int64_t K = patch_rows();
    std::int64_t M = static_cast<std::int64_t>(OH) * OW;
    return K * M <= (1 << 20) && B * K * M <= (16 << 20);
  }

  // One patch-matrix row per kernel tap; positions outside the input are 0.
  void fill_cols(const T* xb, int H, int W, int OH, int OW, T* cols) const {
    std::size_t M = static_cast<std::size_t>(OH) * OW;
    T* row = cols;
    for (int ic = 0; ic < in_ch; ++ic) {
      const T* xc = xb + static_cast<std::size_t>(ic) * H * W;
      for (int kh = 0; kh < ksize; ++kh)
        for (int kw = 0; kw < ksize; ++kw, row += M) {
          for (int oh = 0; oh < OH; ++oh) {
            int ih = oh * stride + kh - pad;
            T* dst = row + static_cast<std::size_t>(oh) * OW;
            if (ih < 0 || ih >= H) {
              std::fill(dst, dst + OW, T(0));
              continue;
            }
            const T* xrow = xc + static_cast<std::size_t>(ih) * W;
            if (stride == 1) {
              int shift = kw - pad;
              int lo = shift < 0 ? -shift : 0;
              int hi = std::max(lo, std::min(OW, W - shift));
              std::fill(dst, dst + lo, T(0));
              std::memcpy(dst + lo, xrow + lo + shift,
                          static_cast<std::size_t>(hi - lo) * sizeof(T));
              std::fill(dst + hi, dst + OW, T(0));
            } else {
              for (int ow = 0; ow < OW; ++ow) {
                int iw = ow * stride + kw - pad;
                dst[ow] = (iw < 0 || iw >= W) ? T(0) : xrow[iw];
              }
            }
          }
        }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    if (x.rank != 4 || x.shape[1] != in_ch)
      throw std::runtime_error("conv input shape " + x.shape_str() + " wants " +
                               std::to_string(in_ch) + " channels");
    int B = x.shape[0], H = x.shape[2], W = x.shape[3];
    int OH = out_dim(H), OW = out_dim(W);
    if (OH < 1 || OW < 1)
      throw std::runtime_error("conv input " + x.shape_str() + " too small for kernel " +
                               std::to_string(ksize));
    Tensor<T> out({B, out_ch, OH, OW});

    const T* xd = x.data.data();
    T* od = out.data.data();

    if (use_cols(B, OH, OW)) {
      int K = patch_rows();
      std::size_t M = static_cast<std::size_t>(OH) * OW;
      std::size_t need = static_cast<std::size_t>(B) * K * M;
      if (cols_cache.size() != need) cols_cache.assign(need, T(0));
      T* cd = cols_cache.data();
      parallel_for(0, B, [&](std::int64_t blo, std::int64_t bhi) {
        for (std::int64_t b = blo; b < bhi; ++b)
          fill_cols(xd + static_cast<std::size_t>(b) * in_ch * H * W, H, W, OH, OW,
                    cd + static_cast<std::size_t>(b) * K * M);
      });
      parallel_for(0, static_cast<std::int64_t>(B) * out_ch,
                   [&](std::int64_t lo, std::int64_t hi) {
                     for (std::int64_t t = lo; t < hi; ++t) {
                       int b = static_cast<int>(t / out_ch);
                       int oc = static_cast<int>(t % out_ch);
                       T* plane = od + (static_cast<std::size_t>(b) * out_ch + oc) * M;
                       const T* bc = cd + static_cast<std::size_t>(b) * K * M;
                       const T* w = weight.data.data() + static_cast<std::size_t>(oc) * K;
                       T bv = bias.data[oc];
                       for (std::size_t i = 0; i < M; ++i) plane[i] = bv;
                       int r = 0;
                       for (; r + 4 <= K; r += 4)
                         detail::axpy4(w[r], w[r + 1], w[r + 2], w[r + 3], bc + r * M,
                                       bc + (r + 1) * M, bc + (r + 2) * M,
                                       bc + (r + 3) * M, plane, static_cast<int>(M));
                       for (; r < K; ++r)
                         detail::axpy(w[r], bc + r * M, plane, static_cast<int>(M));
                     }
                   });
      if (train) {
        x_cache = Tensor<T>();
        cached_cols = true;
        has_cache = true;
        cache_B = B;
        cache_H = H;
        cache_W = W;
      }
      return out;
    }

    parallel_for(0, static_cast<std::int64_t>(B) * out_ch, [&](std::int64_t lo,
                                                               std::int64_t hi) {
      for (std::int64_t t = lo; t < hi; ++t) {
        int b = static_cast<int>(t / out_ch);
        int oc = static_cast<int>(t % out_ch);
        T* plane = od + (static_cast<std::size_t>(b) * out_ch + oc) * OH * OW;
        T bv = bias.data[oc];
        for (int i = 0; i < OH * OW; ++i) plane[i] = bv;
        for (int ic = 0; ic < in_ch; ++ic) {
          const T* xplane = xd + (static_cast<std::size_t>(b) * in_ch + ic) * H * W;
          const T* wk = weight.data.data() +
                        (static_cast<std::size_t>(oc) * in_ch + ic) * ksize * ksize;
          for (int kh = 0; kh < ksize; ++kh) {
            for (int oh = 0; oh < OH; ++oh) {
              int ih = oh * stride + kh - pad;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + static_cast<std::size_t>(ih) * W;
              T* orow = plane + static_cast<std::size_t>(oh) * OW;
              for (int kw = 0; kw < ksize; ++kw) {
                T w = wk[kh * ksize + kw];
                int shift = kw - pad;
                int lo_ow = 0, hi_ow = OW;
                if (stride == 1) {
                  if (shift < 0) lo_ow = -shift;
                  if (W - shift < OW) hi_ow = W - shift;
                  if (lo_ow < hi_ow)
                    detail::axpy(w, xrow + lo_ow + shift, orow + lo_ow, hi_ow - lo_ow);
                } else {
                  if (shift < 0) lo_ow = (-shift + stride - 1) / stride;
                  hi_ow = std::min(OW - 1, (W - 1 - shift) / stride) + 1;
                  for (int ow = lo_ow; ow < hi_ow; ++ow)
                    orow[ow] += w * xrow[ow * stride + shift];
                }
              }
            }
          }
        }
      }
    });

    if (train) {
      x_cache = x;
      cached_cols = false;
      has_cache = true;
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gout) {
    if (!has_cache) throw std::logic_error("conv backward without cached forward");
    if (cached_cols) return backward_cols(gout);

    const Tensor<T>& x = x_cache;
    int B = x.shape[0], H = x.shape[2], W = x.shape[3];
    int OH = gout.shape[2], OW = gout.shape[3];

    // weight and bias gradients, one output channel per task
    const T* xd = x.data.data();
    const T* gd = gout.data.data();
    parallel_for(0, out_ch, [&](std::int64_t lo, std::int64_t hi) {
      std::vector<double> acc(static_cast<std::size_t>(in_ch) * ksize * ksize);
      for (std::int64_t oc = lo; oc < hi; ++oc) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double bacc = 0.0;
        for (int b = 0; b < B; ++b) {
          const T* gplane = gd + (static_cast<std::size_t>(b) * out_ch + oc) * OH * OW;
          for (int oh = 0; oh < OH; ++oh)
            bacc += static_cast<double>(detail::sum_fixed(gplane + oh * OW, OW));
          for (int ic = 0; ic < in_ch; ++ic) {
            const T* xplane = xd + (static_cast<std::size_t>(b) * in_ch + ic) * H * W;
            for (int kh = 0; kh < ksize; ++kh) {
              for (int oh = 0; oh < OH; ++oh) {
                int ih = oh * stride + kh - pad;
                if (ih < 0 || ih >= H) continue;
                const T* xrow = xplane + static_cast<std::size_t>(ih) * W;
                const T* grow = gplane + static_cast<std::size_t>(oh) * OW;
                for (int kw = 0; kw < ksize; ++kw) {
                  int shift = kw - pad;
                  int lo_ow = 0, hi_ow = OW;
                  double d;
                  if (stride == 1) {
                    if (shift < 0) lo_ow = -shift;
                    if (W - shift < OW) hi_ow = W - shift;
                    if (lo_ow >= hi_ow) continue;
                    d = static_cast<double>(
                        detail::dot_fixed(grow + lo_ow, xrow + lo_ow + shift, hi_ow - lo_ow));
                  } else {
                    if (shift < 0) lo_ow = (-shift + stride - 1) / stride;
                    hi_ow = std::min(OW - 1, (W - 1 - shift) / stride) + 1;
                    double s = 0.0;
                    for (int ow = lo_ow; ow < hi_ow; ++ow)
                      s += static_cast<double>(grow[ow]) * xrow[ow * stride + shift];
                    d = s;
                  }
                  acc[(static_cast<std::size_t>(ic) * ksize + kh) * ksize + kw] += d;
                }
              }
            }
          }
        }
        T* gw = grad_weight.data.data() +
                static_cast<std::size_t>(oc) * in_ch * ksize * ksize;
        for (std::size_t i = 0; i < acc.size(); ++i) gw[i] += static_cast<T>(acc[i]);
        grad_bias.data[oc] += static_cast<T>(bacc);
      }
    });

    // input gradient, one batch element per task
    Tensor<T> gin({B, in_ch, H, W});
    T* gid = gin.data.data();
    parallel_for(0, B, [&](std::int64_t blo, std::int64_t bhi) {
      for (std::int64_t b = blo; b < bhi; ++b) {
        for (int oc = 0; oc < out_ch; ++oc) {
          const T* gplane = gd + (static_cast<std::size_t>(b) * out_ch + oc) * OH * OW;
          for (int ic = 0; ic < in_ch; ++ic) {
            T* iplane = gid + (static_cast<std::size_t>(b) * in_ch + ic) * H * W;
            const T* wk = weight.data.data() +
                          (static_cast<std::size_t>(oc) * in_ch + ic) * ksize * ksize;
            for (int kh = 0; kh < ksize; ++kh) {
              for (int oh = 0; oh < OH; ++oh) {
                int ih = oh * stride + kh - pad;
                if (ih < 0 || ih >= H) continue;
                T* irow = iplane + static_cast<std::size_t>(ih) * W;
                const T* grow = gplane + static_cast<std::size_t>(oh) * OW;
                for (int kw = 0; kw < ksize; ++kw) {
                  T w = wk[kh * ksize + kw];
                  int shift = kw - pad;
                  int lo_ow = 0, hi_ow = OW;
                  if (stride == 1) {
                    if (shift < 0) lo_ow = -shift;
                    if (W - shift < OW) hi_ow = W - shift;
                    if (lo_ow < hi_ow)
                      detail::axpy(w, grow + lo_ow, irow + lo_ow + shift, hi_ow - lo_ow);
                  } else {
                    if (shift < 0) lo_ow = (-shift + stride - 1) / stride;
                    hi_ow = std::min(OW - 1, (W - 1 - shift) / stride) + 1;
                    for (int ow = lo_ow; ow < hi_ow; ++ow)
                      irow[ow * stride + shift] += w * grow[ow];
                  }
                }
              }
            }
          }
        }
      }
    });
    return gin;
  }

  Tensor<T> backward_cols(const Tensor<T>& gout) {
    int B = cache_B, H = cache_H, W = cache_W;
    int OH = gout.shape[2], OW = gout.shape[3];
    int K = patch_rows();
    std::size_t M = static_cast<std::size_t>(OH) * OW;
    const T* gd = gout.data.data();
    const T* cd = cols_cache.data();

    // weight and bias gradients, one output channel per task
    parallel_for(0, out_ch, [&](std::int64_t lo, std::int64_t hi) {
      std::vector<double> acc(K);
      for (std::int64_t oc = lo; oc < hi; ++oc) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double bacc = 0.0;
        for (int b = 0; b < B; ++b) {
          const T* g = gd + (static_cast<std::size_t>(b) * out_ch + oc) * M;
          bacc += static_cast<double>(detail::sum_fixed(g, static_cast<int>(M)));
          const T* bc = cd + static_cast<std::size_t>(b) * K * M;
          int r = 0;
          T d4[4];
          for (; r + 4 <= K; r += 4) {
            detail::dot4_fixed(g, bc + r * M, bc + (r + 1) * M, bc + (r + 2) * M,
                               bc + (r + 3) * M, static_cast<int>(M), d4);
            acc[r] += static_cast<double>(d4[0]);
            acc[r + 1] += static_cast<double>(d4[1]);
            acc[r + 2] += static_cast<double>(d4[2]);
            acc[r + 3] += static_cast<double>(d4[3]);
          }
          for (; r < K; ++r)
            acc[r] += static_cast<double>(
                detail::dot_fixed(g, bc + static_cast<std::size_t>(r) * M,
                                  static_cast<int>(M)));
        }
        T* gw = grad_weight.data.data() + static_cast<std::size_t>(oc) * K;
        for (int r = 0; r < K; ++r) gw[r] += static_cast<T>(acc[r]);
        grad_bias.data[oc] += static_cast<T>(bacc);
      }
    });

    // input gradient, one batch element per task
    Tensor<T> gin({B, in_ch, H, W});
    T* gid = gin.data.data();
    const T* wd = weight.data.data();
    parallel_for(0, B, [&](std::int64_t blo, std::int64_t bhi) {
      std::vector<T> colsg(static_cast<std::size_t>(K) * M);
      for (std::int64_t b = blo; b < bhi; ++b) {
        std::fill(colsg.begin(), colsg.end(), T(0));
        const T* gb = gd + static_cast<std::size_t>(b) * out_ch * M;
        for (int r = 0; r < K; ++r) {
          T* y = colsg.data() + static_cast<std::size_t>(r) * M;
          int oc = 0;
          for (; oc + 4 <= out_ch; oc += 4)
            detail::axpy4(wd[static_cast<std::size_t>(oc) * K + r],
                          wd[static_cast<std::size_t>(oc + 1) * K + r],
                          wd[static_cast<std::size_t>(oc + 2) * K + r],
                          wd[static_cast<std::size_t>(oc + 3) * K + r], gb + oc * M,
                          gb + (oc + 1) * M, gb + (oc + 2) * M, gb + (oc + 3) * M, y,
                          static_cast<int>(M));
          for (; oc < out_ch; ++oc)
            detail::axpy(wd[static_cast<std::size_t>(oc) * K + r],
                         gb + static_cast<std::size_t>(oc) * M, y, static_cast<int>(M));
        }
        // scatter the patch rows back onto the input grid
        T* ginb = gid + static_cast<std::size_t>(b) * in_ch * H * W;
        const T* row = colsg.data();
        for (int ic = 0; ic < in_ch; ++ic) {
          T* gc = ginb + static_cast<std::size_t>(ic) * H * W;
          for (int kh = 0; kh < ksize; ++kh)
            for (int kw = 0; kw < ksize; ++kw, row += M) {
              for (int oh = 0; oh < OH; ++oh) {
                int ih = oh * stride + kh - pad;
                if (ih < 0 || ih >= H) continue;
                T* grow_in = gc + static_cast<std::size_t>(ih) * W;
                const T* crow = row + static_cast<std::size_t>(oh) * OW;
                int shift = kw - pad;
                if (stride == 1) {
                  int lo = shift < 0 ? -shift : 0;
                  int hi = std::max(lo, std::min(OW, W - shift));
                  if (hi > lo) detail::axpy(T(1), crow + lo, grow_in + lo + shift, hi - lo);
                } else {
                  int lo_ow = 0, hi_ow = OW;
                  if (shift < 0) lo_ow = (-shift + stride - 1) / stride;
                  hi_ow = std::min(OW - 1, (W - 1 - shift) / stride) + 1;
                  for (int ow = lo_ow; ow < hi_ow; ++ow)
                    grow_in[ow * stride + shift] += crow[ow];
                }
              }
            }
        }
      }
    });
    return gin;
  }

  void zero_grad() {
    grad_weight.fill(T(0));
    grad_bias.fill(T(0));
  }

  void drop_cache() {
    x_cache = Tensor<T>();
    cols_cache.clear();
    cols_cache.shrink_to_fit();
    cached_cols = false;
    has_cache = false;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<StateRef<T>>& states) {
    (void)states;
    params.push_back({prefix + ".weight", &weight, &grad_weight});
    params.push_back({prefix + ".bias", &bias, &grad_bias});
  }
};

template <typename T>
struct BatchNorm2d {
  int channels;
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum*running + (1-momentum)*batch
  Tensor<T> gamma, beta, grad_gamma, grad_beta;
  Tensor<T> running_mean, running_var;
  Tensor<T> xhat_cache;
  std::vector<double> invstd_cache;
  bool has_cache = false;

  explicit BatchNorm2d(int channels_)
      : channels(channels_),
        gamma({channels_}),
        beta({channels_}),
        grad_gamma({channels_}),
        grad_beta({channels_}),
        running_mean({channels_}),
        running_var({channels_}) {
    gamma.fill(T(1));
    running_var.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    if (x.rank != 4 || x.shape[1] != channels)
      throw std::runtime_error("batchnorm input shape " + x.shape_str() + " wants " +
                               std::to_string(channels) + " channels");
    int B = x.shape[0], H = x.shape[2], W = x.shape[3];
    std::size_t plane = static_cast<std::size_t>(H) * W;
    std::size_t N = static_cast<std::size_t>(B) * plane;
    Tensor<T> out({B, channels, H, W});

    if (train) {
      xhat_cache = Tensor<T>({B, channels, H, W});
      invstd_cache.assign(channels, 0.0);
      has_cache = true;
    }

    const T* xd = x.data.data();
    T* od = out.data.data();
    T* hd = train ? xhat_cache.data.data() : nullptr;
    parallel_for(0, channels, [&](std::int64_t clo, std::int64_t chi) {
      for (std::int64_t c = clo; c < chi; ++c) {
        double scale, shiftv;
        double mean = 0.0, invstd = 0.0;
        if (train) {
          double sum = 0.0;
          for (int b = 0; b < B; ++b)
            sum += detail::sum_as_double(
                xd + (static_cast<std::size_t>(b) * channels + c) * plane,
                static_cast<int>(plane));
          mean = sum / static_cast<double>(N);
          double ss = 0.0;
          for (int b = 0; b < B; ++b)
            ss += detail::sumsq_diff_as_double(
                xd + (static_cast<std::size_t>(b) * channels + c) * plane, mean,
                static_cast<int>(plane));
          double var = ss / static_cast<double>(N);  // biased
          invstd = 1.0 / std::sqrt(var + eps);
          invstd_cache[c] = invstd;
          running_mean.data[c] = static_cast<T>(
              momentum * static_cast<double>(running_mean.data[c]) + (1.0 - momentum) * mean);
          running_var.data[c] = static_cast<T>(
              momentum * static_cast<double>(running_var.data[c]) + (1.0 - momentum) * var);
          scale = static_cast<double>(gamma.data[c]) * invstd;
          shiftv = static_cast<double>(beta.data[c]) - scale * mean;
        } else {
          double rm = static_cast<double>(running_mean.data[c]);
          double rv = static_cast<double>(running_var.data[c]);
          double inv = 1.0 / std::sqrt(rv + eps);
          scale = static_cast<double>(gamma.data[c]) * inv;
          shiftv = static_cast<double>(beta.data[c]) - scale * rm;
          mean = rm;
          invstd = inv;
        }
        T sc = static_cast<T>(scale), sh = static_cast<T>(shiftv);
        T mT = static_cast<T>(mean), isT = static_cast<T>(invstd);
        for (int b = 0; b < B; ++b) {
          std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
          const T* xp = xd + off;
          T* op = od + off;
          if (train) {
            T* hp = hd + off;
            for (std::size_t i = 0; i < plane; ++i) {
              T xh = (xp[i] - mT) * isT;
              hp[i] = xh;
              op[i] = static_cast<T>(gamma.data[c]) * xh + static_cast<T>(beta.data[c]);
            }
          } else {
            for (std::size_t i = 0; i < plane; ++i) op[i] = sc * xp[i] + sh;
          }
        }
      }
    });
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gout) {
    if (!has_cache) throw std::logic_error("batchnorm backward without cached forward");
    int B = gout.shape[0], H = gout.shape[2], W = gout.shape[3];
    std::size_t plane = static_cast<std::size_t>(H) * W;
    double N = static_cast<double>(B) * plane;
    Tensor<T> gin({B, channels, H, W});

    const T* gd = gout.data.data();
    const T* hd = xhat_cache.data.data();
    T* gid = gin.data.data();
    parallel_for(0, channels, [&](std::int64_t clo, std::int64_t chi) {
      for (std::int64_t c = clo; c < chi; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int b = 0; b < B; ++b) {
          std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
          sum_g += detail::sum_as_double(gd + off, static_cast<int>(plane));
          sum_gx += detail::dot_as_double(gd + off, hd + off, static_cast<int>(plane));
        }
        grad_beta.data[c] += static_cast<T>(sum_g);
        grad_gamma.data[c] += static_cast<T>(sum_gx);
        T c1 = static_cast<T>(static_cast<double>(gamma.data[c]) * invstd_cache[c]);
        T c2 = static_cast<T>(sum_g / N);
        T c3 = static_cast<T>(sum_gx / N);
        for (int b = 0; b < B; ++b) {
          std::size_t off = (static_cast<std::size_t>(b) * channels + c) * plane;
          const T* gp = gd + off;
          const T* hp = hd + off;
          T* ip = gid + off;
          for (std::size_t i = 0; i < plane; ++i)
            ip[i] = c1 * (gp[i] - c2 - hp[i] * c3);
        }
      }
    });
    return gin;
  }

  void zero_grad() {
    grad_gamma.fill(T(0));
    grad_beta.fill(T(0));
  }

  void drop_cache() {
    xhat_cache = Tensor<T>();
    invstd_cache.clear();
    has_cache = false;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<StateRef<T>>& states) {
    params.push_back({prefix + ".gamma", &gamma, &grad_gamma});
    params.push_back({prefix + ".beta", &beta, &grad_beta});
    states.push_back({prefix + ".running_mean", &running_mean});
    states.push_back({prefix + ".running_var", &running_var});
  }
};

// max(x, 0); the subgradient at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.data)
    if (v < T(0)) v = T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& gout, const Tensor<T>& pre) {
  Tensor<T> gin = gout;
  for (std::size_t i = 0; i < gin.data.size(); ++i)
    if (!(pre.data[i] > T(0))) gin.data[i] = T(0);
  return gin;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Tensor<T> out({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const T* xr = &x.data[((static_cast<std::size_t>(b) * C + c) * H + h) * W];
        T* o0 = &out.data[((static_cast<std::size_t>(b) * C + c) * 2 * H + 2 * h) * 2 * W];
        T* o1 = o0 + 2 * W;
        for (int w = 0; w < W; ++w) {
          o0[2 * w] = xr[w];
          o0[2 * w + 1] = xr[w];
          o1[2 * w] = xr[w];
          o1[2 * w + 1] = xr[w];
        }
      }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& gout) {
  int B = gout.shape[0], C = gout.shape[1], OH = gout.shape[2], OW = gout.shape[3];
  int H = OH / 2, W = OW / 2;
  Tensor<T> gin({B, C, H, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const T* g0 = &gout.data[((static_cast<std::size_t>(b) * C + c) * OH + 2 * h) * OW];
        const T* g1 = g0 + OW;
        T* ir = &gin.data[((static_cast<std::size_t>(b) * C + c) * H + h) * W];
        for (int w = 0; w < W; ++w)
          ir[w] = (g0[2 * w] + g0[2 * w + 1]) + (g1[2 * w] + g1[2 * w + 1]);
      }
  return gin;
}

// Channel softmax with max subtraction, one task per (batch, row).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  Tensor<T> out({B, C, H, W});
  std::size_t plane = static_cast<std::size_t>(H) * W;
  const T* xd = x.data.data();
  T* od = out.data.data();
  parallel_for(0, static_cast<std::int64_t>(B) * H, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t t = lo; t < hi; ++t) {
      int b = static_cast<int>(t / H);
      int h = static_cast<int>(t % H);
      std::size_t base = static_cast<std::size_t>(b) * C * plane +
                         static_cast<std::size_t>(h) * W;
      for (int w = 0; w < W; ++w) {
        std::size_t p = base + w;
        T m = xd[p];
        for (int c = 1; c < C; ++c) m = std::max(m, xd[p + c * plane]);
        T sum = T(0);
        for (int c = 0; c < C; ++c) {
          T e = std::exp(xd[p + c * plane] - m);
          od[p + c * plane] = e;
          sum += e;
        }
        T inv = T(1) / sum;
        for (int c = 0; c < C; ++c) od[p + c * plane] *= inv;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& gprobs) {
  int B = probs.shape[0], C = probs.shape[1], H = probs.shape[2], W = probs.shape[3];
  Tensor<T> gin({B, C, H, W});
  std::size_t plane = static_cast<std::size_t>(H) * W;
  const T* pd = probs.data.data();
  const T* gd = gprobs.data.data();
  T* od = gin.data.data();
  parallel_for(0, static_cast<std::int64_t>(B) * H, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t t = lo; t < hi; ++t) {
      int b = static_cast<int>(t / H);
      int h = static_cast<int>(t % H);
      std::size_t base = static_cast<std::size_t>(b) * C * plane +
                         static_cast<std::size_t>(h) * W;
      for (int w = 0; w < W; ++w) {
        std::size_t p = base + w;
        T dot = T(0);
        for (int c = 0; c < C; ++c) dot += gd[p + c * plane] * pd[p + c * plane];
        for (int c = 0; c < C; ++c)
          od[p + c * plane] = pd[p + c * plane] * (gd[p + c * plane] - dot);
      }
    }
  });
  return gin;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw std::runtime_error("shape mismatch in add: " + a.shape_str() + " vs " +
                             b.shape_str());
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// out = x + bn2(conv2(relu(bn1(conv1(x)))))
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  Tensor<T> pre_relu_cache;

  explicit ResidualBlock(int channels)
      : conv1(channels, channels, 3, 1, 1),
        conv2(channels, channels, 3, 1, 1),
        bn1(channels),
        bn2(channels) {}

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = bn1.forward(conv1.forward(x, train), train);
    if (train) pre_relu_cache = h;
    Tensor<T> r = relu(h);
    Tensor<T> y = bn2.forward(conv2.forward(r, train), train);
    add_inplace(y, x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gout) {
    Tensor<T> g = conv2.backward(bn2.backward(gout));
    g = relu_backward(g, pre_relu_cache);
    g = conv1.backward(bn1.backward(g));
    add_inplace(g, gout);
    return g;
  }

  void zero_grad() {
    conv1.zero_grad();
    conv2.zero_grad();
    bn1.zero_grad();
    bn2.zero_grad();
  }

  void drop_cache() {
    conv1.drop_cache();
    conv2.drop_cache();
    bn1.drop_cache();
    bn2.drop_cache();
    pre_relu_cache = Tensor<T>();
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<StateRef<T>>& states) {
    conv1.collect(prefix + ".conv1", params, states);
    bn1.collect(prefix + ".bn1", params, states);
    conv2.collect(prefix + ".conv2", params, states);
    bn2.collect(prefix + ".bn2", params, states);
  }
};

}  // namespace vncseg
