#pragma once

#include <cstring>

// Reduction helpers with a fixed lane-major accumulation order. The order is
// part of the contract: results must not depend on the worker count, so
// nothing here may be left to autovectorization of a plain accumulator loop.

namespace vncseg::detail {

#if defined(__GNUC__) && defined(__SSE2__)
#define VNCSEG_VEC 1
typedef float vf8 __attribute__((vector_size(32)));
typedef double vd4 __attribute__((vector_size(32)));

inline vf8 loadu_f8(const float* p) {
  vf8 v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
inline vd4 loadu_d4(const double* p) {
  vd4 v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
#endif

// sum_i a[i] * b[i]
inline float dot_fixed(const float* a, const float* b, int n) {
  int i = 0;
  float total = 0.0f;
#ifdef VNCSEG_VEC
  if (n >= 8) {
    vf8 acc = {0, 0, 0, 0, 0, 0, 0, 0};
    for (; i + 8 <= n; i += 8) acc += loadu_f8(a + i) * loadu_f8(b + i);
    float lanes[8];
    std::memcpy(lanes, &acc, sizeof(lanes));
    total = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
            ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  }
#endif
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

inline double dot_fixed(const double* a, const double* b, int n) {
  int i = 0;
  double total = 0.0;
#ifdef VNCSEG_VEC
  if (n >= 4) {
    vd4 acc = {0, 0, 0, 0};
    for (; i + 4 <= n; i += 4) acc += loadu_d4(a + i) * loadu_d4(b + i);
    double lanes[4];
    std::memcpy(lanes, &acc, sizeof(lanes));
    total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  }
#endif
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

inline float sum_fixed(const float* a, int n) {
  int i = 0;
  float total = 0.0f;
#ifdef VNCSEG_VEC
  if (n >= 8) {
    vf8 acc = {0, 0, 0, 0, 0, 0, 0, 0};
    for (; i + 8 <= n; i += 8) acc += loadu_f8(a + i);
    float lanes[8];
    std::memcpy(lanes, &acc, sizeof(lanes));
    total = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
            ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  }
#endif
  for (; i < n; ++i) total += a[i];
  return total;
}

inline double sum_fixed(const double* a, int n) {
  int i = 0;
  double total = 0.0;
#ifdef VNCSEG_VEC
  if (n >= 4) {
    vd4 acc = {0, 0, 0, 0};
    for (; i + 4 <= n; i += 4) acc += loadu_d4(a + i);
    double lanes[4];
    std::memcpy(lanes, &acc, sizeof(lanes));
    total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  }
#endif
  for (; i < n; ++i) total += a[i];
  return total;
}

// y[i] += alpha * x[i]; elementwise, explicitly chunked so codegen does not
// depend on buffer alignment
inline void axpy(float alpha, const float* x, float* y, int n) {
  int i = 0;
#ifdef VNCSEG_VEC
  vf8 av = {alpha, alpha, alpha, alpha, alpha, alpha, alpha, alpha};
  for (; i + 8 <= n; i += 8) {
    vf8 yv = loadu_f8(y + i);
    yv += av * loadu_f8(x + i);
    std::memcpy(y + i, &yv, sizeof(yv));
  }
#endif
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy(double alpha, const double* x, double* y, int n) {
  int i = 0;
#ifdef VNCSEG_VEC
  vd4 av = {alpha, alpha, alpha, alpha};
  for (; i + 4 <= n; i += 4) {
    vd4 yv = loadu_d4(y + i);
    yv += av * loadu_d4(x + i);
    std::memcpy(y + i, &yv, sizeof(yv));
  }
#endif
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// y[i] += a0*x0[i] + a1*x1[i] + a2*x2[i] + a3*x3[i], added in that order
inline void axpy4(float a0, float a1, float a2, float a3, const float* x0,
                  const float* x1, const float* x2, const float* x3, float* y, int n) {
  int i = 0;
#ifdef VNCSEG_VEC
  vf8 v0 = {a0, a0, a0, a0, a0, a0, a0, a0};
  vf8 v1 = {a1, a1, a1, a1, a1, a1, a1, a1};
  vf8 v2 = {a2, a2, a2, a2, a2, a2, a2, a2};
  vf8 v3 = {a3, a3, a3, a3, a3, a3, a3, a3};
  for (; i + 8 <= n; i += 8) {
    vf8 yv = loadu_f8(y + i);
    yv += v0 * loadu_f8(x0 + i);
    yv += v1 * loadu_f8(x1 + i);
    yv += v2 * loadu_f8(x2 + i);
    yv += v3 * loadu_f8(x3 + i);
    std::memcpy(y + i, &yv, sizeof(yv));
  }
#endif
  for (; i < n; ++i) {
    float v = y[i];
    v += a0 * x0[i];
    v += a1 * x1[i];
    v += a2 * x2[i];
    v += a3 * x3[i];
    y[i] = v;
  }
}

inline void axpy4(double a0, double a1, double a2, double a3, const double* x0,
                  const double* x1, const double* x2, const double* x3, double* y,
                  int n) {
  int i = 0;
#ifdef VNCSEG_VEC
  vd4 v0 = {a0, a0, a0, a0};
  vd4 v1 = {a1, a1, a1, a1};
  vd4 v2 = {a2, a2, a2, a2};
  vd4 v3 = {a3, a3, a3, a3};
  for (; i + 4 <= n; i += 4) {
    vd4 yv = loadu_d4(y + i);
    yv += v0 * loadu_d4(x0 + i);
    yv += v1 * loadu_d4(x1 + i);
    yv += v2 * loadu_d4(x2 + i);
    yv += v3 * loadu_d4(x3 + i);
    std::memcpy(y + i, &yv, sizeof(yv));
  }
#endif
  for (; i < n; ++i) {
    double v = y[i];
    v += a0 * x0[i];
    v += a1 * x1[i];
    v += a2 * x2[i];
    v += a3 * x3[i];
    y[i] = v;
  }
}

// Four dot products sharing the left operand, same accumulation scheme as
// dot_fixed per product.
inline void dot4_fixed(const float* g, const float* x0, const float* x1,
                       const float* x2, const float* x3, int n, float out[4]) {
  int i = 0;
  float t0 = 0.0f, t1 = 0.0f, t2 = 0.0f, t3 = 0.0f;
#ifdef VNCSEG_VEC
  if (n >= 8) {
    vf8 a0 = {0, 0, 0, 0, 0, 0, 0, 0}, a1 = a0, a2 = a0, a3 = a0;
    for (; i + 8 <= n; i += 8) {
      vf8 gv = loadu_f8(g + i);
      a0 += gv * loadu_f8(x0 + i);
      a1 += gv * loadu_f8(x1 + i);
      a2 += gv * loadu_f8(x2 + i);
      a3 += gv * loadu_f8(x3 + i);
    }
    float l[8];
    std::memcpy(l, &a0, sizeof(l));
    t0 = ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
    std::memcpy(l, &a1, sizeof(l));
    t1 = ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
    std::memcpy(l, &a2, sizeof(l));
    t2 = ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
    std::memcpy(l, &a3, sizeof(l));
    t3 = ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
  }
#endif
  for (; i < n; ++i) {
    float gv = g[i];
    t0 += gv * x0[i];
    t1 += gv * x1[i];
    t2 += gv * x2[i];
    t3 += gv * x3[i];
  }
  out[0] = t0;
  out[1] = t1;
  out[2] = t2;
  out[3] = t3;
}

inline void dot4_fixed(const double* g, const double* x0, const double* x1,
                       const double* x2, const double* x3, int n, double out[4]) {
  int i = 0;
  double t0 = 0.0, t1 = 0.0, t2 = 0.0, t3 = 0.0;
#ifdef VNCSEG_VEC
  if (n >= 4) {
    vd4 a0 = {0, 0, 0, 0}, a1 = a0, a2 = a0, a3 = a0;
    for (; i + 4 <= n; i += 4) {
      vd4 gv = loadu_d4(g + i);
      a0 += gv * loadu_d4(x0 + i);
      a1 += gv * loadu_d4(x1 + i);
      a2 += gv * loadu_d4(x2 + i);
      a3 += gv * loadu_d4(x3 + i);
    }
    double l[4];
    std::memcpy(l, &a0, sizeof(l));
    t0 = (l[0] + l[1]) + (l[2] + l[3]);
    std::memcpy(l, &a1, sizeof(l));
    t1 = (l[0] + l[1]) + (l[2] + l[3]);
    std::memcpy(l, &a2, sizeof(l));
    t2 = (l[0] + l[1]) + (l[2] + l[3]);
    std::memcpy(l, &a3, sizeof(l));
    t3 = (l[0] + l[1]) + (l[2] + l[3]);
  }
#endif
  for (; i < n; ++i) {
    double gv = g[i];
    t0 += gv * x0[i];
    t1 += gv * x1[i];
    t2 += gv * x2[i];
    t3 += gv * x3[i];
  }
  out[0] = t0;
  out[1] = t1;
  out[2] = t2;
  out[3] = t3;
}

// double-precision sums over float or double input, for batch statistics
template <typename T>
inline double sum_as_double(const T* a, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += static_cast<double>(a[i]);
  return total;
}

template <typename T>
inline double sumsq_diff_as_double(const T* a, double mean, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = static_cast<double>(a[i]) - mean;
    total += d * d;
  }
  return total;
}

template <typename T>
inline double dot_as_double(const T* a, const T* b, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return total;
}

}  // namespace vncseg::detail
