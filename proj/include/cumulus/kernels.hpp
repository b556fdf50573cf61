#pragma once

#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cumulus/graph.hpp"

namespace cumulus::kernels {

// Geometry is resolved once per node; kernels below work on raw NHWC buffers
// (batch 1). Weight layout is [kh, kw, in_c, out_c] for conv and transposed
// conv, [in, units] for dense.
//
// Per output element the accumulation order is fixed: kernel row-major
// (kh, kw), then input channel; bias is added last. Padding taps are skipped,
// never added as zeros. The parallel variants distribute whole output
// elements across threads and keep that inner order, so serial and parallel
// results are bitwise identical for any worker count.

struct ConvGeom {
  int64_t in_h, in_w, in_c;
  int64_t out_h, out_w, out_c;
  int kh, kw, stride;
  int64_t pad_top, pad_left;
};

ConvGeom make_conv_geom(int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c,
                        int kh, int kw, int stride, Padding padding);

struct TConvGeom {
  int64_t in_h, in_w, in_c;
  int64_t out_h, out_w, out_c;
  int kh, kw, stride;
};

TConvGeom make_tconv_geom(int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c,
                          int kh, int kw, int stride);

struct PoolGeom {
  int64_t in_h, in_w, c;
  int64_t out_h, out_w;
  int ph, pw, sh, sw;
  int64_t pad_top, pad_left;
};

PoolGeom make_pool_geom(int64_t in_h, int64_t in_w, int64_t c, int ph, int pw, int sh,
                        int sw, Padding padding);

namespace ref {

// Straightforward nested loops; the reference the OpenMP kernels are tested
// against.

template <typename T>
void conv2d(const ConvGeom& g, const T* x, const T* w, const T* b, T* y) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t oc = 0; oc < g.out_c; ++oc) {
        T acc = T(0);
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t ih = oh * g.stride - g.pad_top + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t iw = ow * g.stride - g.pad_left + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            const T* xp = x + (ih * g.in_w + iw) * g.in_c;
            const T* wp = w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c + oc;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              acc += xp[ic] * wp[ic * g.out_c];
            }
          }
        }
        y[(oh * g.out_w + ow) * g.out_c + oc] = acc + b[oc];
      }
    }
  }
}

template <typename T>
void tconv2d(const TConvGeom& g, const T* x, const T* w, const T* b, T* y) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t oc = 0; oc < g.out_c; ++oc) {
        T acc = T(0);
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t num_h = oh - ki;
          if (num_h < 0 || num_h % g.stride) continue;
          int64_t ih = num_h / g.stride;
          if (ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t num_w = ow - kj;
            if (num_w < 0 || num_w % g.stride) continue;
            int64_t iw = num_w / g.stride;
            if (iw >= g.in_w) continue;
            const T* xp = x + (ih * g.in_w + iw) * g.in_c;
            const T* wp = w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c + oc;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              acc += xp[ic] * wp[ic * g.out_c];
            }
          }
        }
        y[(oh * g.out_w + ow) * g.out_c + oc] = acc + b[oc];
      }
    }
  }
}

// Max over each window, scanned row-major; argmax (flat input index of the
// first maximum) feeds the pooling backward pass when requested.
template <typename T>
void maxpool2d(const PoolGeom& g, const T* x, T* y, int64_t* argmax) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t c = 0; c < g.c; ++c) {
        bool first = true;
        T best = T(0);
        int64_t best_idx = -1;
        for (int pi = 0; pi < g.ph; ++pi) {
          int64_t ih = oh * g.sh - g.pad_top + pi;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int pj = 0; pj < g.pw; ++pj) {
            int64_t iw = ow * g.sw - g.pad_left + pj;
            if (iw < 0 || iw >= g.in_w) continue;
            int64_t idx = (ih * g.in_w + iw) * g.c + c;
            if (first || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
              first = false;
            }
          }
        }
        y[(oh * g.out_w + ow) * g.c + c] = best;
        if (argmax) argmax[(oh * g.out_w + ow) * g.c + c] = best_idx;
      }
    }
  }
}

template <typename T>
void dense(int64_t in, int64_t units, const T* x, const T* w, const T* b, T* y) {
  for (int64_t u = 0; u < units; ++u) {
    T acc = T(0);
    for (int64_t i = 0; i < in; ++i) acc += x[i] * w[i * units + u];
    y[u] = acc + b[u];
  }
}

// int8 operands, int32 accumulators, bias added in int32 (requantization is
// the caller's job).
void conv2d_i8(const ConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
               int32_t* y);
void tconv2d_i8(const TConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
                int32_t* y);
void dense_i8(int64_t in, int64_t units, const int8_t* x, const int8_t* w,
              const int32_t* b, int32_t* y);
void maxpool2d_i8(const PoolGeom& g, const int8_t* x, int8_t* y);

}  // namespace ref

namespace par {

// OpenMP variants: one output row per iteration, per-position accumulator
// vector over out_c so the tap loop vectorizes across channels. Falls back to
// the reference kernels when built without OpenMP.

template <typename T>
void conv2d(const ConvGeom& g, const T* x, const T* w, const T* b, T* y) {
#ifndef _OPENMP
  ref::conv2d(g, x, w, b, y);
#else
#pragma omp parallel
  {
    std::vector<T> acc(static_cast<size_t>(g.out_c));
#pragma omp for
    for (int64_t oh = 0; oh < g.out_h; ++oh) {
      for (int64_t ow = 0; ow < g.out_w; ++ow) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t ih = oh * g.stride - g.pad_top + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t iw = ow * g.stride - g.pad_left + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            const T* xp = x + (ih * g.in_w + iw) * g.in_c;
            const T* wrow = w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              T xv = xp[ic];
              const T* wp = wrow + ic * g.out_c;
              for (int64_t oc = 0; oc < g.out_c; ++oc) acc[static_cast<size_t>(oc)] += xv * wp[oc];
            }
          }
        }
        T* yp = y + (oh * g.out_w + ow) * g.out_c;
        for (int64_t oc = 0; oc < g.out_c; ++oc) yp[oc] = acc[static_cast<size_t>(oc)] + b[oc];
      }
    }
  }
#endif
}

template <typename T>
void tconv2d(const TConvGeom& g, const T* x, const T* w, const T* b, T* y) {
#ifndef _OPENMP
  ref::tconv2d(g, x, w, b, y);
#else
#pragma omp parallel
  {
    std::vector<T> acc(static_cast<size_t>(g.out_c));
#pragma omp for
    for (int64_t oh = 0; oh < g.out_h; ++oh) {
      for (int64_t ow = 0; ow < g.out_w; ++ow) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t num_h = oh - ki;
          if (num_h < 0 || num_h % g.stride) continue;
          int64_t ih = num_h / g.stride;
          if (ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t num_w = ow - kj;
            if (num_w < 0 || num_w % g.stride) continue;
            int64_t iw = num_w / g.stride;
            if (iw >= g.in_w) continue;
            const T* xp = x + (ih * g.in_w + iw) * g.in_c;
            const T* wrow = w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              T xv = xp[ic];
              const T* wp = wrow + ic * g.out_c;
              for (int64_t oc = 0; oc < g.out_c; ++oc) acc[static_cast<size_t>(oc)] += xv * wp[oc];
            }
          }
        }
        T* yp = y + (oh * g.out_w + ow) * g.out_c;
        for (int64_t oc = 0; oc < g.out_c; ++oc) yp[oc] = acc[static_cast<size_t>(oc)] + b[oc];
      }
    }
  }
#endif
}

template <typename T>
void maxpool2d(const PoolGeom& g, const T* x, T* y, int64_t* argmax) {
#ifndef _OPENMP
  ref::maxpool2d(g, x, y, argmax);
#else
#pragma omp parallel for
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t c = 0; c < g.c; ++c) {
        bool first = true;
        T best = T(0);
        int64_t best_idx = -1;
        for (int pi = 0; pi < g.ph; ++pi) {
          int64_t ih = oh * g.sh - g.pad_top + pi;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int pj = 0; pj < g.pw; ++pj) {
            int64_t iw = ow * g.sw - g.pad_left + pj;
            if (iw < 0 || iw >= g.in_w) continue;
            int64_t idx = (ih * g.in_w + iw) * g.c + c;
            if (first || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
              first = false;
            }
          }
        }
        y[(oh * g.out_w + ow) * g.c + c] = best;
        if (argmax) argmax[(oh * g.out_w + ow) * g.c + c] = best_idx;
      }
    }
  }
#endif
}

template <typename T>
void dense(int64_t in, int64_t units, const T* x, const T* w, const T* b, T* y) {
#ifndef _OPENMP
  ref::dense(in, units, x, w, b, y);
#else
#pragma omp parallel for
  for (int64_t u = 0; u < units; ++u) {
    T acc = T(0);
    for (int64_t i = 0; i < in; ++i) acc += x[i] * w[i * units + u];
    y[u] = acc + b[u];
  }
#endif
}

void conv2d_i8(const ConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
               int32_t* y);
void tconv2d_i8(const TConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
                int32_t* y);
void dense_i8(int64_t in, int64_t units, const int8_t* x, const int8_t* w,
              const int32_t* b, int32_t* y);
void maxpool2d_i8(const PoolGeom& g, const int8_t* x, int8_t* y);

}  // namespace par

}  // namespace cumulus::kernels
