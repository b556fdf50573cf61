#include "cumulus/kernels.hpp"

#include <algorithm>

#include "cumulus/errors.hpp"

namespace cumulus::kernels {

namespace {

int64_t out_extent(int64_t in, int k, int stride, Padding pad) {
  if (pad == Padding::Same) return (in + stride - 1) / stride;
  if (in < k) throw ShapeError("window larger than input extent");
  return (in - k) / stride + 1;
}

int64_t pad_low(int64_t in, int64_t out, int k, int stride, Padding pad) {
  if (pad == Padding::Valid) return 0;
  int64_t total = std::max<int64_t>(0, (out - 1) * stride + k - in);
  return total / 2;  // extra padding lands on the high side
}

}  // namespace

ConvGeom make_conv_geom(int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c,
                        int kh, int kw, int stride, Padding padding) {
  ConvGeom g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.out_c = out_c;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.out_h = out_extent(in_h, kh, stride, padding);
  g.out_w = out_extent(in_w, kw, stride, padding);
  g.pad_top = pad_low(in_h, g.out_h, kh, stride, padding);
  g.pad_left = pad_low(in_w, g.out_w, kw, stride, padding);
  return g;
}

TConvGeom make_tconv_geom(int64_t in_h, int64_t in_w, int64_t in_c, int64_t out_c,
                          int kh, int kw, int stride) {
  TConvGeom g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.out_c = out_c;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.out_h = (in_h - 1) * stride + kh;
  g.out_w = (in_w - 1) * stride + kw;
  return g;
}

PoolGeom make_pool_geom(int64_t in_h, int64_t in_w, int64_t c, int ph, int pw, int sh,
                        int sw, Padding padding) {
  PoolGeom g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.c = c;
  g.ph = ph;
  g.pw = pw;
  g.sh = sh;
  g.sw = sw;
  g.out_h = out_extent(in_h, ph, sh, padding);
  g.out_w = out_extent(in_w, pw, sw, padding);
  g.pad_top = pad_low(in_h, g.out_h, ph, sh, padding);
  g.pad_left = pad_low(in_w, g.out_w, pw, sw, padding);
  return g;
}

namespace ref {

void conv2d_i8(const ConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
               int32_t* y) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t oc = 0; oc < g.out_c; ++oc) {
        int32_t acc = 0;
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t ih = oh * g.stride - g.pad_top + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t iw = ow * g.stride - g.pad_left + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            const int8_t* xp = x + (ih * g.in_w + iw) * g.in_c;
            const int8_t* wp =
                w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c + oc;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              acc += static_cast<int32_t>(xp[ic]) * static_cast<int32_t>(wp[ic * g.out_c]);
            }
          }
        }
        y[(oh * g.out_w + ow) * g.out_c + oc] = acc + b[oc];
      }
    }
  }
}

void tconv2d_i8(const TConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
                int32_t* y) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t oc = 0; oc < g.out_c; ++oc) {
        int32_t acc = 0;
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
            const int8_t* xp = x + (ih * g.in_w + iw) * g.in_c;
            const int8_t* wp =
                w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c + oc;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              acc += static_cast<int32_t>(xp[ic]) * static_cast<int32_t>(wp[ic * g.out_c]);
            }
          }
        }
        y[(oh * g.out_w + ow) * g.out_c + oc] = acc + b[oc];
      }
    }
  }
}

void dense_i8(int64_t in, int64_t units, const int8_t* x, const int8_t* w,
              const int32_t* b, int32_t* y) {
  for (int64_t u = 0; u < units; ++u) {
    int32_t acc = 0;
    for (int64_t i = 0; i < in; ++i) {
      acc += static_cast<int32_t>(x[i]) * static_cast<int32_t>(w[i * units + u]);
    }
    y[u] = acc + b[u];
  }
}

void maxpool2d_i8(const PoolGeom& g, const int8_t* x, int8_t* y) {
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t c = 0; c < g.c; ++c) {
        bool first = true;
        int8_t best = 0;
        for (int pi = 0; pi < g.ph; ++pi) {
          int64_t ih = oh * g.sh - g.pad_top + pi;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int pj = 0; pj < g.pw; ++pj) {
            int64_t iw = ow * g.sw - g.pad_left + pj;
            if (iw < 0 || iw >= g.in_w) continue;
            int8_t v = x[(ih * g.in_w + iw) * g.c + c];
            if (first || v > best) {
              best = v;
              first = false;
            }
          }
        }
        y[(oh * g.out_w + ow) * g.c + c] = best;
      }
    }
  }
}

}  // namespace ref

namespace par {

void conv2d_i8(const ConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
               int32_t* y) {
#ifndef _OPENMP
  ref::conv2d_i8(g, x, w, b, y);
#else
#pragma omp parallel
  {
    std::vector<int32_t> acc(static_cast<size_t>(g.out_c));
#pragma omp for
    for (int64_t oh = 0; oh < g.out_h; ++oh) {
      for (int64_t ow = 0; ow < g.out_w; ++ow) {
        std::fill(acc.begin(), acc.end(), 0);
        for (int ki = 0; ki < g.kh; ++ki) {
          int64_t ih = oh * g.stride - g.pad_top + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int kj = 0; kj < g.kw; ++kj) {
            int64_t iw = ow * g.stride - g.pad_left + kj;
            if (iw < 0 || iw >= g.in_w) continue;
            const int8_t* xp = x + (ih * g.in_w + iw) * g.in_c;
            const int8_t* wrow =
                w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              int32_t xv = xp[ic];
              const int8_t* wp = wrow + ic * g.out_c;
              for (int64_t oc = 0; oc < g.out_c; ++oc) {
                acc[static_cast<size_t>(oc)] += xv * static_cast<int32_t>(wp[oc]);
              }
            }
          }
        }
        int32_t* yp = y + (oh * g.out_w + ow) * g.out_c;
        for (int64_t oc = 0; oc < g.out_c; ++oc) yp[oc] = acc[static_cast<size_t>(oc)] + b[oc];
      }
    }
  }
#endif
}

void tconv2d_i8(const TConvGeom& g, const int8_t* x, const int8_t* w, const int32_t* b,
                int32_t* y) {
#ifndef _OPENMP
  ref::tconv2d_i8(g, x, w, b, y);
#else
#pragma omp parallel for
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t oc = 0; oc < g.out_c; ++oc) {
        int32_t acc = 0;
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
            const int8_t* xp = x + (ih * g.in_w + iw) * g.in_c;
            const int8_t* wp =
                w + ((static_cast<int64_t>(ki) * g.kw + kj) * g.in_c) * g.out_c + oc;
            for (int64_t ic = 0; ic < g.in_c; ++ic) {
              acc += static_cast<int32_t>(xp[ic]) * static_cast<int32_t>(wp[ic * g.out_c]);
            }
          }
        }
        y[(oh * g.out_w + ow) * g.out_c + oc] = acc + b[oc];
      }
    }
  }
#endif
}

void dense_i8(int64_t in, int64_t units, const int8_t* x, const int8_t* w,
              const int32_t* b, int32_t* y) {
#ifndef _OPENMP
  ref::dense_i8(in, units, x, w, b, y);
#else
#pragma omp parallel for
  for (int64_t u = 0; u < units; ++u) {
    int32_t acc = 0;
    for (int64_t i = 0; i < in; ++i) {
      acc += static_cast<int32_t>(x[i]) * static_cast<int32_t>(w[i * units + u]);
    }
    y[u] = acc + b[u];
  }
#endif
}

void maxpool2d_i8(const PoolGeom& g, const int8_t* x, int8_t* y) {
#ifndef _OPENMP
  ref::maxpool2d_i8(g, x, y);
#else
#pragma omp parallel for
  for (int64_t oh = 0; oh < g.out_h; ++oh) {
    for (int64_t ow = 0; ow < g.out_w; ++ow) {
      for (int64_t c = 0; c < g.c; ++c) {
        bool first = true;
        int8_t best = 0;
        for (int pi = 0; pi < g.ph; ++pi) {
          int64_t ih = oh * g.sh - g.pad_top + pi;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int pj = 0; pj < g.pw; ++pj) {
            int64_t iw = ow * g.sw - g.pad_left + pj;
            if (iw < 0 || iw >= g.in_w) continue;
            int8_t v = x[(ih * g.in_w + iw) * g.c + c];
            if (first || v > best) {
              best = v;
              first = false;
            }
          }
        }
        y[(oh * g.out_w + ow) * g.c + c] = best;
      }
    }
  }
#endif
}

}  // namespace par

}  // namespace cumulus::kernels
