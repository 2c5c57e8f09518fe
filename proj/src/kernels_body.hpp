#pragma once

// Whole-op kernel bodies, shared between backend translation units. Each TU
// instantiates these templates with its own row primitives so the compiler
// vectorizes the inner loops with that TU's target flags.

#include <algorithm>
#include <cstddef>

#include "safl/kernels.hpp"

namespace safl::kernels::detail {

template <class P>
void conv2d_forward_t(const ConvShape& s, const double* x, const double* w,
                      const double* b, double* y) {
  const int N = s.batch, C = s.in_c, H = s.in_h, W = s.in_w;
  const int O = s.out_c, KH = s.k_h, KW = s.k_w, ST = s.stride, PD = s.pad;
  const int Ho = s.out_h(), Wo = s.out_w();
  const size_t yplane = (size_t)Ho * Wo, xplane = (size_t)H * W;

  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc) {
      double* yp = y + ((size_t)n * O + oc) * yplane;
      const double bv = b ? b[oc] : 0.0;
      std::fill(yp, yp + yplane, bv);
    }

  if (ST == 1) {
    // row form: each (kh,kw) tap contributes a shifted-row axpy
    for (int n = 0; n < N; ++n)
      for (int oc = 0; oc < O; ++oc) {
        double* yp = y + ((size_t)n * O + oc) * yplane;
        for (int ic = 0; ic < C; ++ic) {
          const double* xp = x + ((size_t)n * C + ic) * xplane;
          const double* wk = w + ((size_t)oc * C + ic) * KH * KW;
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const double wv = wk[kh * KW + kw];
              if (wv == 0.0) continue;  // masked channels carry zero weights
              const int ow0 = std::max(0, PD - kw);
              const int ow1 = std::min(Wo, W + PD - kw);
              if (ow1 <= ow0) continue;
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh - PD + kh;
                if (ih < 0 || ih >= H) continue;
                P::axpy(ow1 - ow0, wv, xp + (size_t)ih * W + (ow0 - PD + kw),
                        yp + (size_t)oh * Wo + ow0);
              }
            }
        }
      }
    return;
  }

  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc) {
      double* yp = y + ((size_t)n * O + oc) * yplane;
      for (int ic = 0; ic < C; ++ic) {
        const double* xp = x + ((size_t)n * C + ic) * xplane;
        const double* wk = w + ((size_t)oc * C + ic) * KH * KW;
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            double acc = 0.0;
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = oh * ST - PD + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = ow * ST - PD + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xp[(size_t)ih * W + iw] * wk[kh * KW + kw];
              }
            }
            yp[(size_t)oh * Wo + ow] += acc;
          }
      }
    }
}

template <class P>
void conv2d_backward_input_t(const ConvShape& s, const double* dy,
                             const double* w, double* dx) {
  const int N = s.batch, C = s.in_c, H = s.in_h, W = s.in_w;
  const int O = s.out_c, KH = s.k_h, KW = s.k_w, ST = s.stride, PD = s.pad;
  const int Ho = s.out_h(), Wo = s.out_w();
  const size_t yplane = (size_t)Ho * Wo, xplane = (size_t)H * W;

  if (ST == 1) {
    for (int n = 0; n < N; ++n)
      for (int ic = 0; ic < C; ++ic) {
        double* dxp = dx + ((size_t)n * C + ic) * xplane;
        for (int oc = 0; oc < O; ++oc) {
          const double* dyp = dy + ((size_t)n * O + oc) * yplane;
          const double* wk = w + ((size_t)oc * C + ic) * KH * KW;
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const double wv = wk[kh * KW + kw];
              if (wv == 0.0) continue;
              const int ow0 = std::max(0, PD - kw);
              const int ow1 = std::min(Wo, W + PD - kw);
              if (ow1 <= ow0) continue;
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh - PD + kh;
                if (ih < 0 || ih >= H) continue;
                P::axpy(ow1 - ow0, wv, dyp + (size_t)oh * Wo + ow0,
                        dxp + (size_t)ih * W + (ow0 - PD + kw));
              }
            }
        }
      }
    return;
  }

  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc) {
      const double* dyp = dy + ((size_t)n * O + oc) * yplane;
      for (int ic = 0; ic < C; ++ic) {
        double* dxp = dx + ((size_t)n * C + ic) * xplane;
        const double* wk = w + ((size_t)oc * C + ic) * KH * KW;
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            const double g = dyp[(size_t)oh * Wo + ow];
            if (g == 0.0) continue;
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = oh * ST - PD + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = ow * ST - PD + kw;
                if (iw < 0 || iw >= W) continue;
                dxp[(size_t)ih * W + iw] += g * wk[kh * KW + kw];
              }
            }
          }
      }
    }
}

template <class P>
void conv2d_backward_params_t(const ConvShape& s, const double* x,
                              const double* dy, double* dw, double* db) {
  const int N = s.batch, C = s.in_c, H = s.in_h, W = s.in_w;
  const int O = s.out_c, KH = s.k_h, KW = s.k_w, ST = s.stride, PD = s.pad;
  const int Ho = s.out_h(), Wo = s.out_w();
  const size_t yplane = (size_t)Ho * Wo, xplane = (size_t)H * W;

  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc)
      db[oc] += P::sum(yplane, dy + ((size_t)n * O + oc) * yplane);

  if (ST == 1) {
    for (int n = 0; n < N; ++n)
      for (int oc = 0; oc < O; ++oc) {
        const double* dyp = dy + ((size_t)n * O + oc) * yplane;
        for (int ic = 0; ic < C; ++ic) {
          const double* xp = x + ((size_t)n * C + ic) * xplane;
          double* wk = dw + ((size_t)oc * C + ic) * KH * KW;
          for (int kh = 0; kh < KH; ++kh)
            for (int kw = 0; kw < KW; ++kw) {
              const int ow0 = std::max(0, PD - kw);
              const int ow1 = std::min(Wo, W + PD - kw);
              if (ow1 <= ow0) continue;
              double acc = 0.0;
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh - PD + kh;
                if (ih < 0 || ih >= H) continue;
                acc += P::dot(ow1 - ow0, dyp + (size_t)oh * Wo + ow0,
                              xp + (size_t)ih * W + (ow0 - PD + kw));
              }
              wk[kh * KW + kw] += acc;
            }
        }
      }
    return;
  }

  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < O; ++oc) {
      const double* dyp = dy + ((size_t)n * O + oc) * yplane;
      for (int ic = 0; ic < C; ++ic) {
        const double* xp = x + ((size_t)n * C + ic) * xplane;
        double* wk = dw + ((size_t)oc * C + ic) * KH * KW;
        for (int oh = 0; oh < Ho; ++oh)
          for (int ow = 0; ow < Wo; ++ow) {
            const double g = dyp[(size_t)oh * Wo + ow];
            if (g == 0.0) continue;
            for (int kh = 0; kh < KH; ++kh) {
              const int ih = oh * ST - PD + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < KW; ++kw) {
                const int iw = ow * ST - PD + kw;
                if (iw < 0 || iw >= W) continue;
                wk[kh * KW + kw] += g * xp[(size_t)ih * W + iw];
              }
            }
          }
      }
    }
}

template <class P>
void linear_forward_t(int n, int in_f, int out_f, const double* x,
                      const double* w, const double* b, double* y) {
  for (int i = 0; i < n; ++i) {
    const double* xr = x + (size_t)i * in_f;
    double* yr = y + (size_t)i * out_f;
    for (int o = 0; o < out_f; ++o)
      yr[o] = P::dot(in_f, xr, w + (size_t)o * in_f) + (b ? b[o] : 0.0);
  }
}

template <class P>
void linear_backward_input_t(int n, int in_f, int out_f, const double* dy,
                             const double* w, double* dx) {
  for (int i = 0; i < n; ++i) {
    const double* dyr = dy + (size_t)i * out_f;
    double* dxr = dx + (size_t)i * in_f;
    for (int o = 0; o < out_f; ++o) {
      const double g = dyr[o];
      if (g == 0.0) continue;
      P::axpy(in_f, g, w + (size_t)o * in_f, dxr);
    }
  }
}

template <class P>
void linear_backward_params_t(int n, int in_f, int out_f, const double* x,
                              const double* dy, double* dw, double* db) {
  for (int i = 0; i < n; ++i) {
    const double* xr = x + (size_t)i * in_f;
    const double* dyr = dy + (size_t)i * out_f;
    for (int o = 0; o < out_f; ++o) {
      const double g = dyr[o];
      db[o] += g;
      if (g == 0.0) continue;
      P::axpy(in_f, g, xr, dw + (size_t)o * in_f);
    }
  }
}

template <class P>
const Ops make_ops(const char* name) {
  Ops t;
  t.name = name;
  t.conv2d_forward = &conv2d_forward_t<P>;
  t.conv2d_backward_input = &conv2d_backward_input_t<P>;
  t.conv2d_backward_params = &conv2d_backward_params_t<P>;
  t.linear_forward = &linear_forward_t<P>;
  t.linear_backward_input = &linear_backward_input_t<P>;
  t.linear_backward_params = &linear_backward_params_t<P>;
  t.relu_forward = &P::relu;
  t.relu_backward = &P::relu_bwd;
  t.axpy = &P::axpy;
  t.dot = &P::dot;
  t.reduce_sum = &P::sum;
  t.affine = &P::affine;
  t.triad = &P::triad;
  return t;
}

}  // namespace safl::kernels::detail
