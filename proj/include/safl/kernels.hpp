#pragma once

#include <cstddef>
#include <string>

namespace safl::kernels {

enum class Backend { Scalar, Avx2 };

struct ConvShape {
  int batch = 0;
  int in_c = 0;
  int in_h = 0;
  int in_w = 0;
  int out_c = 0;
  int k_h = 0;
  int k_w = 0;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - k_h) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k_w) / stride + 1; }
};

// One table of kernel entry points per backend. All pointers are plain C-ish
// functions over contiguous double buffers so the same call sites drive both
// the scalar reference and the vectorized variants.
struct Ops {
  const char* name;

  // y[NCHW out] = conv(x[NCHW in], w[out_c,in_c,kh,kw]) + b[out_c]
  void (*conv2d_forward)(const ConvShape& s, const double* x, const double* w,
                         const double* b, double* y);
  // dx += conv_backward wrt input; dx must be pre-zeroed by the caller
  void (*conv2d_backward_input)(const ConvShape& s, const double* dy,
                                const double* w, double* dx);
  // dw,db accumulated over the whole batch; caller pre-zeroes
  void (*conv2d_backward_params)(const ConvShape& s, const double* x,
                                 const double* dy, double* dw, double* db);

  // y[n,o] = x[n,i] * w[o,i] + b[o]
  void (*linear_forward)(int n, int in_f, int out_f, const double* x,
                         const double* w, const double* b, double* y);
  void (*linear_backward_input)(int n, int in_f, int out_f, const double* dy,
                                const double* w, double* dx);
  void (*linear_backward_params)(int n, int in_f, int out_f, const double* x,
                                 const double* dy, double* dw, double* db);

  void (*relu_forward)(size_t n, const double* x, double* y);
  void (*relu_backward)(size_t n, const double* x, const double* dy,
                        double* dx);

  // y += a*x
  void (*axpy)(size_t n, double a, const double* x, double* y);
  double (*dot)(size_t n, const double* x, const double* y);
  double (*reduce_sum)(size_t n, const double* x);
  // y = a*x + c
  void (*affine)(size_t n, double a, const double* x, double c, double* y);
  // y = a*p + b*q + c
  void (*triad)(size_t n, double a, const double* p, double b, const double* q,
                double c, double* y);
};

const Ops& scalar_ops();
// nullptr when the build or the CPU lacks AVX2 support
const Ops* avx2_ops();

// Active table: AVX2 when available unless overridden. SAFL_KERNELS=scalar
// or SAFL_KERNELS=avx2 forces a backend (the latter throws if unsupported).
const Ops& active();
void set_backend(Backend b);
Backend active_backend();
std::string backend_name();

}  // namespace safl::kernels
