#include "kernels_body.hpp"

namespace safl::kernels {
namespace {

struct ScalarPrim {
  static void axpy(size_t n, double a, const double* x, double* y) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
  }
  static double dot(size_t n, const double* x, const double* y) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
  }
  static double sum(size_t n, const double* x) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  static void affine(size_t n, double a, const double* x, double c,
                     double* y) {
    for (size_t i = 0; i < n; ++i) y[i] = a * x[i] + c;
  }
  static void triad(size_t n, double a, const double* p, double b,
                    const double* q, double c, double* y) {
    for (size_t i = 0; i < n; ++i) y[i] = a * p[i] + b * q[i] + c;
  }
  static void relu(size_t n, const double* x, double* y) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  static void relu_bwd(size_t n, const double* x, const double* dy,
                       double* dx) {
    for (size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  }
};

const Ops kTable = detail::make_ops<ScalarPrim>("scalar");

}  // namespace

const Ops& scalar_ops() { return kTable; }

}  // namespace safl::kernels
