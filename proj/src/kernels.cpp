#include "safl/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace safl::kernels {

#ifdef SAFL_HAVE_AVX2_TU
const Ops* avx2_table_impl();
#endif

const Ops* avx2_ops() {
#ifdef SAFL_HAVE_AVX2_TU
#if defined(__x86_64__) || defined(__i386__)
  static const Ops* table = [] {
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
      return avx2_table_impl();
    return static_cast<const Ops*>(nullptr);
  }();
  return table;
#else
  return nullptr;
#endif
#else
  return nullptr;
#endif
}

namespace {

const Ops* pick_default() {
  if (const char* env = std::getenv("SAFL_KERNELS")) {
    std::string v(env);
    if (v == "scalar") return &scalar_ops();
    if (v == "avx2") {
      const Ops* t = avx2_ops();
      if (!t) throw std::runtime_error("SAFL_KERNELS=avx2 but AVX2 kernels are unavailable on this machine");
      return t;
    }
    if (!v.empty())
      throw std::runtime_error("unknown SAFL_KERNELS value: " + v);
  }
  if (const Ops* t = avx2_ops()) return t;
  return &scalar_ops();
}

const Ops*& active_slot() {
  static const Ops* slot = pick_default();
  return slot;
}

}  // namespace

const Ops& active() { return *active_slot(); }

void set_backend(Backend b) {
  if (b == Backend::Scalar) {
    active_slot() = &scalar_ops();
    return;
  }
  const Ops* t = avx2_ops();
  if (!t) throw std::runtime_error("AVX2 kernels are unavailable on this machine");
  active_slot() = t;
}

Backend active_backend() {
  return active_slot() == &scalar_ops() ? Backend::Scalar : Backend::Avx2;
}

std::string backend_name() { return active_slot()->name; }

}  // namespace safl::kernels
