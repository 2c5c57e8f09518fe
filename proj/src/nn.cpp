#include "safl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "safl/kernels.hpp"
#include "safl/rng.hpp"

namespace safl::nn {

namespace K = safl::kernels;

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::Linear: return "Linear";
  }
  return "?";
}

void Layer::drop_cache() {
  has_cache = false;
  cache_x = Tensor();
  cache_xhat = Tensor();
  cache_mean.clear();
  cache_invstd.clear();
  cache_argmax.clear();
  cache_xshape.clear();
}

void drop_caches(Model& m) {
  for (auto& l : m.layers) l.drop_cache();
}

void clear_grads(Model& m) {
  for (auto& l : m.layers) {
    l.weight.clear_grad();
    l.bias.clear_grad();
  }
}

namespace {

Layer make_conv(int in_c, int out_c, int k, int stride, int pad,
                std::mt19937_64& rng) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.in_c = in_c;
  l.out_c = out_c;
  l.kernel = k;
  l.stride = stride;
  l.pad = pad;
  l.weight = Tensor({out_c, in_c, k, k});
  l.bias = Tensor({out_c});
  const double fan_in = static_cast<double>(in_c) * k * k;
  std::uniform_real_distribution<double> wd(-std::sqrt(6.0 / fan_in),
                                            std::sqrt(6.0 / fan_in));
  for (auto& v : l.weight.values) v = wd(rng);
  std::uniform_real_distribution<double> bd(-1.0 / std::sqrt(fan_in),
                                            1.0 / std::sqrt(fan_in));
  for (auto& v : l.bias.values) v = bd(rng);
  return l;
}

Layer make_bn(int channels, std::mt19937_64& rng) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.in_c = channels;
  l.out_c = channels;
  l.weight = Tensor({channels});
  l.bias = Tensor({channels});
  l.running_mean = Tensor({channels});
  l.running_var = Tensor({channels});
  // small jitter keeps |gamma| ranks distinct from the start
  std::uniform_real_distribution<double> gd(-0.01, 0.01);
  for (auto& v : l.weight.values) v = 1.0 + gd(rng);
  std::fill(l.running_var.values.begin(), l.running_var.values.end(), 1.0);
  return l;
}

Layer make_relu() {
  Layer l;
  l.kind = LayerKind::ReLU;
  return l;
}

Layer make_pool(int k, int stride) {
  Layer l;
  l.kind = LayerKind::MaxPool;
  l.kernel = k;
  l.stride = stride;
  return l;
}

Layer make_linear(int in_f, int out_f, std::mt19937_64& rng) {
  Layer l;
  l.kind = LayerKind::Linear;
  l.in_c = in_f;
  l.out_c = out_f;
  l.weight = Tensor({out_f, in_f});
  l.bias = Tensor({out_f});
  const double fan_in = in_f;
  std::uniform_real_distribution<double> wd(-std::sqrt(6.0 / fan_in),
                                            std::sqrt(6.0 / fan_in));
  for (auto& v : l.weight.values) v = wd(rng);
  std::uniform_real_distribution<double> bd(-1.0 / std::sqrt(fan_in),
                                            1.0 / std::sqrt(fan_in));
  for (auto& v : l.bias.values) v = bd(rng);
  return l;
}

struct ArchDef {
  int in_c, in_h, in_w;
  std::vector<int> conv_widths;
  bool with_bn;
};

ArchDef arch_def(const std::string& id) {
  // every conv is 3x3 stride 1 pad 1, every pool is 2x2 stride 2
  if (id == "mnist_cnn") return {1, 28, 28, {16, 32}, true};
  if (id == "mnist_cnn_nobn") return {1, 28, 28, {16, 32}, false};
  if (id == "cifar_cnn") return {3, 32, 32, {32, 64, 128, 128}, true};
  if (id == "cifar_cnn_nobn") return {3, 32, 32, {32, 64, 128, 128}, false};
  if (id == "synth_cnn") return {1, 8, 8, {8, 8}, true};
  if (id == "synth_cnn_nobn") return {1, 8, 8, {8, 8}, false};
  throw std::invalid_argument("unknown arch_id: " + id);
}

Model build_cnn(const std::string& arch_id, const ArchDef& def,
                int num_classes, uint64_t seed) {
  if (def.conv_widths.empty())
    throw std::invalid_argument("cnn needs at least one conv block");
  if (def.in_c < 1 || def.in_h < 1 || def.in_w < 1 || num_classes < 2)
    throw std::invalid_argument("bad cnn dimensions");
  Model m;
  m.arch_id = arch_id;
  m.in_c = def.in_c;
  m.in_h = def.in_h;
  m.in_w = def.in_w;
  m.num_classes = num_classes;
  auto rng = make_rng(derive_seed(seed, 0x6d6f64656cull));
  int prev = def.in_c, h = def.in_h, w = def.in_w;
  for (int width : def.conv_widths) {
    if (width < 1) throw std::invalid_argument("conv width must be positive");
    if (h < 2 || w < 2)
      throw std::invalid_argument("input too small for " +
                                  std::to_string(def.conv_widths.size()) +
                                  " pooled blocks");
    m.layers.push_back(make_conv(prev, width, 3, 1, 1, rng));
    if (def.with_bn) m.layers.push_back(make_bn(width, rng));
    m.layers.push_back(make_relu());
    m.layers.push_back(make_pool(2, 2));
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
    prev = width;
  }
  m.layers.push_back(make_linear(prev * h * w, num_classes, rng));
  return m;
}

}  // namespace

bool arch_has_bn(const std::string& arch_id) { return arch_def(arch_id).with_bn; }

std::string nobn_variant(const std::string& arch_id) {
  if (!arch_has_bn(arch_id)) return arch_id;
  return arch_id + "_nobn";
}

Model make_model(const std::string& arch_id, uint64_t seed) {
  return build_cnn(arch_id, arch_def(arch_id), 10, seed);
}

Model make_custom_cnn(int in_c, int in_h, int in_w,
                      const std::vector<int>& widths, bool with_bn,
                      int num_classes, uint64_t seed) {
  std::string id = "custom_" + std::to_string(in_c) + "x" +
                   std::to_string(in_h) + "x" + std::to_string(in_w) + "_w";
  for (size_t i = 0; i < widths.size(); ++i)
    id += (i ? "-" : "") + std::to_string(widths[i]);
  if (!with_bn) id += "_nobn";
  id += "_c" + std::to_string(num_classes);
  return build_cnn(id, {in_c, in_h, in_w, widths, with_bn}, num_classes, seed);
}

namespace {

[[noreturn]] void shape_fail(size_t layer, LayerKind k, const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(layer) + " (" +
                              kind_name(k) + "): " + what);
}

Tensor conv_forward(Layer& l, size_t li, Tensor&& x, Mode mode) {
  if (x.ndim() != 4 || x.dim(1) != l.in_c)
    shape_fail(li, l.kind, "expected input (N, " + std::to_string(l.in_c) +
                               ", H, W), got " + shape_str(x.shape));
  K::ConvShape s{x.dim(0), l.in_c,  x.dim(2), x.dim(3), l.out_c,
                 l.kernel, l.kernel, l.stride, l.pad};
  if (s.out_h() <= 0 || s.out_w() <= 0)
    shape_fail(li, l.kind, "input too small: " + shape_str(x.shape));
  Tensor y({s.batch, s.out_c, s.out_h(), s.out_w()});
  K::active().conv2d_forward(s, x.data(), l.weight.data(), l.bias.data(),
                             y.data());
  if (mode == Mode::Train) {
    l.cache_x = std::move(x);
    l.has_cache = true;
  }
  return y;
}

Tensor conv_backward(Layer& l, size_t li, const Tensor& dy) {
  const Tensor& x = l.cache_x;
  K::ConvShape s{x.dim(0), l.in_c,  x.dim(2), x.dim(3), l.out_c,
                 l.kernel, l.kernel, l.stride, l.pad};
  if (dy.ndim() != 4 || dy.dim(1) != l.out_c || dy.dim(2) != s.out_h() ||
      dy.dim(3) != s.out_w())
    shape_fail(li, l.kind, "bad upstream grad shape " + shape_str(dy.shape));
  Tensor dx(x.shape);
  K::active().conv2d_backward_input(s, dy.data(), l.weight.data(), dx.data());
  l.weight.ensure_grad();
  l.bias.ensure_grad();
  K::active().conv2d_backward_params(s, x.data(), dy.data(),
                                     l.weight.grad.data(), l.bias.grad.data());
  return dx;
}

Tensor bn_forward(Layer& l, size_t li, Tensor&& x, Mode mode) {
  if (x.ndim() != 4 || x.dim(1) != l.in_c)
    shape_fail(li, l.kind, "expected input (N, " + std::to_string(l.in_c) +
                               ", H, W), got " + shape_str(x.shape));
  const int n = x.dim(0), c = x.dim(1);
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  const auto& ops = K::active();
  Tensor y(x.shape);

  if (mode == Mode::Eval) {
    for (int ch = 0; ch < c; ++ch) {
      const double inv =
          1.0 / std::sqrt(l.running_var.values[ch] + kBnEps);
      const double a = l.weight.values[ch] * inv;
      const double cc = l.bias.values[ch] - l.running_mean.values[ch] * a;
      for (int i = 0; i < n; ++i) {
        const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
        ops.affine(plane, a, x.data() + off, cc, y.data() + off);
      }
    }
    return y;
  }

  Tensor xhat(x.shape);
  l.cache_mean.assign(c, 0.0);
  l.cache_invstd.assign(c, 0.0);
  const double m = static_cast<double>(n) * plane;
  for (int ch = 0; ch < c; ++ch) {
    double sx = 0.0, sxx = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* p = x.data() + (static_cast<size_t>(i) * c + ch) * plane;
      sx += ops.reduce_sum(plane, p);
      sxx += ops.dot(plane, p, p);
    }
    const double mean = sx / m;
    const double var = std::max(0.0, sxx / m - mean * mean);
    const double inv = 1.0 / std::sqrt(var + kBnEps);
    l.cache_mean[ch] = mean;
    l.cache_invstd[ch] = inv;
    l.running_mean.values[ch] =
        (1.0 - kBnMomentum) * l.running_mean.values[ch] + kBnMomentum * mean;
    l.running_var.values[ch] =
        (1.0 - kBnMomentum) * l.running_var.values[ch] + kBnMomentum * var;
    const double g = l.weight.values[ch], b = l.bias.values[ch];
    for (int i = 0; i < n; ++i) {
      const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
      ops.affine(plane, inv, x.data() + off, -mean * inv, xhat.data() + off);
      ops.affine(plane, g, xhat.data() + off, b, y.data() + off);
    }
  }
  l.cache_xhat = std::move(xhat);
  l.has_cache = true;
  return y;
}

Tensor bn_backward(Layer& l, size_t li, const Tensor& dy) {
  const Tensor& xhat = l.cache_xhat;
  if (!dy.same_shape(xhat))
    shape_fail(li, l.kind, "bad upstream grad shape " + shape_str(dy.shape));
  const int n = dy.dim(0), c = dy.dim(1);
  const size_t plane = static_cast<size_t>(dy.dim(2)) * dy.dim(3);
  const double m = static_cast<double>(n) * plane;
  const auto& ops = K::active();
  l.weight.ensure_grad();
  l.bias.ensure_grad();
  Tensor dx(dy.shape);
  for (int ch = 0; ch < c; ++ch) {
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
      s1 += ops.reduce_sum(plane, dy.data() + off);
      s2 += ops.dot(plane, dy.data() + off, xhat.data() + off);
    }
    l.bias.grad[ch] += s1;
    l.weight.grad[ch] += s2;
    const double a = l.weight.values[ch] * l.cache_invstd[ch];
    const double qb = -a * s2 / m;
    const double cc = -a * s1 / m;
    for (int i = 0; i < n; ++i) {
      const size_t off = (static_cast<size_t>(i) * c + ch) * plane;
      ops.triad(plane, a, dy.data() + off, qb, xhat.data() + off, cc,
                dx.data() + off);
    }
  }
  return dx;
}

Tensor relu_forward_l(Layer& l, Tensor&& x, Mode mode) {
  Tensor y(x.shape);
  K::active().relu_forward(x.numel(), x.data(), y.data());
  if (mode == Mode::Train) {
    l.cache_x = std::move(x);
    l.has_cache = true;
  }
  return y;
}

Tensor relu_backward_l(Layer& l, size_t li, const Tensor& dy) {
  if (!dy.same_shape(l.cache_x))
    shape_fail(li, l.kind, "bad upstream grad shape " + shape_str(dy.shape));
  Tensor dx(dy.shape);
  K::active().relu_backward(dy.numel(), l.cache_x.data(), dy.data(),
                            dx.data());
  return dx;
}

Tensor pool_forward(Layer& l, size_t li, Tensor&& x, Mode mode) {
  if (x.ndim() != 4)
    shape_fail(li, l.kind, "expected 4-d input, got " + shape_str(x.shape));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int k = l.kernel, st = l.stride;
  const int oh = (h - k) / st + 1, ow = (w - k) / st + 1;
  if (oh <= 0 || ow <= 0)
    shape_fail(li, l.kind, "input too small: " + shape_str(x.shape));
  Tensor y({n, c, oh, ow});
  std::vector<int> argmax;
  if (mode == Mode::Train) argmax.assign(y.numel(), 0);
  size_t oidx = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const size_t base = (static_cast<size_t>(i) * c + ch) *
                          static_cast<size_t>(h) * w;
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q, ++oidx) {
          double best = -1e308;
          size_t best_at = 0;
          for (int kr = 0; kr < k; ++kr)
            for (int kq = 0; kq < k; ++kq) {
              const size_t at =
                  base + static_cast<size_t>(r * st + kr) * w + (q * st + kq);
              if (x.values[at] > best) {
                best = x.values[at];
                best_at = at;
              }
            }
          y.values[oidx] = best;
          if (mode == Mode::Train) argmax[oidx] = static_cast<int>(best_at);
        }
    }
  if (mode == Mode::Train) {
    l.cache_argmax = std::move(argmax);
    l.cache_xshape = x.shape;
    l.has_cache = true;
  }
  return y;
}

Tensor pool_backward(Layer& l, size_t li, const Tensor& dy) {
  if (dy.numel() != l.cache_argmax.size())
    shape_fail(li, l.kind, "bad upstream grad shape " + shape_str(dy.shape));
  Tensor dx(l.cache_xshape);
  for (size_t i = 0; i < dy.numel(); ++i)
    dx.values[static_cast<size_t>(l.cache_argmax[i])] += dy.values[i];
  return dx;
}

Tensor linear_forward_l(Layer& l, size_t li, Tensor&& x, Mode mode) {
  const int n = x.dim(0);
  const size_t feat = x.numel() / static_cast<size_t>(n);
  if (feat != static_cast<size_t>(l.in_c))
    shape_fail(li, l.kind,
               "expected " + std::to_string(l.in_c) + " features per row, got " +
                   std::to_string(feat) + " from " + shape_str(x.shape));
  Tensor y({n, l.out_c});
  K::active().linear_forward(n, l.in_c, l.out_c, x.data(), l.weight.data(),
                             l.bias.data(), y.data());
  if (mode == Mode::Train) {
    l.cache_x = std::move(x);
    l.has_cache = true;
  }
  return y;
}

Tensor linear_backward_l(Layer& l, size_t li, const Tensor& dy) {
  const int n = l.cache_x.dim(0);
  if (dy.ndim() != 2 || dy.dim(0) != n || dy.dim(1) != l.out_c)
    shape_fail(li, l.kind, "bad upstream grad shape " + shape_str(dy.shape));
  Tensor dx(l.cache_x.shape);
  K::active().linear_backward_input(n, l.in_c, l.out_c, dy.data(),
                                    l.weight.data(), dx.data());
  l.weight.ensure_grad();
  l.bias.ensure_grad();
  K::active().linear_backward_params(n, l.in_c, l.out_c, l.cache_x.data(),
                                     dy.data(), l.weight.grad.data(),
                                     l.bias.grad.data());
  return dx;
}

}  // namespace

Tensor forward(Model& m, const Tensor& batch, Mode mode) {
  if (batch.ndim() != 4 || batch.dim(1) != m.in_c || batch.dim(2) != m.in_h ||
      batch.dim(3) != m.in_w)
    throw std::invalid_argument(
        "model input: expected (N, " + std::to_string(m.in_c) + ", " +
        std::to_string(m.in_h) + ", " + std::to_string(m.in_w) + "), got " +
        shape_str(batch.shape));
  Tensor cur = batch;
  for (size_t li = 0; li < m.layers.size(); ++li) {
    Layer& l = m.layers[li];
    if (mode == Mode::Eval) l.drop_cache();
    switch (l.kind) {
      case LayerKind::Conv2d:
        cur = conv_forward(l, li, std::move(cur), mode);
        break;
      case LayerKind::BatchNorm:
        cur = bn_forward(l, li, std::move(cur), mode);
        break;
      case LayerKind::ReLU:
        cur = relu_forward_l(l, std::move(cur), mode);
        break;
      case LayerKind::MaxPool:
        cur = pool_forward(l, li, std::move(cur), mode);
        break;
      case LayerKind::Linear:
        cur = linear_forward_l(l, li, std::move(cur), mode);
        break;
    }
  }
  return cur;
}

Tensor backward(Model& m, const Tensor& dlogits) {
  if (m.layers.empty()) throw std::runtime_error("backward on empty model");
  Tensor cur = dlogits;
  for (size_t i = m.layers.size(); i-- > 0;) {
    Layer& l = m.layers[i];
    if (!l.has_cache)
      throw std::runtime_error(
          "backward without a matching train-mode forward at layer " +
          std::to_string(i) + " (" + kind_name(l.kind) + ")");
    switch (l.kind) {
      case LayerKind::Conv2d:
        cur = conv_backward(l, i, cur);
        break;
      case LayerKind::BatchNorm:
        cur = bn_backward(l, i, cur);
        break;
      case LayerKind::ReLU:
        cur = relu_backward_l(l, i, cur);
        break;
      case LayerKind::MaxPool:
        cur = pool_backward(l, i, cur);
        break;
      case LayerKind::Linear:
        cur = linear_backward_l(l, i, cur);
        break;
    }
    l.drop_cache();
  }
  return cur;
}

std::vector<Tensor*> trainable_tensors(Model& m) {
  std::vector<Tensor*> out;
  for (auto& l : m.layers) {
    if (!l.has_params()) continue;
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void sgd_step(Model& m, double lr) {
  auto params = trainable_tensors(m);
  for (Tensor* t : params)
    if (!t->has_grad())
      throw std::runtime_error("sgd_step: gradients missing; run backward first");
  for (Tensor* t : params) {
    for (size_t i = 0; i < t->numel(); ++i) t->values[i] -= lr * t->grad[i];
    t->clear_grad();
  }
}

CeResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw std::invalid_argument("cross_entropy: logits must be 2-d, got " +
                                shape_str(logits.shape));
  const int n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != static_cast<size_t>(n))
    throw std::invalid_argument("cross_entropy: batch/label count mismatch");
  CeResult res;
  res.loss = 0.0;
  res.dlogits = Tensor(logits.shape);
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(c) + ")");
    const double* row = logits.data() + static_cast<size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (int j = 0; j < c; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    res.loss += lse - row[y];
    double* drow = res.dlogits.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) drow[j] = std::exp(row[j] - lse) / n;
    drow[y] -= 1.0 / n;
  }
  res.loss /= n;
  return res;
}

namespace {

template <class ModelT, class Fn>
void walk_tensors(ModelT& m, Fn&& fn) {
  for (size_t li = 0; li < m.layers.size(); ++li) {
    auto& l = m.layers[li];
    switch (l.kind) {
      case LayerKind::Conv2d:
        fn(li, "conv.weight", l.weight);
        fn(li, "conv.bias", l.bias);
        break;
      case LayerKind::Linear:
        fn(li, "linear.weight", l.weight);
        fn(li, "linear.bias", l.bias);
        break;
      case LayerKind::BatchNorm:
        fn(li, "bn.gamma", l.weight);
        fn(li, "bn.beta", l.bias);
        fn(li, "bn.running_mean", l.running_mean);
        fn(li, "bn.running_var", l.running_var);
        break;
      default:
        break;
    }
  }
}

}  // namespace

size_t param_count(const Model& m) {
  size_t n = 0;
  walk_tensors(m, [&](size_t, const char*, const Tensor& t) { n += t.numel(); });
  return n;
}

std::vector<double> flatten_all(const Model& m) {
  std::vector<double> flat;
  flat.reserve(param_count(m));
  walk_tensors(m, [&](size_t, const char*, const Tensor& t) {
    flat.insert(flat.end(), t.values.begin(), t.values.end());
  });
  return flat;
}

void unflatten_all(Model& m, const std::vector<double>& flat) {
  if (flat.size() != param_count(m))
    throw std::invalid_argument("unflatten_all: expected " +
                                std::to_string(param_count(m)) +
                                " values, got " + std::to_string(flat.size()));
  size_t off = 0;
  walk_tensors(m, [&](size_t, const char*, Tensor& t) {
    std::copy_n(flat.data() + off, t.numel(), t.values.data());
    off += t.numel();
  });
}

std::vector<TensorEntry> tensor_entries(const Model& m) {
  std::vector<TensorEntry> out;
  size_t off = 0;
  walk_tensors(m, [&](size_t li, const char* tag, const Tensor& t) {
    TensorEntry e;
    e.name = "layer" + std::to_string(li) + "." + tag;
    e.layer = static_cast<int>(li);
    e.tensor = &t;
    e.offset = off;
    out.push_back(std::move(e));
    off += t.numel();
  });
  return out;
}

void gather_batch(const Tensor& images, const std::vector<int>& labels,
                  const std::vector<int>& idx, int lo, int hi, Tensor& batch,
                  std::vector<int>& batch_labels) {
  const int count = hi - lo;
  const size_t row = images.numel() / static_cast<size_t>(images.dim(0));
  std::vector<int> bshape = images.shape;
  bshape[0] = count;
  batch = Tensor(bshape);
  batch_labels.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int src = idx[static_cast<size_t>(lo + i)];
    std::copy_n(images.data() + static_cast<size_t>(src) * row, row,
                batch.data() + static_cast<size_t>(i) * row);
    batch_labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
  }
}

double run_epochs(Model& m, const Tensor& images,
                  const std::vector<int>& labels, int epochs, double lr,
                  int batch_size, std::mt19937_64& rng,
                  const TrainHooks& hooks) {
  if (epochs <= 0) return 0.0;
  const int n = images.dim(0);
  if (n == 0 || labels.size() != static_cast<size_t>(n))
    throw std::invalid_argument("run_epochs: bad dataset");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor batch;
  std::vector<int> batch_labels;
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (int lo = 0; lo < n; lo += batch_size) {
      const int hi = std::min(n, lo + batch_size);
      gather_batch(images, labels, idx, lo, hi, batch, batch_labels);
      Tensor logits = forward(m, batch, Mode::Train);
      CeResult ce = cross_entropy(logits, batch_labels);
      backward(m, ce.dlogits);
      double extra = hooks.extra_grad ? hooks.extra_grad(m) : 0.0;
      sgd_step(m, lr);
      if (hooks.post_step) hooks.post_step(m);
      total += ce.loss + extra;
      ++batches;
    }
    last = total / batches;
  }
  return last;
}

double mean_ce(Model& m, const Tensor& images, const std::vector<int>& labels,
               int batch_size) {
  const int n = images.dim(0);
  if (n == 0) throw std::invalid_argument("mean_ce: empty dataset");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor batch;
  std::vector<int> batch_labels;
  double total = 0.0;
  for (int lo = 0; lo < n; lo += batch_size) {
    const int hi = std::min(n, lo + batch_size);
    gather_batch(images, labels, idx, lo, hi, batch, batch_labels);
    Tensor logits = forward(m, batch, Mode::Eval);
    total += cross_entropy(logits, batch_labels).loss * (hi - lo);
  }
  return total / n;
}

double accuracy(Model& m, const Tensor& images, const std::vector<int>& labels,
                int batch_size) {
  const int n = images.dim(0);
  if (n == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor batch;
  std::vector<int> batch_labels;
  int hits = 0;
  for (int lo = 0; lo < n; lo += batch_size) {
    const int hi = std::min(n, lo + batch_size);
    gather_batch(images, labels, idx, lo, hi, batch, batch_labels);
    Tensor logits = forward(m, batch, Mode::Eval);
    const int c = logits.dim(1);
    for (int i = 0; i < hi - lo; ++i) {
      const double* row = logits.data() + static_cast<size_t>(i) * c;
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
      if (best == batch_labels[static_cast<size_t>(i)]) ++hits;
    }
  }
  return static_cast<double>(hits) / n;
}

}  // namespace safl::nn
