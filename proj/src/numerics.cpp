#include "mars/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mars::num {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op) + ": non-finite input");
    }
  }
}

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

ImplPtr make_impl(Shape shape, std::vector<double> values, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

// Result of an op: requires grad (and records the rule) iff recording is on
// and any parent requires grad.
Tensor make_node(Shape shape, std::vector<double> values,
                 std::vector<Tensor> parents,
                 std::function<void(detail::TensorImpl&)> backward_fn) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  auto impl = make_impl(std::move(shape), std::move(values), track);
  if (track) {
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.impl());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

void accumulate(detail::TensorImpl& node, std::span<const double> g) {
  if (!node.requires_grad) return;
  auto& buf = node.grad_buf();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::TensorImpl::grad_buf() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_impl({}, {v}, requires_grad));
}

Tensor Tensor::vector(std::vector<double> v, bool requires_grad) {
  Shape s{static_cast<int>(v.size())};
  return Tensor(make_impl(std::move(s), std::move(v), requires_grad));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> v,
                      bool requires_grad) {
  if (v.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("matrix: " + std::to_string(v.size()) +
                     " values for shape " + shape_str({rows, cols}));
  }
  return Tensor(make_impl({rows, cols}, std::move(v), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(make_impl(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(make_impl(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> v,
                           bool requires_grad) {
  if (v.size() != shape_numel(shape)) {
    throw ShapeError("from_values: " + std::to_string(v.size()) +
                     " values for shape " + shape_str(shape));
  }
  return Tensor(make_impl(std::move(shape), std::move(v), requires_grad));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return impl_->values[0];
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.size() != impl_->values.size()) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->values.size(), 0.0); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// primitive ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_finite("matmul", a);
  check_finite("matmul", b);
  const auto& sa = a.shape();
  const auto& sb = b.shape();

  auto mismatch = [&] {
    return ShapeError("matmul: shape mismatch " + shape_str(sa) + " x " +
                      shape_str(sb));
  };

  if (sa.size() == 2 && sb.size() == 2) {
    // (m x k) . (k x n) -> (m x n)
    if (sa[1] != sb[0]) throw mismatch();
    const int m = sa[0], k = sa[1], n = sb[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        for (int j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
      }
    }
    return make_node(
        {m, n}, std::move(out), {a, b},
        [m, k, n](detail::TensorImpl& node) {
          const auto& g = node.grad;
          auto& pa = *node.parents[0];
          auto& pb = *node.parents[1];
          if (pa.requires_grad) {
            auto& da = pa.grad_buf();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j) {
                const double gij = g[i * n + j];
                for (int p = 0; p < k; ++p)
                  da[i * k + p] += gij * pb.values[p * n + j];
              }
          }
          if (pb.requires_grad) {
            auto& db = pb.grad_buf();
            for (int i = 0; i < m; ++i)
              for (int p = 0; p < k; ++p) {
                const double aip = pa.values[i * k + p];
                for (int j = 0; j < n; ++j)
                  db[p * n + j] += aip * g[i * n + j];
              }
          }
        });
  }

  if (sa.size() == 2 && sb.size() == 1) {
    // (m x k) . (k) -> (m)
    if (sa[1] != sb[0]) throw mismatch();
    const int m = sa[0], k = sa[1];
    std::vector<double> out(m, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += av[i * k + p] * bv[p];
      out[i] = acc;
    }
    return make_node({m}, std::move(out), {a, b},
                     [m, k](detail::TensorImpl& node) {
                       const auto& g = node.grad;
                       auto& pa = *node.parents[0];
                       auto& pb = *node.parents[1];
                       if (pa.requires_grad) {
                         auto& da = pa.grad_buf();
                         for (int i = 0; i < m; ++i)
                           for (int p = 0; p < k; ++p)
                             da[i * k + p] += g[i] * pb.values[p];
                       }
                       if (pb.requires_grad) {
                         auto& db = pb.grad_buf();
                         for (int i = 0; i < m; ++i)
                           for (int p = 0; p < k; ++p)
                             db[p] += g[i] * pa.values[i * k + p];
                       }
                     });
  }

  if (sa.size() == 1 && sb.size() == 2) {
    // (k) . (k x n) -> (n)
    if (sa[0] != sb[0]) throw mismatch();
    const int k = sa[0], n = sb[1];
    std::vector<double> out(n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (int p = 0; p < k; ++p) {
      const double ap = av[p];
      for (int j = 0; j < n; ++j) out[j] += ap * bv[p * n + j];
    }
    return make_node({n}, std::move(out), {a, b},
                     [k, n](detail::TensorImpl& node) {
                       const auto& g = node.grad;
                       auto& pa = *node.parents[0];
                       auto& pb = *node.parents[1];
                       if (pa.requires_grad) {
                         auto& da = pa.grad_buf();
                         for (int p = 0; p < k; ++p) {
                           double acc = 0.0;
                           for (int j = 0; j < n; ++j)
                             acc += g[j] * pb.values[p * n + j];
                           da[p] += acc;
                         }
                       }
                       if (pb.requires_grad) {
                         auto& db = pb.grad_buf();
                         for (int p = 0; p < k; ++p) {
                           const double ap = pa.values[p];
                           for (int j = 0; j < n; ++j)
                             db[p * n + j] += ap * g[j];
                         }
                       }
                     });
  }

  throw mismatch();
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_finite("add", a);
  check_finite("add", b);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](detail::TensorImpl& node) {
                     accumulate(*node.parents[0], node.grad);
                     accumulate(*node.parents[1], node.grad);
                   });
}

Tensor scalar_mul(const Tensor& x, double c) {
  check_finite("scalar-mul", x);
  if (!std::isfinite(c)) throw NonFiniteError("scalar-mul: non-finite factor");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return make_node(x.shape(), std::move(out), {x},
                   [c](detail::TensorImpl& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& d = p.grad_buf();
                     for (std::size_t i = 0; i < d.size(); ++i)
                       d[i] += c * node.grad[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_finite("mul", a);
  check_finite("mul", b);
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](detail::TensorImpl& node) {
                     auto& pa = *node.parents[0];
                     auto& pb = *node.parents[1];
                     if (pa.requires_grad) {
                       auto& da = pa.grad_buf();
                       for (std::size_t i = 0; i < da.size(); ++i)
                         da[i] += node.grad[i] * pb.values[i];
                     }
                     if (pb.requires_grad) {
                       auto& db = pb.grad_buf();
                       for (std::size_t i = 0; i < db.size(); ++i)
                         db[i] += node.grad[i] * pa.values[i];
                     }
                   });
}

Tensor mean(const Tensor& x) {
  check_finite("mean", x);
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const auto xv = x.values();
  double acc = 0.0;
  for (double v : xv) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_node({}, {acc * inv}, {x}, [inv](detail::TensorImpl& node) {
    auto& p = *node.parents[0];
    if (!p.requires_grad) return;
    auto& d = p.grad_buf();
    const double g = node.grad[0] * inv;
    for (double& di : d) di += g;
  });
}

Tensor concat(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat: no operands");
  std::size_t total = 0;
  for (const auto& x : xs) {
    check_finite("concat", x);
    if (x.rank() > 1) {
      throw ShapeError("concat: expected 1-D or scalar operand, got " +
                       shape_str(x.shape()));
    }
    total += x.size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& x : xs) {
    auto v = x.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return make_node({static_cast<int>(total)}, std::move(out), xs,
                   [](detail::TensorImpl& node) {
                     std::size_t off = 0;
                     for (auto& pp : node.parents) {
                       auto& p = *pp;
                       const std::size_t n = p.size();
                       if (p.requires_grad) {
                         auto& d = p.grad_buf();
                         for (std::size_t i = 0; i < n; ++i)
                           d[i] += node.grad[off + i];
                       }
                       off += n;
                     }
                   });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no operands");
  const int d = static_cast<int>(rows[0].size());
  for (const auto& r : rows) {
    check_finite("stack_rows", r);
    if (r.rank() != 1 || static_cast<int>(r.size()) != d) {
      throw ShapeError("stack_rows: row shape " + shape_str(r.shape()) +
                       " does not match [" + std::to_string(d) + "]");
    }
  }
  const int k = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(k) * d);
  for (const auto& r : rows) {
    auto v = r.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return make_node({k, d}, std::move(out), rows,
                   [d](detail::TensorImpl& node) {
                     for (std::size_t r = 0; r < node.parents.size(); ++r) {
                       auto& p = *node.parents[r];
                       if (!p.requires_grad) continue;
                       auto& dst = p.grad_buf();
                       const std::size_t off = r * d;
                       for (int i = 0; i < d; ++i)
                         dst[i] += node.grad[off + i];
                     }
                   });
}

namespace {

template <typename Fwd, typename Dfn>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd f, Dfn dfn) {
  check_finite(name, x);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_node(x.shape(), std::move(out), {x},
                   [dfn](detail::TensorImpl& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& d = p.grad_buf();
                     for (std::size_t i = 0; i < d.size(); ++i)
                       d[i] += node.grad[i] * dfn(p.values[i], node.values[i]);
                   });
}

}  // namespace

Tensor tanh(const Tensor& x) {
  return unary_elementwise(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x,
      [](double v) {
        // stable in both tails
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary_elementwise(
      "leaky_relu", x,
      [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor log(const Tensor& x) {
  check_finite("natural-log", x);
  for (double v : x.values()) {
    if (v <= 0.0) throw NonFiniteError("natural-log: non-positive input");
  }
  return unary_elementwise(
      "natural-log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("clamp: lo > hi");
  return unary_elementwise(
      "clamp", x,
      [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x) {
  check_finite("softmax", x);
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("softmax: expected 1-D or 2-D, got " +
                     shape_str(x.shape()));
  }
  const int cols = x.shape().back();
  const int rows = static_cast<int>(x.size()) / cols;
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    double mx = xv[off];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xv[off + j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      out[off + j] = std::exp(xv[off + j] - mx);
      z += out[off + j];
    }
    for (int j = 0; j < cols; ++j) out[off + j] /= z;
  }
  return make_node(x.shape(), std::move(out), {x},
                   [rows, cols](detail::TensorImpl& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& d = p.grad_buf();
                     for (int r = 0; r < rows; ++r) {
                       const std::size_t off =
                           static_cast<std::size_t>(r) * cols;
                       double dot = 0.0;
                       for (int j = 0; j < cols; ++j)
                         dot += node.grad[off + j] * node.values[off + j];
                       for (int j = 0; j < cols; ++j)
                         d[off + j] += node.values[off + j] *
                                       (node.grad[off + j] - dot);
                     }
                   });
}

Tensor inner(const Tensor& a, const Tensor& b) {
  check_finite("inner-product", a);
  check_finite("inner-product", b);
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size()) {
    throw ShapeError("inner-product: shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return make_node({}, {acc}, {a, b}, [](detail::TensorImpl& node) {
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    const double g = node.grad[0];
    if (pa.requires_grad) {
      auto& da = pa.grad_buf();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * pb.values[i];
    }
    if (pb.requires_grad) {
      auto& db = pb.grad_buf();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * pa.values[i];
    }
  });
}

// ---------------------------------------------------------------------------
// image ops

namespace {

void require_chw(const char* op, const Tensor& t) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected {C,H,W}, got " +
                     shape_str(t.shape()));
  }
}

// zero-padded copy, pad 1 on each spatial border
std::vector<double> pad1(std::span<const double> in, int c, int h, int w) {
  const int hp = h + 2, wp = w + 2;
  std::vector<double> out(static_cast<std::size_t>(c) * hp * wp, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const double* src = &in[(static_cast<std::size_t>(ch) * h + y) * w];
      double* dst =
          &out[(static_cast<std::size_t>(ch) * hp + y + 1) * wp + 1];
      std::copy(src, src + w, dst);
    }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_finite("conv2d", input);
  check_finite("conv2d", weight);
  check_finite("conv2d", bias);
  require_chw("conv2d", input);
  if (weight.rank() != 4 || weight.shape()[2] != 3 || weight.shape()[3] != 3) {
    throw ShapeError("conv2d: expected {O,C,3,3} weight, got " +
                     shape_str(weight.shape()));
  }
  const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int o = weight.shape()[0];
  if (weight.shape()[1] != c || bias.rank() != 1 || bias.shape()[0] != o) {
    throw ShapeError("conv2d: shape mismatch " + shape_str(input.shape()) +
                     " with " + shape_str(weight.shape()));
  }

  const int hp = h + 2, wp = w + 2;
  auto padded = pad1(input.values(), c, h, w);
  const auto wv = weight.values();
  const auto bv = bias.values();
  std::vector<double> out(static_cast<std::size_t>(o) * h * w);
  for (int oc = 0; oc < o; ++oc) {
    double* dst = &out[static_cast<std::size_t>(oc) * h * w];
    std::fill(dst, dst + static_cast<std::size_t>(h) * w, bv[oc]);
    for (int ic = 0; ic < c; ++ic) {
      const double* wk = &wv[(static_cast<std::size_t>(oc) * c + ic) * 9];
      const double* src = &padded[static_cast<std::size_t>(ic) * hp * wp];
      for (int y = 0; y < h; ++y) {
        double* row = dst + static_cast<std::size_t>(y) * w;
        for (int ky = 0; ky < 3; ++ky) {
          const double* srow = src + static_cast<std::size_t>(y + ky) * wp;
          const double w0 = wk[ky * 3], w1 = wk[ky * 3 + 1],
                       w2 = wk[ky * 3 + 2];
          for (int x = 0; x < w; ++x) {
            row[x] += w0 * srow[x] + w1 * srow[x + 1] + w2 * srow[x + 2];
          }
        }
      }
    }
  }

  return make_node(
      {o, h, w}, std::move(out), {input, weight, bias},
      [c, h, w, o, hp, wp, padded = std::move(padded)](
          detail::TensorImpl& node) {
        auto& pin = *node.parents[0];
        auto& pw = *node.parents[1];
        auto& pb = *node.parents[2];
        const auto& g = node.grad;
        if (pb.requires_grad) {
          auto& db = pb.grad_buf();
          for (int oc = 0; oc < o; ++oc) {
            const double* go = &g[static_cast<std::size_t>(oc) * h * w];
            double acc = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i)
              acc += go[i];
            db[oc] += acc;
          }
        }
        if (pw.requires_grad) {
          auto& dw = pw.grad_buf();
          for (int oc = 0; oc < o; ++oc) {
            const double* go = &g[static_cast<std::size_t>(oc) * h * w];
            for (int ic = 0; ic < c; ++ic) {
              double* wk = &dw[(static_cast<std::size_t>(oc) * c + ic) * 9];
              const double* src =
                  &padded[static_cast<std::size_t>(ic) * hp * wp];
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  double acc = 0.0;
                  for (int y = 0; y < h; ++y) {
                    const double* srow =
                        src + static_cast<std::size_t>(y + ky) * wp + kx;
                    const double* grow = go + static_cast<std::size_t>(y) * w;
                    for (int x = 0; x < w; ++x) acc += grow[x] * srow[x];
                  }
                  wk[ky * 3 + kx] += acc;
                }
            }
          }
        }
        if (pin.requires_grad) {
          std::vector<double> dpad(
              static_cast<std::size_t>(c) * hp * wp, 0.0);
          for (int oc = 0; oc < o; ++oc) {
            const double* go = &g[static_cast<std::size_t>(oc) * h * w];
            for (int ic = 0; ic < c; ++ic) {
              const double* wk =
                  &pw.values[(static_cast<std::size_t>(oc) * c + ic) * 9];
              double* dst = &dpad[static_cast<std::size_t>(ic) * hp * wp];
              for (int y = 0; y < h; ++y) {
                const double* grow = go + static_cast<std::size_t>(y) * w;
                for (int ky = 0; ky < 3; ++ky) {
                  double* drow = dst + static_cast<std::size_t>(y + ky) * wp;
                  const double w0 = wk[ky * 3], w1 = wk[ky * 3 + 1],
                               w2 = wk[ky * 3 + 2];
                  for (int x = 0; x < w; ++x) {
                    drow[x] += w0 * grow[x];
                    drow[x + 1] += w1 * grow[x];
                    drow[x + 2] += w2 * grow[x];
                  }
                }
              }
            }
          }
          auto& din = pin.grad_buf();
          for (int ic = 0; ic < c; ++ic)
            for (int y = 0; y < h; ++y) {
              const double* src =
                  &dpad[(static_cast<std::size_t>(ic) * hp + y + 1) * wp + 1];
              double* dst =
                  &din[(static_cast<std::size_t>(ic) * h + y) * w];
              for (int x = 0; x < w; ++x) dst[x] += src[x];
            }
        }
      });
}

Tensor maxpool2(const Tensor& input) {
  check_finite("maxpool2", input);
  require_chw("maxpool2", input);
  const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2: spatial dims must be even, got " +
                     shape_str(input.shape()));
  }
  const int ho = h / 2, wo = w / 2;
  const auto xv = input.values();
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        const std::size_t base =
            (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x;
        std::size_t best = base;
        for (std::size_t idx : {base + 1, base + w, base + w + 1}) {
          if (xv[idx] > xv[best]) best = idx;
        }
        const std::size_t oi =
            (static_cast<std::size_t>(ch) * ho + y) * wo + x;
        out[oi] = xv[best];
        argmax[oi] = best;
      }
  return make_node({c, ho, wo}, std::move(out), {input},
                   [argmax = std::move(argmax)](detail::TensorImpl& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& d = p.grad_buf();
                     for (std::size_t i = 0; i < argmax.size(); ++i)
                       d[argmax[i]] += node.grad[i];
                   });
}

Tensor upsample2(const Tensor& input) {
  check_finite("upsample2", input);
  require_chw("upsample2", input);
  const int c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int ho = h * 2, wo = w * 2;
  const auto xv = input.values();
  std::vector<double> out(static_cast<std::size_t>(c) * ho * wo);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = xv[(static_cast<std::size_t>(ch) * h + y) * w + x];
        const std::size_t o0 =
            (static_cast<std::size_t>(ch) * ho + 2 * y) * wo + 2 * x;
        out[o0] = v;
        out[o0 + 1] = v;
        out[o0 + wo] = v;
        out[o0 + wo + 1] = v;
      }
  return make_node({c, ho, wo}, std::move(out), {input},
                   [c, h, w, wo](detail::TensorImpl& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& d = p.grad_buf();
                     for (int ch = 0; ch < c; ++ch)
                       for (int y = 0; y < h; ++y)
                         for (int x = 0; x < w; ++x) {
                           const std::size_t o0 =
                               (static_cast<std::size_t>(ch) * 2 * h + 2 * y) *
                                   wo +
                               2 * x;
                           d[(static_cast<std::size_t>(ch) * h + y) * w + x] +=
                               node.grad[o0] + node.grad[o0 + 1] +
                               node.grad[o0 + wo] + node.grad[o0 + wo + 1];
                         }
                   });
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must be scalar, got " +
                     shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;  // constant path: nothing reaches leaves

  using detail::TensorImpl;
  // iterative post-order DFS: operands come before consumers
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // stale grads on interior nodes would double-count on repeated backward
  for (TensorImpl* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->values.size(), 0.0);
  }
  root.impl()->grad_buf()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

double gradient_check(const std::function<Tensor(const Tensor&)>& f,
                      Tensor point, double eps) {
  if (!(eps > 0.0)) throw ShapeError("gradient_check: epsilon must be > 0");
  point.set_requires_grad(true);
  point.zero_grad();
  Tensor y = f(point);
  if (y.size() != 1) {
    throw ShapeError("gradient_check: f must return a scalar");
  }
  backward(y);
  std::vector<double> analytic(point.grad().begin(), point.grad().end());

  NoGradGuard ng;
  auto vals = point.mutable_values();
  double max_err = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + eps;
    const double up = f(point).item();
    vals[i] = orig - eps;
    const double dn = f(point).item();
    vals[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(dn)) {
      throw NonFiniteError("gradient_check: non-finite evaluation");
    }
    const double fd = (up - dn) / (2.0 * eps);
    const double err =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace mars::num
