#include "cyclestain/core/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cyclestain/core/error.hpp"

namespace cyclestain::ad {
namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled) {
    bool any = false;
    for (const Var& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Var& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

void require(bool cond, const char* what) {
  if (!cond) throw ContractError(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                        b.shape().str());
}

// cols is (C*k*k) x (Ho*Wo), row-major.
void im2col(const double* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo,
            double* cols) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          double* out = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* in = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            out[ox] = (ix >= 0 && ix < W) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int C, int H, int W, int k, int s, int p, int Ho, int Wo,
            double* dx) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    double* plane = dx + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) continue;
          const double* in = row + static_cast<std::size_t>(oy) * Wo;
          double* out = plane + static_cast<std::size_t>(iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < W) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <class F, class G>
Var elementwise(const Var& x, F f, G df_from_xy) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(std::move(out), {x}, [df_from_xy](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * df_from_xy(in.value[i], self.value[i]);
  });
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

double Var::item() const {
  if (!node_ || node_->value.size() != 1) throw ContractError("Var::item: not a scalar");
  return node_->value[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Var& root) {
  if (!root.defined() || root.value().size() != 1)
    throw ContractError("backward: root must be a single-element tensor");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
      node->grad = Tensor();  // interior gradients are not needed after propagation
    }
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require(ws.h == ws.w, "conv2d: kernel must be square");
  if (ws.c != xs.c)
    throw ContractError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                        std::to_string(ws.c));
  const int k = ws.h;
  const int s = opt.stride;
  const int p = opt.padding;
  require(s >= 1 && p >= 0, "conv2d: invalid stride/padding");
  const int Ho = (xs.h + 2 * p - k) / s + 1;
  const int Wo = (xs.w + 2 * p - k) / s + 1;
  if (xs.h + 2 * p < k || xs.w + 2 * p < k || Ho < 1 || Wo < 1)
    throw ContractError("conv2d: input " + xs.str() + " too small for kernel " +
                        std::to_string(k));
  if (bias.defined() && bias.value().size() != static_cast<std::size_t>(ws.n))
    throw ContractError("conv2d: bias size mismatch");

  const int O = ws.n;
  const int K = xs.c * k * k;
  const int P = Ho * Wo;
  Tensor out(Shape{xs.n, O, Ho, Wo});
  AlignedBuffer cols(static_cast<std::size_t>(K) * P);
  ConstMapMat wmat(weight.value().raw(), O, K);
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.value().raw() + static_cast<std::size_t>(n) * xs.c * xs.plane(), xs.c, xs.h, xs.w, k,
           s, p, Ho, Wo, cols.data());
    MapMat omat(out.raw() + static_cast<std::size_t>(n) * O * P, O, P);
    omat.noalias() = wmat * ConstMapMat(cols.data(), K, P);
    if (bias.defined()) {
      for (int o = 0; o < O; ++o) omat.row(o).array() += bias.value()[o];
    }
  }

  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), inputs, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node* bn = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
    AlignedBuffer cols_b(static_cast<std::size_t>(K) * P);
    ConstMapMat w(wn.value.raw(), O, K);
    for (int n = 0; n < xs.n; ++n) {
      ConstMapMat gout(self.grad.raw() + static_cast<std::size_t>(n) * O * P, O, P);
      if (wn.requires_grad) {
        im2col(xn.value.raw() + static_cast<std::size_t>(n) * xs.c * xs.plane(), xs.c, xs.h, xs.w,
               k, s, p, Ho, Wo, cols_b.data());
        MapMat gw(wn.grad_buffer().raw(), O, K);
        gw.noalias() += gout * ConstMapMat(cols_b.data(), K, P).transpose();
      }
      if (bn && bn->requires_grad) {
        Tensor& gb = bn->grad_buffer();
        for (int o = 0; o < O; ++o) gb[o] += gout.row(o).sum();
      }
      if (xn.requires_grad) {
        MapMat gcols(cols_b.data(), K, P);
        gcols.noalias() = w.transpose() * gout;
        col2im(cols_b.data(), xs.c, xs.h, xs.w, k, s, p, Ho, Wo,
               xn.grad_buffer().raw() + static_cast<std::size_t>(n) * xs.c * xs.plane());
      }
    }
  });
}

Var reflect_pad(const Var& x, int pad) {
  const Shape xs = x.shape();
  require(pad >= 0, "reflect_pad: negative pad");
  if (pad >= xs.h || pad >= xs.w)
    throw ContractError("reflect_pad: pad " + std::to_string(pad) + " too large for " + xs.str());
  const int Ho = xs.h + 2 * pad;
  const int Wo = xs.w + 2 * pad;
  std::vector<int> ry(Ho), rx(Wo);
  for (int i = 0; i < Ho; ++i) ry[i] = reflect_index(i - pad, xs.h);
  for (int i = 0; i < Wo; ++i) rx[i] = reflect_index(i - pad, xs.w);
  Tensor out(Shape{xs.n, xs.c, Ho, Wo});
  const int planes = xs.n * xs.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* in = x.value().raw() + static_cast<std::size_t>(pl) * xs.plane();
    double* o = out.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) o[y * Wo + xx] = in[ry[y] * xs.w + rx[xx]];
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int pl = 0; pl < planes; ++pl) {
      double* gi = g.raw() + static_cast<std::size_t>(pl) * xs.plane();
      const double* go = self.grad.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) gi[ry[y] * xs.w + rx[xx]] += go[y * Wo + xx];
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape xs = x.shape();
  const int Ho = xs.h * 2;
  const int Wo = xs.w * 2;
  Tensor out(Shape{xs.n, xs.c, Ho, Wo});
  const int planes = xs.n * xs.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* in = x.value().raw() + static_cast<std::size_t>(pl) * xs.plane();
    double* o = out.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) o[y * Wo + xx] = in[(y / 2) * xs.w + xx / 2];
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int pl = 0; pl < planes; ++pl) {
      double* gi = g.raw() + static_cast<std::size_t>(pl) * xs.plane();
      const double* go = self.grad.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) gi[(y / 2) * xs.w + xx / 2] += go[y * Wo + xx];
    }
  });
}

Var avg_pool2x2(const Var& x) {
  const Shape xs = x.shape();
  if (xs.h < 2 || xs.w < 2) throw ContractError("avg_pool2x2: input " + xs.str() + " below 2x2");
  const int Ho = xs.h / 2;
  const int Wo = xs.w / 2;
  Tensor out(Shape{xs.n, xs.c, Ho, Wo});
  const int planes = xs.n * xs.c;
  for (int pl = 0; pl < planes; ++pl) {
    const double* in = x.value().raw() + static_cast<std::size_t>(pl) * xs.plane();
    double* o = out.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        const double* r0 = in + (2 * y) * xs.w + 2 * xx;
        const double* r1 = r0 + xs.w;
        o[y * Wo + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int pl = 0; pl < planes; ++pl) {
      double* gi = g.raw() + static_cast<std::size_t>(pl) * xs.plane();
      const double* go = self.grad.raw() + static_cast<std::size_t>(pl) * Ho * Wo;
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          const double v = 0.25 * go[y * Wo + xx];
          double* r0 = gi + (2 * y) * xs.w + 2 * xx;
          double* r1 = r0 + xs.w;
          r0[0] += v;
          r0[1] += v;
          r1[0] += v;
          r1[1] += v;
        }
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  const Shape xs = x.shape();
  const int planes = xs.n * xs.c;
  const std::size_t hw = xs.plane();
  Tensor out(xs);
  auto inv_std = std::make_shared<std::vector<double>>(planes);
  for (int pl = 0; pl < planes; ++pl) {
    const double* in = x.value().raw() + pl * hw;
    double* o = out.raw() + pl * hw;
    double mean = 0.0;
    for (std::size_t i = 0; i < hw; ++i) mean += in[i];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[pl] = is;
    for (std::size_t i = 0; i < hw; ++i) o[i] = (in[i] - mean) * is;
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (int pl = 0; pl < planes; ++pl) {
      const double* go = self.grad.raw() + pl * hw;
      const double* xhat = self.value.raw() + pl * hw;
      double mg = 0.0, mgx = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        mg += go[i];
        mgx += go[i] * xhat[i];
      }
      mg /= static_cast<double>(hw);
      mgx /= static_cast<double>(hw);
      const double is = (*inv_std)[pl];
      double* gi = g.raw() + pl * hw;
      for (std::size_t i = 0; i < hw; ++i) gi[i] += is * (go[i] - mg - xhat[i] * mgx);
    }
  });
}

Var relu(const Var& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return elementwise(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
  return elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var hardtanh(const Var& x) {
  return elementwise(
      x, [](double v) { return std::clamp(v, -1.0, 1.0); },
      [](double v, double) { return (v > -1.0 && v < 1.0) ? 1.0 : 0.0; });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var scale(const Var& x, double k) {
  return elementwise(
      x, [k](double v) { return k * v; }, [k](double, double) { return k; });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ContractError("concat_channels: incompatible " + as.str() + " and " + bs.str());
  Tensor out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t asz = as.c * as.plane();
  const std::size_t bsz = bs.c * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().raw() + n * asz, asz, out.raw() + n * (asz + bsz));
    std::copy_n(b.value().raw() + n * bsz, bsz, out.raw() + n * (asz + bsz) + asz);
  }
  return make_result(std::move(out), {a, b}, [=](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    for (int n = 0; n < as.n; ++n) {
      const double* go = self.grad.raw() + n * (asz + bsz);
      if (an.requires_grad) {
        double* g = an.grad_buffer().raw() + n * asz;
        for (std::size_t i = 0; i < asz; ++i) g[i] += go[i];
      }
      if (bn.requires_grad) {
        double* g = bn.grad_buffer().raw() + n * bsz;
        for (std::size_t i = 0; i < bsz; ++i) g[i] += go[asz + i];
      }
    }
  });
}

Var sum(const Var& x) {
  Tensor out(Shape{1, 1, 1, 1}, x.value().sum());
  return make_result(std::move(out), {x}, [](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var mean(const Var& x) {
  if (x.value().empty()) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a, b, "mean_abs_diff");
  if (a.value().empty()) throw ContractError("mean_abs_diff: empty tensor");
  const std::size_t count = a.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  Tensor out(Shape{1, 1, 1, 1}, acc / static_cast<double>(count));
  return make_result(std::move(out), {a, b}, [count](Node& self) {
    Node& an = *self.parents[0];
    Node& bn = *self.parents[1];
    const double go = self.grad[0] / static_cast<double>(count);
    double* ga = an.requires_grad ? an.grad_buffer().raw() : nullptr;
    double* gb = bn.requires_grad ? bn.grad_buffer().raw() : nullptr;
    for (std::size_t i = 0; i < count; ++i) {
      const double d = an.value[i] - bn.value[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ga) ga[i] += go * sgn;
      if (gb) gb[i] -= go * sgn;
    }
  });
}

Var sum_sq_dev(const Var& x, double target) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += (v - target) * (v - target);
  Tensor out(Shape{1, 1, 1, 1}, acc);
  return make_result(std::move(out), {x}, [target](Node& self) {
    Node& in = *self.parents[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * 2.0 * (in.value[i] - target);
  });
}

}  // namespace cyclestain::ad
