#include "soundstage/tensor.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "soundstage/common.h"

namespace soundstage {

namespace {

thread_local int g_no_grad_depth = 0;

size_t numel_of(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

std::shared_ptr<TensorNode> make_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.resize(numel_of(n->shape));
  return n;
}

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

// Wires parents and a backward closure onto `out` if grad recording is on and
// any parent participates in a gradient path.
void attach(const std::shared_ptr<TensorNode>& out,
            std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void()> bwd) {
  if (g_no_grad_depth > 0) return;
  bool any = false;
  for (const auto& p : parents) any = any || p->needs_grad;
  if (!any) return;
  out->needs_grad = true;
  out->parents = std::move(parents);
  out->backward = std::move(bwd);
}

}  // namespace

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::wrap(std::shared_ptr<TensorNode> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(const Shape& shape) { return wrap(make_node(shape)); }

Tensor Tensor::full(const Shape& shape, double v) {
  auto n = make_node(shape);
  std::fill(n->value.begin(), n->value.end(), v);
  return wrap(n);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
  check(numel_of(shape) == data.size(), "from_data: shape/data size mismatch");
  auto n = make_node(shape);
  n->value = std::move(data);
  return wrap(n);
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

double Tensor::item() const {
  check(numel() == 1, "item: tensor is not scalar");
  return node_->value[0];
}

const std::vector<double>& Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  node_->needs_grad = v;
}

Tensor Tensor::detach() const {
  auto n = make_node(node_->shape);
  n->value = node_->value;
  return wrap(n);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "add: shape mismatch");
  auto out = make_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, o = out.get()] {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] += o->grad[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "sub: shape mismatch");
  auto out = make_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, o = out.get()] {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] -= o->grad[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "mul: shape mismatch");
  auto out = make_node(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, o = out.get()] {
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        pa->grad[i] += o->grad[i] * pb->value[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        pb->grad[i] += o->grad[i] * pa->value[i];
    }
  });
  return Tensor::wrap(out);
}

Tensor scale(const Tensor& a, double s) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  auto pa = a.node();
  attach(out, {pa}, [pa, s, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i] * s;
  });
  return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + s;
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
  });
  return Tensor::wrap(out);
}

Tensor gelu(const Tensor& a) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) {
    double x = av[i];
    out->value[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    for (size_t i = 0; i < o->grad.size(); ++i) {
      double x = pa->value[i];
      double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa->grad[i] += o->grad[i] * (cdf + x * pdf);
    }
  });
  return Tensor::wrap(out);
}

Tensor silu(const Tensor& a) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) {
    double x = av[i];
    out->value[i] = x / (1.0 + std::exp(-x));
  }
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) {
      double x = pa->value[i];
      double sig = 1.0 / (1.0 + std::exp(-x));
      pa->grad[i] += o->grad[i] * sig * (1.0 + x * (1.0 - sig));
    }
  });
  return Tensor::wrap(out);
}

Tensor exp(const Tensor& a) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = std::exp(av[i]);
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      pa->grad[i] += o->grad[i] * o->value[i];
  });
  return Tensor::wrap(out);
}

Tensor log(const Tensor& a) {
  auto out = make_node(a.shape());
  const auto& av = a.data();
  for (size_t i = 0; i < av.size(); ++i) {
    check(av[i] > 0.0, "log: non-positive input");
    out->value[i] = std::log(av[i]);
  }
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      pa->grad[i] += o->grad[i] / pa->value[i];
  });
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 tensors required");
  check(a.dim(1) == b.dim(0), "matmul: inner dimension mismatch");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = make_node({m, n});
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* ov = out->value.data();
  for (int i = 0; i < m; ++i) {
    double* orow = ov + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      double aik = av[static_cast<size_t>(i) * k + kk];
      const double* brow = bv + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, m, k, n, o = out.get()] {
    const double* g = o->grad.data();
    if (pa->needs_grad) {
      pa->ensure_grad();  // dA = G * B^T
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = g + static_cast<size_t>(i) * n;
          const double* brow = pb->value.data() + static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa->grad[static_cast<size_t>(i) * k + kk] += acc;
        }
    }
    if (pb->needs_grad) {
      pb->ensure_grad();  // dB = A^T * G
      for (int kk = 0; kk < k; ++kk) {
        double* brow = pb->grad.data() + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
          double aik = pa->value[static_cast<size_t>(i) * k + kk];
          const double* grow = g + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
        }
      }
    }
  });
  return Tensor::wrap(out);
}

Tensor transpose(const Tensor& a) {
  check(a.rank() == 2, "transpose: rank-2 tensor required");
  int m = a.dim(0), n = a.dim(1);
  auto out = make_node({n, m});
  const auto& av = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->value[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  auto pa = a.node();
  attach(out, {pa}, [pa, m, n, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i) * n + j] += o->grad[static_cast<size_t>(j) * m + i];
  });
  return Tensor::wrap(out);
}

Tensor add_rows(const Tensor& x, const Tensor& b) {
  check(x.rank() == 2 && b.rank() == 1, "add_rows: [n,d] + [d] required");
  check(x.dim(1) == b.dim(0), "add_rows: width mismatch");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node(x.shape());
  const auto& xv = x.data();
  const auto& bv = b.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out->value[static_cast<size_t>(i) * d + j] = xv[static_cast<size_t>(i) * d + j] + bv[j];
  auto px = x.node(), pb = b.node();
  attach(out, {px, pb}, [px, pb, n, d, o = out.get()] {
    if (px->needs_grad) {
      px->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          pb->grad[j] += o->grad[static_cast<size_t>(i) * d + j];
    }
  });
  return Tensor::wrap(out);
}

Tensor mul_rows(const Tensor& x, const Tensor& s) {
  check(x.rank() == 2 && s.rank() == 1, "mul_rows: [n,d] * [d] required");
  check(x.dim(1) == s.dim(0), "mul_rows: width mismatch");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node(x.shape());
  const auto& xv = x.data();
  const auto& sv = s.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out->value[static_cast<size_t>(i) * d + j] = xv[static_cast<size_t>(i) * d + j] * sv[j];
  auto px = x.node(), ps = s.node();
  attach(out, {px, ps}, [px, ps, n, d, o = out.get()] {
    if (px->needs_grad) {
      px->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          px->grad[static_cast<size_t>(i) * d + j] +=
              o->grad[static_cast<size_t>(i) * d + j] * ps->value[j];
    }
    if (ps->needs_grad) {
      ps->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          ps->grad[j] += o->grad[static_cast<size_t>(i) * d + j] *
                         px->value[static_cast<size_t>(i) * d + j];
    }
  });
  return Tensor::wrap(out);
}

Tensor layer_norm(const Tensor& x, double eps) {
  check(x.rank() == 2, "layer_norm: rank-2 tensor required");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node(x.shape());
  std::vector<double> inv_sigma(static_cast<size_t>(n));
  const auto& xv = x.data();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j)
      out->value[static_cast<size_t>(i) * d + j] = (row[j] - mu) * is;
  }
  auto px = x.node();
  attach(out, {px}, [px, n, d, inv_sigma = std::move(inv_sigma), o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* xhat = o->value.data() + static_cast<size_t>(i) * d;
      const double* g = o->grad.data() + static_cast<size_t>(i) * d;
      double gm = 0.0, gxm = 0.0;
      for (int j = 0; j < d; ++j) {
        gm += g[j];
        gxm += g[j] * xhat[j];
      }
      gm /= d;
      gxm /= d;
      double is = inv_sigma[static_cast<size_t>(i)];
      double* dx = px->grad.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) dx[j] += is * (g[j] - gm - xhat[j] * gxm);
    }
  });
  return Tensor::wrap(out);
}

Tensor softmax_rows(const Tensor& x) {
  check(x.rank() == 2, "softmax_rows: rank-2 tensor required");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node(x.shape());
  const auto& xv = x.data();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * d;
    double mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j < d; ++j)
      out->value[static_cast<size_t>(i) * d + j] = std::exp(row[j] - mx) / z;
  }
  auto px = x.node();
  attach(out, {px}, [px, n, d, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* p = o->value.data() + static_cast<size_t>(i) * d;
      const double* g = o->grad.data() + static_cast<size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[j] * p[j];
      double* dx = px->grad.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) dx[j] += p[j] * (g[j] - dot);
    }
  });
  return Tensor::wrap(out);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  check(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention: rank-2 inputs");
  check(q.dim(1) == k.dim(1) && k.dim(1) == v.dim(1), "attention: width mismatch");
  check(k.dim(0) == v.dim(0), "attention: key/value count mismatch");
  check(q.dim(1) % heads == 0, "attention: width not divisible by heads");
  int n = q.dim(0), m = k.dim(0), d = q.dim(1);
  int dh = d / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto out = make_node(q.shape());
  // probs: [heads, n, m], saved for backward
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(heads) * n * m);
  const double* qv = q.data().data();
  const double* kv = k.data().data();
  const double* vv = v.data().data();
  for (int h = 0; h < heads; ++h) {
    int off = h * dh;
    double* P = probs->data() + static_cast<size_t>(h) * n * m;
    for (int i = 0; i < n; ++i) {
      double* prow = P + static_cast<size_t>(i) * m;
      double mx = -1e300;
      for (int j = 0; j < m; ++j) {
        double s = 0.0;
        const double* qr = qv + static_cast<size_t>(i) * d + off;
        const double* kr = kv + static_cast<size_t>(j) * d + off;
        for (int c = 0; c < dh; ++c) s += qr[c] * kr[c];
        prow[j] = s * sc;
        mx = std::max(mx, prow[j]);
      }
      double z = 0.0;
      for (int j = 0; j < m; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      double* orow = out->value.data() + static_cast<size_t>(i) * d + off;
      for (int j = 0; j < m; ++j) {
        prow[j] /= z;
        const double* vr = vv + static_cast<size_t>(j) * d + off;
        for (int c = 0; c < dh; ++c) orow[c] += prow[j] * vr[c];
      }
    }
  }
  auto pq = q.node(), pk = k.node(), pv = v.node();
  attach(out, {pq, pk, pv},
         [pq, pk, pv, probs, heads, n, m, d, dh, sc, o = out.get()] {
           std::vector<double> dP(static_cast<size_t>(m));
           std::vector<double> dS(static_cast<size_t>(m));
           if (pq->needs_grad) pq->ensure_grad();
           if (pk->needs_grad) pk->ensure_grad();
           if (pv->needs_grad) pv->ensure_grad();
           for (int h = 0; h < heads; ++h) {
             int off = h * dh;
             const double* P = probs->data() + static_cast<size_t>(h) * n * m;
             for (int i = 0; i < n; ++i) {
               const double* prow = P + static_cast<size_t>(i) * m;
               const double* grow = o->grad.data() + static_cast<size_t>(i) * d + off;
               // dV += P^T * dO
               if (pv->needs_grad) {
                 for (int j = 0; j < m; ++j) {
                   double* dvr = pv->grad.data() + static_cast<size_t>(j) * d + off;
                   for (int c = 0; c < dh; ++c) dvr[c] += prow[j] * grow[c];
                 }
               }
               if (!pq->needs_grad && !pk->needs_grad) continue;
               // dP = dO * V^T, then dS = P o (dP - rowdot)
               double dot = 0.0;
               for (int j = 0; j < m; ++j) {
                 const double* vr = pv->value.data() + static_cast<size_t>(j) * d + off;
                 double s = 0.0;
                 for (int c = 0; c < dh; ++c) s += grow[c] * vr[c];
                 dP[static_cast<size_t>(j)] = s;
                 dot += s * prow[j];
               }
               for (int j = 0; j < m; ++j)
                 dS[static_cast<size_t>(j)] = prow[j] * (dP[static_cast<size_t>(j)] - dot);
               if (pq->needs_grad) {
                 double* dqr = pq->grad.data() + static_cast<size_t>(i) * d + off;
                 for (int j = 0; j < m; ++j) {
                   const double* kr = pk->value.data() + static_cast<size_t>(j) * d + off;
                   double s = dS[static_cast<size_t>(j)] * sc;
                   for (int c = 0; c < dh; ++c) dqr[c] += s * kr[c];
                 }
               }
               if (pk->needs_grad) {
                 const double* qr = pq->value.data() + static_cast<size_t>(i) * d + off;
                 for (int j = 0; j < m; ++j) {
                   double* dkr = pk->grad.data() + static_cast<size_t>(j) * d + off;
                   double s = dS[static_cast<size_t>(j)] * sc;
                   for (int c = 0; c < dh; ++c) dkr[c] += s * qr[c];
                 }
               }
             }
           }
         });
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape) {
  check(numel_of(shape) == a.numel(), "reshape: element count mismatch");
  auto out = make_node(shape);
  out->value = a.data();
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
  });
  return Tensor::wrap(out);
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  check(x.rank() == 2, "slice_rows: rank-2 tensor required");
  check(start >= 0 && len >= 1 && start + len <= x.dim(0), "slice_rows: out of range");
  int d = x.dim(1);
  auto out = make_node({len, d});
  std::copy_n(x.data().begin() + static_cast<size_t>(start) * d,
              static_cast<size_t>(len) * d, out->value.begin());
  auto px = x.node();
  attach(out, {px}, [px, start, d, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      px->grad[static_cast<size_t>(start) * d + i] += o->grad[i];
  });
  return Tensor::wrap(out);
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  check(x.rank() == 2, "slice_cols: rank-2 tensor required");
  check(start >= 0 && len >= 1 && start + len <= x.dim(1), "slice_cols: out of range");
  int n = x.dim(0), d = x.dim(1);
  auto out = make_node({n, len});
  const auto& xv = x.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j)
      out->value[static_cast<size_t>(i) * len + j] =
          xv[static_cast<size_t>(i) * d + start + j];
  auto px = x.node();
  attach(out, {px}, [px, n, d, start, len, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j)
        px->grad[static_cast<size_t>(i) * d + start + j] +=
            o->grad[static_cast<size_t>(i) * len + j];
  });
  return Tensor::wrap(out);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  int d = static_cast<int>(rows[0].numel());
  int k = static_cast<int>(rows.size());
  auto out = make_node({k, d});
  std::vector<std::shared_ptr<TensorNode>> parents;
  parents.reserve(rows.size());
  for (int i = 0; i < k; ++i) {
    check(static_cast<int>(rows[static_cast<size_t>(i)].numel()) == d,
          "stack_rows: ragged rows");
    std::copy_n(rows[static_cast<size_t>(i)].data().begin(), d,
                out->value.begin() + static_cast<size_t>(i) * d);
    parents.push_back(rows[static_cast<size_t>(i)].node());
  }
  auto parents_copy = parents;
  attach(out, std::move(parents), [parents = std::move(parents_copy), d, o = out.get()] {
    for (size_t i = 0; i < parents.size(); ++i) {
      auto& p = parents[i];
      if (!p->needs_grad) continue;
      p->ensure_grad();
      for (int j = 0; j < d; ++j) p->grad[static_cast<size_t>(j)] += o->grad[i * d + j];
    }
  });
  return Tensor::wrap(out);
}

Tensor mean_rows(const Tensor& x) {
  check(x.rank() == 2, "mean_rows: rank-2 tensor required");
  int k = x.dim(0), d = x.dim(1);
  auto out = make_node({d});
  const auto& xv = x.data();
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) out->value[static_cast<size_t>(j)] += xv[static_cast<size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) out->value[static_cast<size_t>(j)] /= k;
  auto px = x.node();
  attach(out, {px}, [px, k, d, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < d; ++j)
        px->grad[static_cast<size_t>(i) * d + j] += o->grad[static_cast<size_t>(j)] / k;
  });
  return Tensor::wrap(out);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  check(x.rank() == 2, "gather_rows: rank-2 tensor required");
  int n = x.dim(0), d = x.dim(1);
  for (int i : idx) check(i >= 0 && i < n, "gather_rows: index out of range");
  int len = static_cast<int>(idx.size());
  auto out = make_node({len, d});
  const auto& xv = x.data();
  for (int r = 0; r < len; ++r)
    std::copy_n(xv.begin() + static_cast<size_t>(idx[static_cast<size_t>(r)]) * d, d,
                out->value.begin() + static_cast<size_t>(r) * d);
  auto px = x.node();
  attach(out, {px}, [px, idx, d, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < d; ++j)
        px->grad[static_cast<size_t>(idx[r]) * d + j] += o->grad[r * d + j];
  });
  return Tensor::wrap(out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check(a.rank() == 3 && b.rank() == 3, "concat_channels: rank-3 tensors required");
  check(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
        "concat_channels: spatial dims mismatch");
  int c1 = a.dim(0), c2 = b.dim(0), h = a.dim(1), w = a.dim(2);
  auto out = make_node({c1 + c2, h, w});
  std::copy(a.data().begin(), a.data().end(), out->value.begin());
  std::copy(b.data().begin(), b.data().end(), out->value.begin() + a.numel());
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, o = out.get()] {
    size_t na = pa->value.size();
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < na; ++i) pa->grad[i] += o->grad[i];
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < pb->value.size(); ++i) pb->grad[i] += o->grad[na + i];
    }
  });
  return Tensor::wrap(out);
}

Tensor slice_channels(const Tensor& x, int start, int len) {
  check(x.rank() == 3, "slice_channels: rank-3 tensor required");
  check(start >= 0 && len >= 1 && start + len <= x.dim(0), "slice_channels: out of range");
  int h = x.dim(1), w = x.dim(2);
  size_t plane = static_cast<size_t>(h) * w;
  auto out = make_node({len, h, w});
  std::copy_n(x.data().begin() + static_cast<size_t>(start) * plane,
              static_cast<size_t>(len) * plane, out->value.begin());
  auto px = x.node();
  attach(out, {px}, [px, start, plane, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (size_t i = 0; i < o->grad.size(); ++i)
      px->grad[static_cast<size_t>(start) * plane + i] += o->grad[i];
  });
  return Tensor::wrap(out);
}

Tensor expand_channels(const Tensor& fill, int h, int w) {
  check(fill.rank() == 1, "expand_channels: rank-1 fill required");
  int c = fill.dim(0);
  size_t plane = static_cast<size_t>(h) * w;
  auto out = make_node({c, h, w});
  const auto& fv = fill.data();
  for (int ch = 0; ch < c; ++ch)
    std::fill_n(out->value.begin() + static_cast<size_t>(ch) * plane, plane, fv[static_cast<size_t>(ch)]);
  auto pf = fill.node();
  attach(out, {pf}, [pf, c, plane, o = out.get()] {
    if (!pf->needs_grad) return;
    pf->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (size_t i = 0; i < plane; ++i) acc += o->grad[static_cast<size_t>(ch) * plane + i];
      pf->grad[static_cast<size_t>(ch)] += acc;
    }
  });
  return Tensor::wrap(out);
}

Tensor pad2d(const Tensor& x, int pad_r, int pad_c, double value) {
  check(x.rank() == 2, "pad2d: rank-2 tensor required");
  check(pad_r >= 0 && pad_c >= 0, "pad2d: negative padding");
  int h = x.dim(0), w = x.dim(1);
  int oh = h + pad_r, ow = w + pad_c;
  auto out = make_node({oh, ow});
  std::fill(out->value.begin(), out->value.end(), value);
  const auto& xv = x.data();
  for (int i = 0; i < h; ++i)
    std::copy_n(xv.begin() + static_cast<size_t>(i) * w, w,
                out->value.begin() + static_cast<size_t>(i) * ow);
  auto px = x.node();
  attach(out, {px}, [px, h, w, ow, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        px->grad[static_cast<size_t>(i) * w + j] += o->grad[static_cast<size_t>(i) * ow + j];
  });
  return Tensor::wrap(out);
}

namespace {

// Builds the flat index permutation for space_to_depth; out[i] = in[perm[i]].
std::vector<size_t> s2d_perm(int c, int h, int w, int f) {
  int hb = h / f, wb = w / f;
  std::vector<size_t> perm(static_cast<size_t>(c) * h * w);
  size_t o = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int fy = 0; fy < f; ++fy)
      for (int fx = 0; fx < f; ++fx)
        for (int by = 0; by < hb; ++by)
          for (int bx = 0; bx < wb; ++bx)
            perm[o++] = (static_cast<size_t>(ci) * h + (static_cast<size_t>(by) * f + fy)) * w +
                        (static_cast<size_t>(bx) * f + fx);
  return perm;
}

Tensor apply_perm(const Tensor& x, const Shape& out_shape, std::vector<size_t> perm) {
  auto out = make_node(out_shape);
  const auto& xv = x.data();
  for (size_t i = 0; i < perm.size(); ++i) out->value[i] = xv[perm[i]];
  auto px = x.node();
  attach(out, {px}, [px, perm = std::move(perm), o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (size_t i = 0; i < perm.size(); ++i) px->grad[perm[i]] += o->grad[i];
  });
  return Tensor::wrap(out);
}

}  // namespace

Tensor space_to_depth(const Tensor& x, int f) {
  check(x.rank() == 3, "space_to_depth: rank-3 tensor required");
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check(h % f == 0 && w % f == 0, "space_to_depth: dims not divisible by factor");
  return apply_perm(x, {c * f * f, h / f, w / f}, s2d_perm(c, h, w, f));
}

Tensor depth_to_space(const Tensor& x, int f) {
  check(x.rank() == 3, "depth_to_space: rank-3 tensor required");
  int cf = x.dim(0), hb = x.dim(1), wb = x.dim(2);
  check(cf % (f * f) == 0, "depth_to_space: channels not divisible by factor^2");
  int c = cf / (f * f), h = hb * f, w = wb * f;
  // inverse permutation of space_to_depth
  auto fwd = s2d_perm(c, h, w, f);
  std::vector<size_t> inv(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return apply_perm(x, {c, h, w}, std::move(inv));
}

Tensor crop2d(const Tensor& x, int rows, int cols) {
  check(x.rank() == 2, "crop2d: rank-2 tensor required");
  check(rows >= 1 && cols >= 1 && rows <= x.dim(0) && cols <= x.dim(1),
        "crop2d: block out of range");
  int m = x.dim(1);
  auto out = make_node({rows, cols});
  const auto& xv = x.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out->value[static_cast<size_t>(i) * cols + j] = xv[static_cast<size_t>(i) * m + j];
  auto px = x.node();
  attach(out, {px}, [px, rows, cols, m, o = out.get()] {
    if (!px->needs_grad) return;
    px->ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        px->grad[static_cast<size_t>(i) * m + j] += o->grad[static_cast<size_t>(i) * cols + j];
  });
  return Tensor::wrap(out);
}

Tensor patchify_tokens(const Tensor& z, int p) {
  check(z.rank() == 3, "patchify: rank-3 tensor required");
  int c = z.dim(0), h = z.dim(1), w = z.dim(2);
  check(h % p == 0 && w % p == 0, "patchify: dims not divisible by patch size");
  int hp = h / p, wp = w / p;
  std::vector<size_t> perm(static_cast<size_t>(c) * h * w);
  size_t o = 0;
  for (int by = 0; by < hp; ++by)
    for (int bx = 0; bx < wp; ++bx)
      for (int ci = 0; ci < c; ++ci)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            perm[o++] = (static_cast<size_t>(ci) * h + (static_cast<size_t>(by) * p + py)) * w +
                        (static_cast<size_t>(bx) * p + px);
  return apply_perm(z, {hp * wp, c * p * p}, std::move(perm));
}

Tensor unpatchify_tokens(const Tensor& t, int c, int h, int w, int p) {
  check(t.rank() == 2, "unpatchify: rank-2 tensor required");
  check(h % p == 0 && w % p == 0, "unpatchify: dims not divisible by patch size");
  int hp = h / p, wp = w / p;
  check(t.dim(0) == hp * wp && t.dim(1) == c * p * p, "unpatchify: token shape mismatch");
  // fwd[i] gives, for output flat index grouped as tokens, the [c,h,w] index;
  // invert it to map [c,h,w] -> token layout.
  std::vector<size_t> fwd(static_cast<size_t>(c) * h * w);
  size_t o = 0;
  for (int by = 0; by < hp; ++by)
    for (int bx = 0; bx < wp; ++bx)
      for (int ci = 0; ci < c; ++ci)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            fwd[o++] = (static_cast<size_t>(ci) * h + (static_cast<size_t>(by) * p + py)) * w +
                       (static_cast<size_t>(bx) * p + px);
  std::vector<size_t> inv(fwd.size());
  for (size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return apply_perm(t, {c, h, w}, std::move(inv));
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check(x.rank() == 3 && w.rank() == 4, "conv2d: x [ci,h,w], w [co,ci,kh,kw]");
  int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == ci, "conv2d: channel mismatch");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  check(oh >= 1 && ow >= 1, "conv2d: output would be empty");
  auto out = make_node({co, oh, ow});
  const auto& xv = x.data();
  const auto& wv = w.data();
  auto xat = [&](int c, int y, int z) -> double {
    return xv[(static_cast<size_t>(c) * h + y) * wd + z];
  };
  for (int o = 0; o < co; ++o) {
    double bias = b.defined() ? b.data()[static_cast<size_t>(o)] : 0.0;
    for (int y = 0; y < oh; ++y)
      for (int z = 0; z < ow; ++z) {
        double acc = bias;
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < kh; ++ky) {
            int iy = y * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int ix = z * stride - pad + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += wv[((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx] * xat(c, iy, ix);
            }
          }
        out->value[(static_cast<size_t>(o) * oh + y) * ow + z] = acc;
      }
  }
  auto px = x.node(), pw = w.node();
  auto pb = b.defined() ? b.node() : nullptr;
  std::vector<std::shared_ptr<TensorNode>> parents{px, pw};
  if (pb) parents.push_back(pb);
  attach(out, std::move(parents),
         [px, pw, pb, ci, h, wd, co, kh, kw, oh, ow, stride, pad, o = out.get()] {
           if (px->needs_grad) px->ensure_grad();
           if (pw->needs_grad) pw->ensure_grad();
           if (pb && pb->needs_grad) pb->ensure_grad();
           for (int oc = 0; oc < co; ++oc)
             for (int y = 0; y < oh; ++y)
               for (int z = 0; z < ow; ++z) {
                 double g = o->grad[(static_cast<size_t>(oc) * oh + y) * ow + z];
                 if (g == 0.0) continue;
                 if (pb && pb->needs_grad) pb->grad[static_cast<size_t>(oc)] += g;
                 for (int c = 0; c < ci; ++c)
                   for (int ky = 0; ky < kh; ++ky) {
                     int iy = y * stride - pad + ky;
                     if (iy < 0 || iy >= h) continue;
                     for (int kx = 0; kx < kw; ++kx) {
                       int ix = z * stride - pad + kx;
                       if (ix < 0 || ix >= wd) continue;
                       size_t wi = ((static_cast<size_t>(oc) * ci + c) * kh + ky) * kw + kx;
                       size_t xi = (static_cast<size_t>(c) * h + iy) * wd + ix;
                       if (px->needs_grad) px->grad[xi] += g * pw->value[wi];
                       if (pw->needs_grad) pw->grad[wi] += g * px->value[xi];
                     }
                   }
               }
         });
  return Tensor::wrap(out);
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  check(x.rank() == 2 && w.rank() == 3, "conv1d: x [ci,l], w [co,ci,k]");
  int ci = x.dim(0), l = x.dim(1);
  int co = w.dim(0), k = w.dim(2);
  check(w.dim(1) == ci, "conv1d: channel mismatch");
  int ol = l + 2 * pad - k + 1;
  check(ol >= 1, "conv1d: output would be empty");
  auto out = make_node({co, ol});
  const auto& xv = x.data();
  const auto& wv = w.data();
  for (int o = 0; o < co; ++o) {
    double bias = b.defined() ? b.data()[static_cast<size_t>(o)] : 0.0;
    for (int t = 0; t < ol; ++t) {
      double acc = bias;
      for (int c = 0; c < ci; ++c)
        for (int kk = 0; kk < k; ++kk) {
          int it = t - pad + kk;
          if (it < 0 || it >= l) continue;
          acc += wv[(static_cast<size_t>(o) * ci + c) * k + kk] * xv[static_cast<size_t>(c) * l + it];
        }
      out->value[static_cast<size_t>(o) * ol + t] = acc;
    }
  }
  auto px = x.node(), pw = w.node();
  auto pb = b.defined() ? b.node() : nullptr;
  std::vector<std::shared_ptr<TensorNode>> parents{px, pw};
  if (pb) parents.push_back(pb);
  attach(out, std::move(parents), [px, pw, pb, ci, l, co, k, ol, pad, o = out.get()] {
    if (px->needs_grad) px->ensure_grad();
    if (pw->needs_grad) pw->ensure_grad();
    if (pb && pb->needs_grad) pb->ensure_grad();
    for (int oc = 0; oc < co; ++oc)
      for (int t = 0; t < ol; ++t) {
        double g = o->grad[static_cast<size_t>(oc) * ol + t];
        if (g == 0.0) continue;
        if (pb && pb->needs_grad) pb->grad[static_cast<size_t>(oc)] += g;
        for (int c = 0; c < ci; ++c)
          for (int kk = 0; kk < k; ++kk) {
            int it = t - pad + kk;
            if (it < 0 || it >= l) continue;
            size_t wi = (static_cast<size_t>(oc) * ci + c) * k + kk;
            size_t xi = static_cast<size_t>(c) * l + it;
            if (px->needs_grad) px->grad[xi] += g * pw->value[wi];
            if (pw->needs_grad) pw->grad[wi] += g * px->value[xi];
          }
      }
  });
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto out = make_node({1});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out->value[0] = acc;
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += o->grad[0];
  });
  return Tensor::wrap(out);
}

Tensor mean(const Tensor& a) {
  size_t n = a.numel();
  auto out = make_node({1});
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out->value[0] = acc / static_cast<double>(n);
  auto pa = a.node();
  attach(out, {pa}, [pa, n, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    double g = o->grad[0] / static_cast<double>(n);
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
  return Tensor::wrap(out);
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "mse: shape mismatch");
  size_t n = a.numel();
  auto out = make_node({1});
  const auto& av = a.data();
  const auto& bv = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = av[i] - bv[i];
    acc += d * d;
  }
  out->value[0] = acc / static_cast<double>(n);
  auto pa = a.node(), pb = b.node();
  attach(out, {pa, pb}, [pa, pb, n, o = out.get()] {
    double g = 2.0 * o->grad[0] / static_cast<double>(n);
    if (pa->needs_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n; ++i) pa->grad[i] += g * (pa->value[i] - pb->value[i]);
    }
    if (pb->needs_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n; ++i) pb->grad[i] -= g * (pa->value[i] - pb->value[i]);
    }
  });
  return Tensor::wrap(out);
}

Tensor l2_norm(const Tensor& a) {
  auto out = make_node({1});
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  out->value[0] = std::sqrt(acc);
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    double nrm = o->value[0];
    if (nrm <= 0.0) return;  // subgradient 0 at the origin
    pa->ensure_grad();
    double g = o->grad[0] / nrm;
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g * pa->value[i];
  });
  return Tensor::wrap(out);
}

Tensor l1_norm(const Tensor& a) {
  auto out = make_node({1});
  double acc = 0.0;
  for (double v : a.data()) acc += std::abs(v);
  out->value[0] = acc;
  auto pa = a.node();
  attach(out, {pa}, [pa, o = out.get()] {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < pa->grad.size(); ++i) {
      double s = pa->value[i] > 0.0 ? 1.0 : (pa->value[i] < 0.0 ? -1.0 : 0.0);
      pa->grad[i] += o->grad[0] * s;
    }
  });
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  check(loss.numel() == 1, "backward: loss must be scalar");
  // iterative post-order DFS over parents
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next].get();
      ++next;
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward && !n->grad.empty()) n->backward();
  }
}

}  // namespace soundstage
