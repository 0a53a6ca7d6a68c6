#include "altpe/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <sstream>

#include "altpe/errors.hpp"
#include "altpe/rope.hpp"

namespace altpe::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

void check_finite(const Node& n, const char* op) {
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Finalises an op result: finiteness check, and tape recording when needed.
Tensor finish(std::shared_ptr<Node> out, const char* op, bool record, Tape::BackwardFn fn) {
  check_finite(*out, op);
  if (record) {
    out->requires_grad = true;
    Tape::current().record(out, std::move(fn));
  }
  return Tensor(std::move(out));
}

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ']';
  return s.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = ad::numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, 0.0));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor with more than one element");
  return node_->value[0];
}

// ---- tape ------------------------------------------------------------------

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<Node>& out, BackwardFn fn) {
  out->on_tape = true;
  entries_.push_back({out, std::move(fn)});
}

void Tape::clear() {
  for (auto& e : entries_) e.out->on_tape = false;
  entries_.clear();
}

void Tape::backward_from(Node& loss) {
  loss.ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    Node& out = *it->out;
    if (out.grad.empty()) continue;
    it->fn(out);
    // intermediates are not read again once their closure has run
    out.grad.clear();
    out.grad.shrink_to_fit();
  }
  clear();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  Node& n = *loss.node();
  if (!n.requires_grad) return;
  if (!n.on_tape) {
    throw ContractError("loss is not on the active tape (backward already ran?)");
  }
  Tape::current().backward_from(n);
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  require((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3), "matmul",
          "expected rank-2 or rank-3 operands, got " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  const std::size_t g = batched ? a.dim(0) : 1;
  const std::size_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), m = b.dim(b.rank() - 1);
  require(k == k2 && (!batched || b.dim(0) == g), "matmul",
          "incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));

  std::vector<double> out(g * n * m);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < g; ++i) {
    MapC A(ad.data() + i * n * k, n, k);
    MapC B(bd.data() + i * k * m, k, m);
    MapM C(out.data() + i * n * m, n, m);
    C.noalias() = A * B;
  }
  Shape shape = batched ? Shape{g, n, m} : Shape{n, m};
  const bool rec = wants_grad({&a, &b});
  auto an = a.node(), bn = b.node();
  return finish(make_node(std::move(shape), std::move(out)), "matmul", rec,
                [an, bn, g, n, k, m](Node& o) {
                  for (std::size_t i = 0; i < g; ++i) {
                    MapC dC(o.grad.data() + i * n * m, n, m);
                    if (an->requires_grad) {
                      MapM dA(an->ensure_grad().data() + i * n * k, n, k);
                      MapC B(bn->value.data() + i * k * m, k, m);
                      dA.noalias() += dC * B.transpose();
                    }
                    if (bn->requires_grad) {
                      MapM dB(bn->ensure_grad().data() + i * k * m, k, m);
                      MapC A(an->value.data() + i * n * k, n, k);
                      dB.noalias() += A.transpose() * dC;
                    }
                  }
                });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2 || a.rank() == 3, "transpose", "expected rank 2 or 3");
  const std::size_t g = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < g; ++i) {
    MapM(out.data() + i * r * c, c, r) = MapC(ad.data() + i * r * c, r, c).transpose();
  }
  Shape shape = a.rank() == 3 ? Shape{g, c, r} : Shape{c, r};
  auto an = a.node();
  return finish(make_node(std::move(shape), std::move(out)), "transpose",
                wants_grad({&a}), [an, g, r, c](Node& o) {
                  auto& da = an->ensure_grad();
                  for (std::size_t i = 0; i < g; ++i) {
                    MapM(da.data() + i * r * c, r, c) +=
                        MapC(o.grad.data() + i * r * c, c, r).transpose();
                  }
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape",
          shape_string(a.shape()) + " -> " + shape_string(shape));
  auto an = a.node();
  return finish(make_node(std::move(shape), an->value), "reshape", wants_grad({&a}),
                [an](Node& o) {
                  auto& da = an->ensure_grad();
                  for (std::size_t i = 0; i < da.size(); ++i) da[i] += o.grad[i];
                });
}

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add",
          shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  auto an = a.node(), bn = b.node();
  return finish(make_node(a.shape(), std::move(out)), "add", wants_grad({&a, &b}),
                [an, bn](Node& o) {
                  for (auto* in : {an.get(), bn.get()}) {
                    if (!in->requires_grad) continue;
                    auto& d = in->ensure_grad();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i];
                  }
                });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() == 2 && bias.numel() == x.dim(1), "add_bias",
          shape_string(x.shape()) + " + " + shape_string(bias.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  auto xn = x.node(), bn = bias.node();
  return finish(make_node(x.shape(), std::move(out)), "add_bias", wants_grad({&x, &bias}),
                [xn, bn, rows, cols](Node& o) {
                  if (xn->requires_grad) {
                    auto& dx = xn->ensure_grad();
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i];
                  }
                  if (bn->requires_grad) {
                    auto& db = bn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) db[c] += o.grad[r * cols + c];
                    }
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul",
          shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  auto an = a.node(), bn = b.node();
  return finish(make_node(a.shape(), std::move(out)), "mul", wants_grad({&a, &b}),
                [an, bn](Node& o) {
                  if (an->requires_grad) {
                    auto& d = an->ensure_grad();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * bn->value[i];
                  }
                  if (bn->requires_grad) {
                    auto& d = bn->ensure_grad();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * an->value[i];
                  }
                });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  auto an = a.node();
  return finish(make_node(a.shape(), std::move(out)), "scale", wants_grad({&a}),
                [an, factor](Node& o) {
                  auto& d = an->ensure_grad();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad[i] * factor;
                });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  auto an = a.node();
  return finish(make_node(a.shape(), std::move(out)), "relu", wants_grad({&a}),
                [an](Node& o) {
                  auto& d = an->ensure_grad();
                  for (std::size_t i = 0; i < d.size(); ++i) {
                    if (an->value[i] > 0.0) d[i] += o.grad[i];
                  }
                });
}

Tensor sum(const Tensor& a) {
  const auto ad = a.data();
  const double s = std::accumulate(ad.begin(), ad.end(), 0.0);
  auto an = a.node();
  return finish(make_node({1}, {s}), "sum", wants_grad({&a}), [an](Node& o) {
    auto& d = an->ensure_grad();
    for (auto& v : d) v += o.grad[0];
  });
}

// ---- normalisation -------------------------------------------------------------

Tensor softmax(const Tensor& x, const Tensor& mask) {
  require(x.rank() >= 1, "softmax", "rank-0 input");
  const std::size_t m = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / m;
  std::size_t rows_per_group = rows, mask_repeat = 1;
  if (mask.defined()) {
    require(mask.rank() >= 2 && mask.dim(mask.rank() - 1) == m, "softmax",
            "mask shape " + shape_string(mask.shape()) + " vs " + shape_string(x.shape()));
    const std::size_t n = mask.dim(mask.rank() - 2);
    const std::size_t mask_groups = mask.numel() / (n * m);
    require(rows % n == 0, "softmax", "mask row count does not divide input rows");
    rows_per_group = n;
    const std::size_t groups = rows / n;
    require(groups % mask_groups == 0, "softmax", "mask groups do not divide input groups");
    mask_repeat = groups / mask_groups;
  }
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * m;
    double* y = out.data() + r * m;
    const double* mk = nullptr;
    if (mask.defined()) {
      const std::size_t g = r / rows_per_group, i = r % rows_per_group;
      mk = mask.data().data() + ((g / mask_repeat) * rows_per_group + i) * m;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      y[c] = in[c] + (mk ? mk[c] : 0.0);
      mx = std::max(mx, y[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      y[c] = std::exp(y[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < m; ++c) y[c] /= z;
  }
  auto xn = x.node();
  return finish(make_node(x.shape(), std::move(out)), "softmax", wants_grad({&x}),
                [xn, rows, m](Node& o) {
                  auto& dx = xn->ensure_grad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* y = o.value.data() + r * m;
                    const double* dy = o.grad.data() + r * m;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < m; ++c) dot += dy[c] * y[c];
                    double* d = dx.data() + r * m;
                    for (std::size_t c = 0; c < m; ++c) d[c] += y[c] * (dy[c] - dot);
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(x.rank() - 1);
  require(gamma.numel() == d && beta.numel() == d, "layer_norm",
          "affine parameters must have width " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mean) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = gd[c] * h + bd[c];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(
      make_node(x.shape(), std::move(out)), "layer_norm", wants_grad({&x, &gamma, &beta}),
      [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = o.grad.data() + r * d;
          const double* h = xhat.data() + r * d;
          if (gn->requires_grad) {
            auto& dg = gn->ensure_grad();
            for (std::size_t c = 0; c < d; ++c) dg[c] += dy[c] * h[c];
          }
          if (bn->requires_grad) {
            auto& db = bn->ensure_grad();
            for (std::size_t c = 0; c < d; ++c) db[c] += dy[c];
          }
          if (xn->requires_grad) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = dy[c] * gn->value[c];
              mean_dh += dh;
              mean_dh_h += dh * h[c];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            double* dx = xn->ensure_grad().data() + r * d;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = dy[c] * gn->value[c];
              dx[c] += inv_std[r] * (dh - mean_dh - h[c] * mean_dh_h);
            }
          }
        }
      });
}

// ---- indexing / layout -----------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require(table.rank() == 2, "embedding_lookup", "table must be rank 2");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw DataError("token index " + std::to_string(ids[i]) +
                      " outside vocabulary of size " + std::to_string(v));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return finish(make_node({ids.size(), d}, std::move(out)), "embedding_lookup",
                wants_grad({&table}), [tn, d, idx = std::move(idx)](Node& o) {
                  auto& dt = tn->ensure_grad();
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    double* row = dt.data() + static_cast<std::size_t>(idx[i]) * d;
                    for (std::size_t c = 0; c < d; ++c) row[c] += o.grad[i * d + c];
                  }
                });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require(x.rank() == 2 && batch > 0 && x.dim(0) % batch == 0 && x.dim(1) % heads == 0,
          "split_heads", "cannot split " + shape_string(x.shape()));
  const std::size_t t = x.dim(0) / batch, dk = x.dim(1) / heads, d = x.dim(1);
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        std::copy_n(xd.data() + (b * t + i) * d + h * dk, dk,
                    out.data() + ((b * heads + h) * t + i) * dk);
  auto xn = x.node();
  return finish(make_node({batch * heads, t, dk}, std::move(out)), "split_heads",
                wants_grad({&x}), [xn, batch, heads, t, dk, d](Node& o) {
                  auto& dx = xn->ensure_grad();
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t i = 0; i < t; ++i) {
                        const double* src = o.grad.data() + ((b * heads + h) * t + i) * dk;
                        double* dst = dx.data() + (b * t + i) * d + h * dk;
                        for (std::size_t c = 0; c < dk; ++c) dst[c] += src[c];
                      }
                });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require(x.rank() == 3 && batch > 0 && x.dim(0) == batch * heads, "merge_heads",
          "cannot merge " + shape_string(x.shape()));
  const std::size_t t = x.dim(1), dk = x.dim(2), d = heads * dk;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        std::copy_n(xd.data() + ((b * heads + h) * t + i) * dk, dk,
                    out.data() + (b * t + i) * d + h * dk);
  auto xn = x.node();
  return finish(make_node({batch * t, d}, std::move(out)), "merge_heads", wants_grad({&x}),
                [xn, batch, heads, t, dk, d](Node& o) {
                  auto& dx = xn->ensure_grad();
                  for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t i = 0; i < t; ++i) {
                        const double* src = o.grad.data() + (b * t + i) * d + h * dk;
                        double* dst = dx.data() + ((b * heads + h) * t + i) * dk;
                        for (std::size_t c = 0; c < dk; ++c) dst[c] += src[c];
                      }
                });
}

Tensor block_rotate(const Tensor& x, const RopeCoefficients& coeffs) {
  require(x.rank() == 3 && x.dim(2) == 2 * coeffs.pairs && x.dim(1) <= coeffs.len,
          "block_rotate", "input " + shape_string(x.shape()) + " vs coefficients for " +
                              std::to_string(coeffs.len) + " positions");
  const std::size_t g = x.dim(0), t = x.dim(1), pairs = coeffs.pairs;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < g; ++b)
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < pairs; ++j) {
        const std::size_t at = (b * t + i) * 2 * pairs + 2 * j;
        const double c = coeffs.psi[i * pairs + j], s = coeffs.phi[i * pairs + j];
        out[at] = c * xd[at] - s * xd[at + 1];
        out[at + 1] = s * xd[at] + c * xd[at + 1];
      }
  auto xn = x.node();
  std::vector<double> psi(coeffs.psi.begin(), coeffs.psi.begin() + t * pairs);
  std::vector<double> phi(coeffs.phi.begin(), coeffs.phi.begin() + t * pairs);
  return finish(make_node(x.shape(), std::move(out)), "block_rotate", wants_grad({&x}),
                [xn, g, t, pairs, psi = std::move(psi), phi = std::move(phi)](Node& o) {
                  auto& dx = xn->ensure_grad();
                  for (std::size_t b = 0; b < g; ++b)
                    for (std::size_t i = 0; i < t; ++i)
                      for (std::size_t j = 0; j < pairs; ++j) {
                        const std::size_t at = (b * t + i) * 2 * pairs + 2 * j;
                        const double c = psi[i * pairs + j], s = phi[i * pairs + j];
                        dx[at] += c * o.grad[at] + s * o.grad[at + 1];
                        dx[at + 1] += -s * o.grad[at] + c * o.grad[at + 1];
                      }
                });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> mask(x.numel());
  for (auto& v : mask) v = unif(rng) < p ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  auto xn = x.node();
  return finish(make_node(x.shape(), std::move(out)), "dropout", wants_grad({&x}),
                [xn, mask = std::move(mask)](Node& o) {
                  auto& dx = xn->ensure_grad();
                  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i] * mask[i];
                });
}

Tensor cross_entropy_with_ignore(const Tensor& logits, std::span<const int> targets,
                                 int ignore_index) {
  const std::size_t v = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.numel() / v;
  require(targets.size() == rows, "cross_entropy_with_ignore",
          std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  std::vector<double> probs(logits.numel(), 0.0);
  const auto ld = logits.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw DataError("target index " + std::to_string(targets[r]) + " outside [0, " +
                      std::to_string(v) + ")");
    }
    const double* in = ld.data() + r * v;
    const double mx = *std::max_element(in, in + v);
    double z = 0.0;
    for (std::size_t c = 0; c < v; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    total += lse - in[targets[r]];
    double* p = probs.data() + r * v;
    for (std::size_t c = 0; c < v; ++c) p[c] = std::exp(in[c] - lse);
    ++count;
  }
  if (count == 0) throw DataError("cross entropy: every target position is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  auto ln = logits.node();
  std::vector<int> tg(targets.begin(), targets.end());
  return finish(make_node({1}, {total * inv}), "cross_entropy_with_ignore",
                wants_grad({&logits}),
                [ln, v, rows, inv, ignore_index, tg = std::move(tg),
                 probs = std::move(probs)](Node& o) {
                  auto& dl = ln->ensure_grad();
                  const double up = o.grad[0] * inv;
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (tg[r] == ignore_index) continue;
                    for (std::size_t c = 0; c < v; ++c) dl[r * v + c] += up * probs[r * v + c];
                    dl[r * v + static_cast<std::size_t>(tg[r])] -= up;
                  }
                });
}

}  // namespace altpe::ad
