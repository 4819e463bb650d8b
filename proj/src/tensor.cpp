#include "gns/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gns/errors.hpp"

namespace gns::ad {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

thread_local Tape* g_active_tape = nullptr;

ConstMatMap as_matrix(const Buffer& b, std::size_t rows, std::size_t cols) {
  return ConstMatMap(b.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(Buffer& b, std::size_t rows, std::size_t cols) {
  return MatMap(b.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstArrMap as_array(const Buffer& b) {
  return ConstArrMap(b.data(), static_cast<Eigen::Index>(b.size()));
}
ArrMap as_array(Buffer& b) { return ArrMap(b.data(), static_cast<Eigen::Index>(b.size())); }
ArrMap as_array_span(std::span<double> s) { return ArrMap(s.data(), static_cast<Eigen::Index>(s.size())); }
ConstArrMap as_array_span(std::span<const double> s) {
  return ConstArrMap(s.data(), static_cast<Eigen::Index>(s.size()));
}

std::size_t rows_of(const Node& n) { return n.shape.size() == 2 ? n.shape[0] : 1; }
std::size_t cols_of(const Node& n) {
  if (n.shape.size() == 2) return n.shape[1];
  return n.shape.empty() ? 1 : n.shape[0];
}

void require_matrix(const Tensor& t, std::string_view op, std::string_view arg) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor '" + std::string(arg) + "'");
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": '" + std::string(arg) + "' must be 2-D, got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.defined() || !b.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

std::shared_ptr<Node> make_output(Shape shape) {
  auto n = std::make_shared<Node>();
  n->values.resize(shape_numel(shape));
  n->shape = std::move(shape);
  n->is_leaf = false;
  return n;
}

void check_finite(const Buffer& b, std::string_view op, std::string_view what) {
  // A NaN or Inf anywhere makes the sum non-finite.
  if (!std::isfinite(as_array(b).sum())) {
    throw NumericalError(std::string(op) + ": non-finite " + std::string(what));
  }
}

/// Zero-initialized gradient buffer of a node, allocated on first use.
Buffer& grad_of(Node& n) {
  if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
  return n.grad;
}

/// Tape to record on, or nullptr when the op should run eagerly.
Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

Tensor finish(Tape* tape, std::string_view op, std::shared_ptr<Node> out,
              std::function<void()> backward) {
  check_finite(out->values, op, "output");
  if (tape != nullptr) {
    out->requires_grad = true;
    out->tape = tape;
    tape->record(op, out, std::move(backward));
  }
  return Tensor(std::move(out));
}

// Rational approximations of erf/erfc (W. J. Cody, 1969), evaluated for all
// three ranges and blended so the loop vectorizes.
constexpr double kErfA[5] = {3.16112374387056560e00, 1.13864154151050156e02,
                             3.77485237685302021e02, 3.20937758913846947e03,
                             1.85777706184603153e-1};
constexpr double kErfB[4] = {2.36012909523441209e01, 2.44024637934444173e02,
                             1.28261652607737228e03, 2.84423683343917062e03};
constexpr double kErfC[9] = {5.64188496988670089e-1, 8.88314979438837594e00,
                             6.61191906371416295e01, 2.98635138197400131e02,
                             8.81952221241769090e02, 1.71204761263407058e03,
                             2.05107837782607147e03, 1.23033935479799725e03,
                             2.15311535474403846e-8};
constexpr double kErfD[8] = {1.57449261107098347e01, 1.17693950891312499e02,
                             5.37181101862009858e02, 1.62138957456669019e03,
                             3.29079923573345963e03, 4.36261909014324716e03,
                             3.43936767414372164e03, 1.23033935480374942e03};
constexpr double kErfP[6] = {3.05326634961232344e-1, 3.60344899949804439e-1,
                             1.25781726111229246e-1, 1.60837851487422766e-2,
                             6.58749161529837803e-4, 1.63153871373020978e-2};
constexpr double kErfQ[5] = {2.56852019228982242e00, 1.87295284992346725e00,
                             5.27905102951428412e-1, 6.05183413124413191e-2,
                             2.33520497626869185e-3};
constexpr double kInvSqrtPi = 5.6418958354775628695e-1;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->values.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->values.size(), 0.0);
  return Tensor(std::move(n));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor: shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto t = zeros(std::move(shape), requires_grad);
  std::copy(values.begin(), values.end(), t.node_->values.begin());
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, std::span<const double>(&value, 1), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }
std::size_t Tensor::rows() const { return rows_of(*node_); }
std::size_t Tensor::cols() const { return cols_of(*node_); }
std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor is not a scalar " + shape_string(shape()));
  return node_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return grad_of(*node_); }

void Tensor::zero_grad() {
  if (node_->requires_grad) {
    node_->grad.assign(node_->values.size(), 0.0);
  } else {
    node_->grad.clear();
  }
}

Tensor Tensor::clone() const {
  return from_values(node_->shape, node_->values, node_->requires_grad);
}

// ---- Tape ------------------------------------------------------------------

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void Tape::record(std::string_view op, std::shared_ptr<detail::Node> output,
                  std::function<void()> backward) {
  entries_.push_back(Entry{op, std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  auto root = loss.node();
  if (root->tape != this) throw ContractError("backward: loss was not recorded on this tape");

  for (auto& e : entries_) Buffer().swap(e.output->grad);
  root->grad.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    check_finite(it->output->grad, it->op, "gradient");
    it->backward();
  }
}

void Tape::clear() { entries_.clear(); }

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul", "a");
  require_matrix(b, "matmul", "b");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  auto out = make_output({m, n});
  as_matrix(out->values, m, n).noalias() = as_matrix(a.node()->values, m, k) * as_matrix(b.node()->values, k, n);
  Tape* tape = recording_tape({&a, &b});
  std::function<void()> bw;
  if (tape) {
    bw = [an = a.node(), bn = b.node(), o = out.get(), m, k, n] {
      auto g = as_matrix(o->grad, m, n);
      if (an->requires_grad) as_matrix(grad_of(*an), m, k).noalias() += g * as_matrix(bn->values, k, n).transpose();
      if (bn->requires_grad) as_matrix(grad_of(*bn), k, n).noalias() += as_matrix(an->values, m, k).transpose() * g;
    };
  }
  return finish(tape, "matmul", std::move(out), std::move(bw));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(x, "linear", "x");
  require_matrix(weight, "linear", "weight");
  const std::size_t m = x.rows(), k = x.cols(), n = weight.cols();
  if (weight.rows() != k) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(weight.shape()));
  }
  if (bias.numel() != n) {
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match width " +
                         std::to_string(n));
  }
  auto out = make_output({m, n});
  auto o = as_matrix(out->values, m, n);
  o.noalias() = as_matrix(x.node()->values, m, k) * as_matrix(weight.node()->values, k, n);
  o.rowwise() += as_matrix(bias.node()->values, 1, n).row(0);
  Tape* tape = recording_tape({&x, &weight, &bias});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), wn = weight.node(), bn = bias.node(), on = out.get(), m, k, n] {
      auto g = as_matrix(on->grad, m, n);
      if (xn->requires_grad) as_matrix(grad_of(*xn), m, k).noalias() += g * as_matrix(wn->values, k, n).transpose();
      if (wn->requires_grad) as_matrix(grad_of(*wn), k, n).noalias() += as_matrix(xn->values, m, k).transpose() * g;
      if (bn->requires_grad) as_matrix(grad_of(*bn), 1, n) += g.colwise().sum();
    };
  }
  return finish(tape, "linear", std::move(out), std::move(bw));
}

namespace {
Tensor add_scaled(const Tensor& a, const Tensor& b, double sign, std::string_view op) {
  require_same_shape(a, b, op);
  auto out = make_output(a.shape());
  if (sign > 0) {
    as_array(out->values) = as_array(a.node()->values) + as_array(b.node()->values);
  } else {
    as_array(out->values) = as_array(a.node()->values) - as_array(b.node()->values);
  }
  Tape* tape = recording_tape({&a, &b});
  std::function<void()> bw;
  if (tape) {
    bw = [an = a.node(), bn = b.node(), o = out.get(), sign] {
      if (an->requires_grad) as_array(grad_of(*an)) += as_array(o->grad);
      if (bn->requires_grad) as_array(grad_of(*bn)) += sign * as_array(o->grad);
    };
  }
  return finish(tape, op, std::move(out), std::move(bw));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_scaled(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, -1.0, "sub"); }

Tensor scale(const Tensor& a, double factor) {
  auto out = make_output(a.shape());
  as_array(out->values) = factor * as_array(a.node()->values);
  Tape* tape = recording_tape({&a});
  std::function<void()> bw;
  if (tape) {
    bw = [an = a.node(), o = out.get(), factor] { as_array(grad_of(*an)) += factor * as_array(o->grad); };
  }
  return finish(tape, "scale", std::move(out), std::move(bw));
}

void erf_inplace(std::span<double> xs) {
  // Cody's three rational approximations, each written as num/den so a single
  // division serves whichever range an element falls in.
  constexpr std::size_t kChunk = 256;
  alignas(64) double e[kChunk];
  alignas(64) double r[kChunk];
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, xs.size() - start);
    double* x = xs.data() + start;
    for (std::size_t i = 0; i < len; ++i) {
      const double y = std::abs(x[i]);
      // |x| <= 0.46875: erf = x·A(y²)/B(y²)
      const double s = std::min(y * y, 0.25);
      double an = kErfA[4] * s, bd = s;
      for (int k = 0; k < 3; ++k) {
        an = (an + kErfA[k]) * s;
        bd = (bd + kErfB[k]) * s;
      }
      an += kErfA[3];
      bd += kErfB[3];
      // 0.46875 < |x| <= 4: erfc = exp(-x²)·C(y)/D(y)
      const double m = std::min(y, 4.0);
      double cn = kErfC[8] * m, dd = m;
      for (int k = 0; k < 7; ++k) {
        cn = (cn + kErfC[k]) * m;
        dd = (dd + kErfD[k]) * m;
      }
      cn += kErfC[7];
      dd += kErfD[7];
      // |x| > 4: erfc = exp(-x²)/y·(1/√π - z·P(z)/Q(z)) with z = 1/y²,
      // multiplied through by w⁵ (w = y²) to stay polynomial in w
      const double t = std::clamp(y, 4.0, 32.0);
      const double w = t * t;
      double pn = kErfP[4] * w + kErfP[3], qd = kErfQ[4] * w + kErfQ[3];
      for (int k = 2; k >= 0; --k) {
        pn = pn * w + kErfP[k];
        qd = qd * w + kErfQ[k];
      }
      pn = pn * w + kErfP[5];
      qd = qd * w + 1.0;
      const double tn = kInvSqrtPi * w * qd - pn, td = w * qd * t;

      const bool small = y <= 0.46875, mid = y <= 4.0;
      r[i] = (small ? an : (mid ? cn : tn)) / (small ? bd : (mid ? dd : td));
      e[i] = -y * y;
    }
    ArrMap ex(e, static_cast<Eigen::Index>(len));
    ex = ex.exp();
    for (std::size_t i = 0; i < len; ++i) {
      const double large = std::copysign(1.0 - e[i] * r[i], x[i]);
      x[i] = std::abs(x[i]) <= 0.46875 ? x[i] * r[i] : large;
    }
  }
}

Tensor gelu(const Tensor& x) {
  auto out = make_output(x.shape());
  const Buffer& xv = x.node()->values;
  Buffer cdf(xv.size());
  as_array(cdf) = as_array(xv) * kInvSqrt2;
  erf_inplace(cdf);
  as_array(cdf) = 0.5 * (1.0 + as_array(cdf));
  as_array(out->values) = as_array(xv) * as_array(cdf);
  Tape* tape = recording_tape({&x});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), o = out.get(), cdf = std::move(cdf)] {
      auto xa = as_array(xn->values);
      const Eigen::ArrayXd pdf = kInvSqrt2Pi * (-0.5 * xa.square()).exp();
      as_array(grad_of(*xn)) += as_array(o->grad) * (as_array(cdf) + xa * pdf);
    };
  }
  return finish(tape, "gelu", std::move(out), std::move(bw));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_matrix(x, "layer_norm", "x");
  const std::size_t n = x.rows(), d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: degenerate normalization over " + std::to_string(d) + " feature(s)");
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(d));
  }
  auto out = make_output({n, d});
  Buffer xhat(n * d);
  Buffer rstd(n);
  {
    const auto X = as_matrix(x.node()->values, n, d);
    auto xh = as_matrix(xhat, n, d);
    auto rs = as_matrix(rstd, n, 1);
    xh = X.colwise() - X.rowwise().mean();
    rs = (xh.array().square().rowwise().mean() + kLayerNormEpsilon).rsqrt().matrix();
    xh.array().colwise() *= rs.col(0).array();
    const auto g = as_matrix(gamma.node()->values, 1, d).row(0).array();
    const auto b = as_matrix(beta.node()->values, 1, d).row(0).array();
    as_matrix(out->values, n, d).array() = (xh.array().rowwise() * g).rowwise() + b;
  }
  Tape* tape = recording_tape({&x, &gamma, &beta});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), gn = gamma.node(), bn = beta.node(), o = out.get(), xhat = std::move(xhat),
          rstd = std::move(rstd), n, d] {
      const auto G = as_matrix(o->grad, n, d);
      const auto xh = as_matrix(xhat, n, d);
      if (gn->requires_grad) {
        as_matrix(grad_of(*gn), 1, d) += (G.array() * xh.array()).colwise().sum().matrix();
      }
      if (bn->requires_grad) as_matrix(grad_of(*bn), 1, d) += G.colwise().sum();
      if (!xn->requires_grad) return;
      const RowMat dxh = (G.array().rowwise() * as_matrix(gn->values, 1, d).row(0).array()).matrix();
      const Eigen::VectorXd mean_dxh = dxh.rowwise().mean();
      const Eigen::VectorXd mean_dxh_xh = (dxh.array() * xh.array()).rowwise().mean().matrix();
      auto gx = as_matrix(grad_of(*xn), n, d);
      gx.array() += (((dxh.colwise() - mean_dxh).array() - xh.array().colwise() * mean_dxh_xh.array())
                         .colwise() *
                     as_matrix(rstd, n, 1).col(0).array());
    };
  }
  return finish(tape, "layer_norm", std::move(out), std::move(bw));
}

Tensor gather_rows(const Tensor& x, std::span<const Index> idx) {
  require_matrix(x, "gather_rows", "x");
  const std::size_t n = x.rows(), d = x.cols(), e = idx.size();
  for (Index i : idx) {
    if (i >= n) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " + std::to_string(n) + " rows");
    }
  }
  auto out = make_output({e, d});
  const double* xv = x.node()->values.data();
  double* ov = out->values.data();
  for (std::size_t r = 0; r < e; ++r) std::copy_n(xv + idx[r] * d, d, ov + r * d);
  Tape* tape = recording_tape({&x});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), o = out.get(), ids = std::vector<Index>(idx.begin(), idx.end()), d] {
      double* gx = grad_of(*xn).data();
      const double* g = o->grad.data();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        double* dst = gx + ids[r] * d;
        const double* src = g + r * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return finish(tape, "gather_rows", std::move(out), std::move(bw));
}

Tensor scatter_mean(const Tensor& msgs, std::span<const Index> receivers, std::size_t n) {
  require_matrix(msgs, "scatter_mean", "msgs");
  const std::size_t e = msgs.rows(), d = msgs.cols();
  if (receivers.size() != e) {
    throw DimensionError("scatter_mean: " + std::to_string(receivers.size()) + " receivers for " +
                         std::to_string(e) + " messages");
  }
  std::vector<double> inv_degree(n, 0.0);
  for (Index r : receivers) {
    if (r >= n) throw IndexError("scatter_mean: receiver " + std::to_string(r) + " out of range for " + std::to_string(n));
    inv_degree[r] += 1.0;
  }
  for (double& v : inv_degree) v = v > 0.0 ? 1.0 / v : 0.0;

  auto out = make_output({n, d});
  std::fill(out->values.begin(), out->values.end(), 0.0);
  const double* mv = msgs.node()->values.data();
  double* ov = out->values.data();
  for (std::size_t i = 0; i < e; ++i) {
    double* dst = ov + receivers[i] * d;
    const double* src = mv + i * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  for (std::size_t v = 0; v < n; ++v) {
    double* row = ov + v * d;
    for (std::size_t j = 0; j < d; ++j) row[j] *= inv_degree[v];
  }
  Tape* tape = recording_tape({&msgs});
  std::function<void()> bw;
  if (tape) {
    bw = [mn = msgs.node(), o = out.get(), recv = std::vector<Index>(receivers.begin(), receivers.end()),
          inv_degree = std::move(inv_degree), d] {
      double* gm = grad_of(*mn).data();
      const double* g = o->grad.data();
      for (std::size_t i = 0; i < recv.size(); ++i) {
        const double w = inv_degree[recv[i]];
        const double* src = g + recv[i] * d;
        double* dst = gm + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
      }
    };
  }
  return finish(tape, "scatter_mean", std::move(out), std::move(bw));
}

namespace {

constexpr std::size_t kTileRows = 256;

/// cdf = Φ(a) for a tile.
void normal_cdf(std::span<const double> a, std::span<double> cdf) {
  as_array_span(cdf) = as_array_span(a) * kInvSqrt2;
  erf_inplace(cdf);
  as_array_span(cdf) = 0.5 * (1.0 + as_array_span(cdf));
}

}  // namespace

Tensor fused_mlp2(std::span<const MlpPart> parts, std::size_t rows, const Tensor& w1, const Tensor& b1,
                  const Tensor& w2, const Tensor& b2) {
  constexpr std::string_view op = "fused_mlp2";
  require_matrix(w1, op, "w1");
  require_matrix(w2, op, "w2");
  const std::size_t hidden = w1.cols(), out_w = w2.cols();
  if (w2.rows() != hidden || b1.numel() != hidden || b2.numel() != out_w) {
    throw DimensionError("fused_mlp2: layer shapes " + shape_string(w1.shape()) + ", " + shape_string(w2.shape()) +
                         " and biases do not chain");
  }
  struct PartInfo {
    std::shared_ptr<Node> x;
    std::vector<Index> rows;
    std::size_t offset, width, x_rows;
  };
  std::vector<PartInfo> info;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    require_matrix(p.x, op, "part");
    if (p.rows.empty()) {
      if (p.x.rows() != rows) throw DimensionError("fused_mlp2: part has " + std::to_string(p.x.rows()) + " rows, expected " + std::to_string(rows));
    } else {
      if (p.rows.size() != rows) throw DimensionError("fused_mlp2: row map length does not match output rows");
      for (Index i : p.rows) {
        if (i >= p.x.rows()) throw IndexError("fused_mlp2: row index " + std::to_string(i) + " out of range");
      }
    }
    info.push_back({p.x.node(), std::vector<Index>(p.rows.begin(), p.rows.end()), offset, p.x.cols(), p.x.rows()});
    offset += p.x.cols();
  }
  if (offset != w1.rows()) {
    throw DimensionError("fused_mlp2: input widths sum to " + std::to_string(offset) + " but w1 has " +
                         std::to_string(w1.rows()) + " rows");
  }

  const auto W1 = as_matrix(w1.node()->values, w1.rows(), hidden);
  const auto W2 = as_matrix(w2.node()->values, hidden, out_w);
  const auto B1 = as_matrix(b1.node()->values, 1, hidden).row(0);
  const auto B2 = as_matrix(b2.node()->values, 1, out_w).row(0);

  // Gathered parts are projected once at their own (smaller) row count.
  std::vector<RowMat> projected(info.size());
  for (std::size_t k = 0; k < info.size(); ++k) {
    if (info[k].rows.empty()) continue;
    projected[k].noalias() = as_matrix(info[k].x->values, info[k].x_rows, info[k].width) *
                             W1.middleRows(info[k].offset, info[k].width);
  }

  auto out = make_output({rows, out_w});
  Buffer pre(rows * hidden), cdf(rows * hidden);
  RowMat act(kTileRows, hidden);
  for (std::size_t r0 = 0; r0 < rows; r0 += kTileRows) {
    const std::size_t t = std::min(kTileRows, rows - r0);
    MatMap a(pre.data() + r0 * hidden, t, hidden);
    a.rowwise() = B1;
    for (std::size_t k = 0; k < info.size(); ++k) {
      const auto& p = info[k];
      if (p.rows.empty()) {
        a.noalias() += ConstMatMap(p.x->values.data() + r0 * p.width, t, p.width) * W1.middleRows(p.offset, p.width);
      } else {
        for (std::size_t i = 0; i < t; ++i) a.row(i) += projected[k].row(p.rows[r0 + i]);
      }
    }
    normal_cdf({pre.data() + r0 * hidden, t * hidden}, {cdf.data() + r0 * hidden, t * hidden});
    auto g = act.topRows(t);
    g.array() = a.array() * ConstMatMap(cdf.data() + r0 * hidden, t, hidden).array();
    MatMap o(out->values.data() + r0 * out_w, t, out_w);
    o.noalias() = g * W2;
    o.rowwise() += B2;
  }

  std::vector<const Tensor*> inputs{&w1, &b1, &w2, &b2};
  for (const auto& p : parts) inputs.push_back(&p.x);
  Tape* tape = nullptr;
  if (g_active_tape != nullptr) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) tape = g_active_tape;
    }
  }
  std::function<void()> bw;
  if (tape) {
    bw = [info = std::move(info), w1n = w1.node(), b1n = b1.node(), w2n = w2.node(), b2n = b2.node(),
          o = out.get(), pre = std::move(pre), cdf = std::move(cdf), rows, hidden, out_w] {
      const auto W1 = as_matrix(w1n->values, w1n->shape[0], hidden);
      const auto W2 = as_matrix(w2n->values, hidden, out_w);
      std::vector<RowMat> dproj(info.size());
      for (std::size_t k = 0; k < info.size(); ++k) {
        if (!info[k].rows.empty()) dproj[k] = RowMat::Zero(info[k].x_rows, hidden);
      }
      RowMat dw1 = RowMat::Zero(W1.rows(), hidden), dw2 = RowMat::Zero(hidden, out_w);
      Eigen::RowVectorXd db1 = Eigen::RowVectorXd::Zero(hidden), db2 = Eigen::RowVectorXd::Zero(out_w);
      RowMat g(kTileRows, hidden), da(kTileRows, hidden);
      for (std::size_t r0 = 0; r0 < rows; r0 += kTileRows) {
        const std::size_t t = std::min(kTileRows, rows - r0);
        const ConstMatMap a(pre.data() + r0 * hidden, t, hidden);
        const ConstMatMap c(cdf.data() + r0 * hidden, t, hidden);
        const ConstMatMap dy(o->grad.data() + r0 * out_w, t, out_w);
        auto gt = g.topRows(t);
        auto dat = da.topRows(t);
        gt.array() = a.array() * c.array();
        dw2.noalias() += gt.transpose() * dy;
        db2 += dy.colwise().sum();
        dat.noalias() = dy * W2.transpose();
        dat.array() *= c.array() + a.array() * (kInvSqrt2Pi * (-0.5 * a.array().square()).exp());
        db1 += dat.colwise().sum();
        for (std::size_t k = 0; k < info.size(); ++k) {
          const auto& p = info[k];
          if (p.rows.empty()) {
            const ConstMatMap x(p.x->values.data() + r0 * p.width, t, p.width);
            dw1.middleRows(p.offset, p.width).noalias() += x.transpose() * dat;
            if (p.x->requires_grad) {
              MatMap(grad_of(*p.x).data() + r0 * p.width, t, p.width).noalias() +=
                  dat * W1.middleRows(p.offset, p.width).transpose();
            }
          } else {
            for (std::size_t i = 0; i < t; ++i) dproj[k].row(p.rows[r0 + i]) += dat.row(i);
          }
        }
      }
      for (std::size_t k = 0; k < info.size(); ++k) {
        const auto& p = info[k];
        if (p.rows.empty()) continue;
        const auto x = as_matrix(p.x->values, p.x_rows, p.width);
        dw1.middleRows(p.offset, p.width).noalias() += x.transpose() * dproj[k];
        if (p.x->requires_grad) {
          as_matrix(grad_of(*p.x), p.x_rows, p.width).noalias() += dproj[k] * W1.middleRows(p.offset, p.width).transpose();
        }
      }
      if (w1n->requires_grad) as_matrix(grad_of(*w1n), W1.rows(), hidden) += dw1;
      if (w2n->requires_grad) as_matrix(grad_of(*w2n), hidden, out_w) += dw2;
      if (b1n->requires_grad) as_matrix(grad_of(*b1n), 1, hidden) += db1;
      if (b2n->requires_grad) as_matrix(grad_of(*b2n), 1, out_w) += db2;
    };
  }
  return finish(tape, op, std::move(out), std::move(bw));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols", "part");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  auto out = make_output({n, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    as_matrix(out->values, n, total).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(widths[k])) =
        as_matrix(parts[k].node()->values, n, widths[k]);
    offset += widths[k];
  }
  Tape* tape = g_active_tape;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (!any) tape = nullptr;
  std::function<void()> bw;
  if (tape) {
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    bw = [nodes = std::move(nodes), widths, o = out.get(), n, total] {
      std::size_t off = 0;
      auto g = as_matrix(o->grad, n, total);
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k]->requires_grad) {
          as_matrix(grad_of(*nodes[k]), n, widths[k]) +=
              g.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[k]));
        }
        off += widths[k];
      }
    };
  }
  return finish(tape, "concat_cols", std::move(out), std::move(bw));
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows", "x");
  if (begin > end || end > x.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     std::to_string(x.rows()) + " rows");
  }
  const std::size_t d = x.cols();
  auto out = make_output({end - begin, d});
  std::copy_n(x.node()->values.data() + begin * d, (end - begin) * d, out->values.data());
  Tape* tape = recording_tape({&x});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), o = out.get(), begin, d] {
      double* gx = grad_of(*xn).data() + begin * d;
      for (std::size_t i = 0; i < o->grad.size(); ++i) gx[i] += o->grad[i];
    };
  }
  return finish(tape, "slice_rows", std::move(out), std::move(bw));
}

Tensor sum(const Tensor& x) {
  auto out = make_output({});
  out->values[0] = as_array(x.node()->values).sum();
  Tape* tape = recording_tape({&x});
  std::function<void()> bw;
  if (tape) {
    bw = [xn = x.node(), o = out.get()] { as_array(grad_of(*xn)) += o->grad[0]; };
  }
  return finish(tape, "sum", std::move(out), std::move(bw));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  const double count = static_cast<double>(pred.numel());
  auto out = make_output({});
  out->values[0] = (as_array(pred.node()->values) - as_array(target.node()->values)).square().sum() / count;
  Tape* tape = recording_tape({&pred, &target});
  std::function<void()> bw;
  if (tape) {
    bw = [pn = pred.node(), tn = target.node(), o = out.get(), count] {
      const double w = 2.0 * o->grad[0] / count;
      if (pn->requires_grad) as_array(grad_of(*pn)) += w * (as_array(pn->values) - as_array(tn->values));
      if (tn->requires_grad) as_array(grad_of(*tn)) -= w * (as_array(pn->values) - as_array(tn->values));
    };
  }
  return finish(tape, "mse_loss", std::move(out), std::move(bw));
}

// ---- Adam ------------------------------------------------------------------

AdamState::AdamState(AdamHyper h, std::span<const Tensor> params) : hyper(h) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.numel(), 0.0);
    second_moment.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: parameter, gradient and state counts differ");
  }
  state.step += 1;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_values();
    const auto g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (g.size() != p.size() || m.size() != p.size()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      p[j] -= h.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.epsilon);
    }
  }
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  std::vector<std::vector<double>> zeros;
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  zeros.reserve(params.size());
  for (auto& p : params) {
    if (p.grad().size() == p.numel()) {
      grads.push_back(p.grad());
    } else {
      zeros.emplace_back(p.numel(), 0.0);
      grads.push_back(zeros.back());
    }
  }
  adam_step(params, grads, state);
}

}  // namespace gns::ad
