#include "mwp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mwp/errors.hpp"
#include "mwp/rng.hpp"

namespace mwp {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor shape has zero extent " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return full(Shape{1}, value); }

Tensor Tensor::from_vector(Shape shape, std::vector<double> data) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  if (shape_numel(shape) != data.size())
    throw DimensionError("data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::ndim() const { return node_->shape.size(); }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows(): tensor is not 2-d: " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols(): tensor is not 2-d: " + shape_str(shape()));
  return node_->shape[1];
}

double* Tensor::data() { return node_->data.data(); }
const double* Tensor::data() const { return node_->data.data(); }

double Tensor::item() const {
  if (numel() != 1)
    throw DimensionError("item(): tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("at(): index out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (ndim() != 2 || r >= rows() || c >= cols())
    throw DimensionError("at(r,c): index out of range for " + shape_str(shape()));
  return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }
bool Tensor::is_leaf() const { return !node_->produced; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

double* Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(numel(), 0.0);
  return node_->grad.data();
}

const double* Tensor::grad_data() const {
  return node_->grad.empty() ? nullptr : node_->grad.data();
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> fn) {
  output.node()->requires_grad = true;
  output.node()->produced = true;
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ValidationError("backward: loss must be a defined scalar tensor");
  for (auto& e : entries_) e.output.node()->grad.clear();
  Tensor seed = loss;
  seed.ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.node()->grad.empty()) it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

namespace {

bool grads_wanted(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

bool grads_wanted(const std::vector<Tensor>& inputs) {
  if (!g_active_tape) return false;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

const double* out_grad(const Tensor& out) {
  return out.node()->grad.empty() ? nullptr : out.node()->grad.data();
}

// Restricted broadcast plan for binary elementwise ops.
struct Broadcast {
  enum Kind { kSame, kScalarA, kScalarB, kRowA, kRowB } kind;
  Shape out_shape;
  std::size_t n = 0;  // output elements
  std::size_t d = 0;  // row width for the row-vector cases
};

bool is_row_of(const Tensor& row, const Tensor& full) {
  if (row.ndim() > 2) return false;
  if (row.ndim() == 2 && row.shape()[0] != 1) return false;
  std::size_t d = full.shape().back();
  return row.numel() == d && full.numel() % d == 0;
}

Broadcast plan_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast p;
  if (a.shape() == b.shape()) {
    p.kind = Broadcast::kSame;
    p.out_shape = a.shape();
  } else if (b.numel() == 1) {
    p.kind = Broadcast::kScalarB;
    p.out_shape = a.shape();
  } else if (a.numel() == 1) {
    p.kind = Broadcast::kScalarA;
    p.out_shape = b.shape();
  } else if (is_row_of(b, a)) {
    p.kind = Broadcast::kRowB;
    p.out_shape = a.shape();
    p.d = b.numel();
  } else if (is_row_of(a, b)) {
    p.kind = Broadcast::kRowA;
    p.out_shape = b.shape();
    p.d = a.numel();
  } else {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
  }
  p.n = shape_numel(p.out_shape);
  return p;
}

inline std::size_t map_a(const Broadcast& p, std::size_t i) {
  switch (p.kind) {
    case Broadcast::kScalarA: return 0;
    case Broadcast::kRowA: return i % p.d;
    default: return i;
  }
}

inline std::size_t map_b(const Broadcast& p, std::size_t i) {
  switch (p.kind) {
    case Broadcast::kScalarB: return 0;
    case Broadcast::kRowB: return i % p.d;
    default: return i;
  }
}

template <class F, class DA, class DB>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, F f, DA dfda,
                          DB dfdb) {
  Broadcast p = plan_broadcast(a, b, op);
  std::vector<double> out(p.n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < p.n; ++i) out[i] = f(pa[map_a(p, i)], pb[map_b(p, i)]);
  Tensor res = Tensor::from_vector(p.out_shape, std::move(out));
  if (grads_wanted({&a, &b})) {
    Tensor ac = a, bc = b, rc = res;
    g_active_tape->record({a, b}, res, [ac, bc, rc, p, dfda, dfdb]() {
      const double* g = out_grad(rc);
      if (!g) return;
      const double* pa = ac.data();
      const double* pb = bc.data();
      if (ac.requires_grad()) {
        Tensor t = ac;
        double* ga = t.ensure_grad();
        for (std::size_t i = 0; i < p.n; ++i) {
          std::size_t ia = map_a(p, i);
          ga[ia] += dfda(pa[ia], pb[map_b(p, i)]) * g[i];
        }
      }
      if (bc.requires_grad()) {
        Tensor t = bc;
        double* gb = t.ensure_grad();
        for (std::size_t i = 0; i < p.n; ++i) {
          std::size_t ib = map_b(p, i);
          gb[ib] += dfdb(pa[map_a(p, i)], pb[ib]) * g[i];
        }
      }
    });
  }
  return res;
}

template <class F, class DF>
Tensor unary_elementwise(const Tensor& x, F f, DF dfdx) {
  std::size_t n = x.numel();
  std::vector<double> out(n);
  const double* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc, n, dfdx]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      const double* px = t.data();
      const double* py = rc.data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += dfdx(px[i], py[i]) * g[i];
    });
  }
  return res;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul: expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = out.data() + i * n;
    const double* arow = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor res = Tensor::from_vector(Shape{m, n}, std::move(out));
  if (grads_wanted({&a, &b})) {
    Tensor ac = a, bc = b, rc = res;
    g_active_tape->record({a, b}, res, [ac, bc, rc, m, k, n]() {
      const double* g = out_grad(rc);
      if (!g) return;
      if (ac.requires_grad()) {
        Tensor t = ac;
        double* ga = t.ensure_grad();
        const double* pb = bc.data();
        // dA = dC * B^T : dA[i,kk] = sum_j dC[i,j] * B[kk,j]
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          double* garow = ga + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      }
      if (bc.requires_grad()) {
        Tensor t = bc;
        double* gb = t.ensure_grad();
        const double* pa = ac.data();
        // dB = A^T * dC : dB[kk,j] = sum_i A[i,kk] * dC[i,j]
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = pa + i * k;
          const double* grow = g + i * n;
          for (std::size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            double* gbrow = gb + kk * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return res;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_elementwise(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  if (g_active_tape) {
    const double* p = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) g_active_tape->note_kink(std::fabs(p[i]));
  }
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  if (g_active_tape) {
    const double* p = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) g_active_tape->note_kink(std::fabs(p[i]));
  }
  return unary_elementwise(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor gelu(const Tensor& x) {
  constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kB = 0.044715;
  return unary_elementwise(
      x,
      [](double v) {
        double u = kA * (v + kB * v * v * v);
        return 0.5 * v * (1.0 + std::tanh(u));
      },
      [](double v, double) {
        double u = kA * (v + kB * v * v * v);
        double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kA * (1.0 + 3.0 * kB * v * v);
      });
}

Tensor exp(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor ln1p(const Tensor& x) {
  const double* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (p[i] <= -1.0) throw DomainError("ln1p: input <= -1 at flat index " + std::to_string(i));
  return unary_elementwise(
      x, [](double v) { return std::log1p(v); },
      [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor softmax_lastdim(const Tensor& x) {
  std::size_t d = x.shape().back();
  std::size_t r = x.numel() / d;
  std::vector<double> out(x.numel());
  const double* px = x.data();
  for (std::size_t row = 0; row < r; ++row) {
    const double* in = px + row * d;
    double* o = out.data() + row * d;
    double mx = in[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= sum;
  }
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc, r, d]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      const double* y = rc.data();
      for (std::size_t row = 0; row < r; ++row) {
        const double* yr = y + row * d;
        const double* gr = g + row * d;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
        double* gxr = gx + row * d;
        for (std::size_t j = 0; j < d; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return res;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  std::size_t d = x.shape().back();
  if (d == 0 || gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) +
                         " elements matching the trailing dimension of " +
                         shape_str(x.shape()));
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  std::size_t r = x.numel() / d;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto invstd = std::make_shared<std::vector<double>>(r);
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  for (std::size_t row = 0; row < r; ++row) {
    const double* in = px + row * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    (*invstd)[row] = is;
    double* xh = xhat->data() + row * d;
    double* o = out.data() + row * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mean) * is;
      o[j] = pg[j] * xh[j] + pb[j];
    }
  }
  Tensor res = Tensor::from_vector(x.shape(), std::move(out));
  if (grads_wanted({&x, &gamma, &beta})) {
    Tensor xc = x, gc = gamma, bc = beta, rc = res;
    g_active_tape->record({x, gamma, beta}, res, [xc, gc, bc, rc, xhat, invstd, r, d]() {
      const double* g = out_grad(rc);
      if (!g) return;
      const double* xh = xhat->data();
      const double* pg = gc.data();
      if (gc.requires_grad()) {
        Tensor t = gc;
        double* gg = t.ensure_grad();
        for (std::size_t row = 0; row < r; ++row)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[row * d + j] * xh[row * d + j];
      }
      if (bc.requires_grad()) {
        Tensor t = bc;
        double* gb = t.ensure_grad();
        for (std::size_t row = 0; row < r; ++row)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[row * d + j];
      }
      if (xc.requires_grad()) {
        Tensor t = xc;
        double* gx = t.ensure_grad();
        std::vector<double> dxhat(d);
        for (std::size_t row = 0; row < r; ++row) {
          const double* gr = g + row * d;
          const double* xhr = xh + row * d;
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gr[j] * pg[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhr[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          double is = (*invstd)[row];
          double* gxr = gx + row * d;
          for (std::size_t j = 0; j < d; ++j)
            gxr[j] += is * (dxhat[j] - m1 - xhr[j] * m2);
        }
      }
    });
  }
  return res;
}

Tensor transpose(const Tensor& x) {
  std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const double* p = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = p[i * n + j];
  Tensor res = Tensor::from_vector(Shape{n, m}, std::move(out));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc, m, n]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return res;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  std::vector<double> out(x.data(), x.data() + x.numel());
  Tensor res = Tensor::from_vector(std::move(shape), std::move(out));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      for (std::size_t i = 0; i < t.numel(); ++i) gx[i] += g[i];
    });
  }
  return res;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  std::size_t m = x.rows(), n = x.cols();
  if (count == 0 || start + count > n)
    throw DimensionError("slice_cols: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + shape_str(x.shape()));
  std::vector<double> out(m * count);
  const double* p = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = p[i * n + start + j];
  Tensor res = Tensor::from_vector(Shape{m, count}, std::move(out));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc, m, n, start, count]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
    });
  }
  return res;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: empty input list");
  std::size_t m = xs[0].rows();
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (t.rows() != m)
      throw DimensionError("concat_cols: row counts differ: " + shape_str(t.shape()));
    total += t.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& t : xs) {
    std::size_t c = t.cols();
    const double* p = t.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + off + j] = p[i * c + j];
    off += c;
  }
  Tensor res = Tensor::from_vector(Shape{m, total}, std::move(out));
  if (grads_wanted(xs)) {
    std::vector<Tensor> copies = xs;
    Tensor rc = res;
    g_active_tape->record(xs, res, [copies, rc, m, total]() {
      const double* g = out_grad(rc);
      if (!g) return;
      std::size_t off = 0;
      for (const auto& t : copies) {
        std::size_t c = t.cols();
        if (t.requires_grad()) {
          Tensor tt = t;
          double* gx = tt.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return res;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows: empty input list");
  std::size_t n = xs[0].cols();
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (t.cols() != n)
      throw DimensionError("concat_rows: column counts differ: " + shape_str(t.shape()));
    total += t.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& t : xs) out.insert(out.end(), t.data(), t.data() + t.numel());
  Tensor res = Tensor::from_vector(Shape{total, n}, std::move(out));
  if (grads_wanted(xs)) {
    std::vector<Tensor> copies = xs;
    Tensor rc = res;
    g_active_tape->record(xs, res, [copies, rc]() {
      const double* g = out_grad(rc);
      if (!g) return;
      std::size_t off = 0;
      for (const auto& t : copies) {
        if (t.requires_grad()) {
          Tensor tt = t;
          double* gx = tt.ensure_grad();
          for (std::size_t i = 0; i < t.numel(); ++i) gx[i] += g[off + i];
        }
        off += t.numel();
      }
    });
  }
  return res;
}

Tensor select_row(const Tensor& table, std::size_t row) {
  std::size_t m = table.rows(), n = table.cols();
  if (row >= m)
    throw ValidationError("select_row: index " + std::to_string(row) + " out of range for " +
                          shape_str(table.shape()));
  std::vector<double> out(table.data() + row * n, table.data() + (row + 1) * n);
  Tensor res = Tensor::from_vector(Shape{1, n}, std::move(out));
  if (grads_wanted({&table})) {
    Tensor tc = table, rc = res;
    g_active_tape->record({table}, res, [tc, rc, row, n]() {
      const double* g = out_grad(rc);
      if (!g || !tc.requires_grad()) return;
      Tensor t = tc;
      double* gx = t.ensure_grad();
      for (std::size_t j = 0; j < n; ++j) gx[row * n + j] += g[j];
    });
  }
  return res;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  const double* p = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) s += p[i];
  Tensor res = Tensor::scalar(s);
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      for (std::size_t i = 0; i < t.numel(); ++i) gx[i] += g[0];
    });
  }
  return res;
}

Tensor mean_all(const Tensor& x) {
  std::size_t n = x.numel();
  double s = 0.0;
  const double* p = x.data();
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  Tensor res = Tensor::scalar(s / static_cast<double>(n));
  if (grads_wanted({&x})) {
    Tensor xc = x, rc = res;
    g_active_tape->record({x}, res, [xc, rc, n]() {
      const double* g = out_grad(rc);
      if (!g || !xc.requires_grad()) return;
      Tensor t = xc;
      double* gx = t.ensure_grad();
      double c = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) gx[i] += c;
    });
  }
  return res;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng* rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
  if (!rng) throw ValidationError("dropout: rng required in training mode");
  std::vector<double> mask(x.numel());
  double keep = 1.0 - p;
  for (auto& v : mask) v = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from_vector(x.shape(), std::move(mask)));
}

}  // namespace mwp
