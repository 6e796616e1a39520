#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mwp {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense 64-bit float n-d array with optional participation in reverse-mode
// differentiation. Copies share storage. Payloads are written only at
// construction, by gradient accumulation and by the optimizer update path.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(Shape shape, std::vector<double> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const;
  std::size_t numel() const;
  std::size_t rows() const;  // 2-d convenience accessors
  std::size_t cols() const;

  double* data();
  const double* data() const;
  double item() const;  // numel() == 1
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool is_leaf() const;  // not produced by a recorded operation

  bool has_grad() const;
  double* ensure_grad();            // allocates zero-filled storage on demand
  const double* grad_data() const;  // nullptr when absent
  void zero_grad();

  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until used
    bool requires_grad = false;
    bool produced = false;
  };

  Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

// Ordered record of forward operations for one backward sweep. A tape is
// single-threaded; independent tapes may run on separate threads because the
// active tape pointer is thread-local.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and walks entries in reverse. Repeated calls
  // accumulate into leaf gradients; intermediate gradients are reset per call.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }

  // Smallest |pre-activation| observed by kinked ops (relu, abs) while this
  // tape was active. Finite-difference checks use it to reject sample points
  // near non-differentiable kinks.
  double min_kink_distance() const { return min_kink_; }
  void note_kink(double d) {
    if (d < min_kink_) min_kink_ = d;
  }

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> fn);

  static Tape* active();

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  double min_kink_ = 1e300;
};

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Matrix product of 2-d tensors [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with restricted broadcasting: identical shapes, scalar on
// either side, or a length-d vector against the trailing dimension d.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor exp(const Tensor& x);
Tensor ln1p(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor transpose(const Tensor& x);  // 2-d
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor select_row(const Tensor& table, std::size_t row);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Inverted dropout as a recorded mask multiply; identity when not training
// or p == 0. Consumes numel() uniform draws when active.
class Rng;
Tensor dropout(const Tensor& x, double p, bool training, Rng* rng);

}  // namespace mwp
