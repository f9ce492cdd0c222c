#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace boklm::tensor {

/// Numeric precision of op outputs. f32 squeezes every op result through
/// float; f64 keeps full double precision (used by gradient checks).
enum class Precision { f32, f64 };

Precision default_precision();
void set_default_precision(Precision p);

struct PrecisionGuard {
  explicit PrecisionGuard(Precision p) : saved_(default_precision()) {
    set_default_precision(p);
  }
  ~PrecisionGuard() { set_default_precision(saved_); }
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

/// Dense tensor of rank <= 2 with value semantics over a shared buffer.
/// Gradients accumulate into `grad()` during Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng,
                      double stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int64_t size() const;
  int rows() const;  // 1 for rank-1 tensors
  int cols() const;  // size of the last axis

  std::vector<double>& data();
  const std::vector<double>& data() const;
  std::vector<double>& grad();  // allocates zeros on first use
  bool has_grad() const;
  bool requires_grad() const;
  void set_requires_grad(bool value);
  void zero_grad();

  double item() const;  // scalar tensors only
  double at(int i) const;
  double at(int r, int c) const;

  /// Deep copy of values; gradient state is not copied.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
  friend class Tape;
  friend Tensor make_op_output(std::vector<int> shape,
                               std::vector<double> data, bool requires_grad);
};

/// Dynamic (define-by-run) tape. At most one tape is active per thread;
/// ops executed while it is active record their backward rules in
/// execution order. backward() replays them in exact reverse and then
/// frees the recorded entries.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::function<void()> backward_fn);
  size_t num_ops() const { return entries_.size(); }

  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
};

// ---- forward op catalog ----------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor log(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int end);
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon);
Tensor gelu(const Tensor& a);
Tensor dropout(const Tensor& a, double rate, uint64_t seed);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Adds a length-m bias vector to every row of an [n x m] tensor.
Tensor add_bias(const Tensor& a, const Tensor& bias);
/// Picks a[rows[i], cols[i]] for each i into a rank-1 tensor.
Tensor select_index(const Tensor& a, const std::vector<int>& rows,
                    const std::vector<int>& cols);

// ---- gradient checking ------------------------------------------------

struct GradCheckReport {
  std::vector<double> max_rel_err;  // one entry per checked input
  double worst = 0.0;
};

using TensorProgram = std::function<Tensor(const std::vector<Tensor>&)>;

/// Central-difference check of every element of every input, in f64.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const TensorProgram& f,
                           const std::vector<Tensor>& inputs, double epsilon);

/// Same, probing a random sample of elements per input.
GradCheckReport grad_check_sampled(const TensorProgram& f,
                                   const std::vector<Tensor>& inputs,
                                   double epsilon, int probes_per_input,
                                   std::mt19937_64& rng);

}  // namespace boklm::tensor
