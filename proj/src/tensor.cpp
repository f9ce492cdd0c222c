#include "boklm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace boklm::tensor {

namespace {

Precision g_precision = Precision::f32;
thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("tensor: " + msg);
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ' ';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

int64_t numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void round_mode(std::vector<double>& values) {
  if (g_precision == Precision::f32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
         " vs " + shape_str(b.shape()));
  }
}

bool tape_wants_grad(const std::initializer_list<const Tensor*>& inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Precision default_precision() { return g_precision; }
void set_default_precision(Precision p) { g_precision = p; }

Tensor make_op_output(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Tensor::Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  std::vector<double> data(numel(shape), 0.0);
  return make_op_output(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  std::vector<double> data(numel(shape), value);
  round_mode(data);
  return make_op_output(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    fail("from_data: " + shape_str(shape) + " needs " +
         std::to_string(numel(shape)) + " values, got " +
         std::to_string(data.size()));
  }
  return make_op_output(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, std::mt19937_64& rng,
                     double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  round_mode(data);
  return make_op_output(std::move(shape), std::move(data), requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  if (!impl_) fail("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::size() const { return numel(shape()); }

int Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

int Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 0 : s.back();
}

std::vector<double>& Tensor::data() {
  if (!impl_) fail("use of undefined tensor");
  return impl_->data;
}

const std::vector<double>& Tensor::data() const {
  if (!impl_) fail("use of undefined tensor");
  return impl_->data;
}

std::vector<double>& Tensor::grad() {
  if (!impl_) fail("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!impl_) fail("use of undefined tensor");
  impl_->requires_grad = value;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

double Tensor::item() const {
  if (size() != 1) fail("item() on non-scalar tensor " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(int i) const { return data().at(i); }

double Tensor::at(int r, int c) const {
  if (shape().size() != 2) fail("at(r, c) on non-matrix tensor");
  return data()[static_cast<size_t>(r) * cols() + c];
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return make_op_output(impl_->shape, impl_->data, false);
}

// ---- tape ---------------------------------------------------------------

Tape::Tape() {
  if (g_active_tape) fail("a tape is already active on this thread");
  g_active_tape = this;
}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    fail("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();  // tape freed after backward
}

// ---- elementwise ops ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a, &b}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, b = b, y = y]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a, &b}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, b = b, y = y]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a, &b}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, b = b, y = y]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bd2 = b.data();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd2[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& ad2 = a.data();
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad2[i];
      }
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + s;
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return y;
}

Tensor mul_scalar(const Tensor& a, double s) {
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * s;
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, s]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    });
  }
  return y;
}

Tensor log(const Tensor& a) {
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = std::log(ad[i]);
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      const auto& ad2 = a.data();
      auto& ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / ad2[i];
    });
  }
  return y;
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) {
    out[i] = ad[i] * 0.5 * (1.0 + std::erf(ad[i] * kInvSqrt2));
  }
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      const auto& ad2 = a.data();
      auto& ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) {
        const double x = ad2[i];
        const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += go[i] * (phi + x * pdf);
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& a, double rate, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;  // identity, no rng consumed

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double scale = 1.0 / (1.0 - rate);
  const auto& ad = a.data();
  auto mask = std::make_shared<std::vector<double>>(ad.size());
  std::vector<double> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) {
    (*mask)[i] = uniform(rng) >= rate ? scale : 0.0;
    out[i] = ad[i] * (*mask)[i];
  }
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, mask]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*mask)[i];
    });
  }
  return y;
}

// ---- matrix ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0]) {
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
  }
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* ar = ad + static_cast<size_t>(i) * k;
    double* cr = out.data() + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = ar[l];
      const double* br = bd + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
  round_mode(out);
  Tensor y = make_op_output({m, n}, std::move(out), tape_wants_grad({&a, &b}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, b = b, y = y, m, k, n]() mutable {
      if (!y.has_grad()) return;
      const double* go = y.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        const double* bd2 = b.data().data();
        for (int i = 0; i < m; ++i) {
          const double* gr = go + static_cast<size_t>(i) * n;
          double* gar = ga + static_cast<size_t>(i) * k;
          for (int l = 0; l < k; ++l) {
            const double* br = bd2 + static_cast<size_t>(l) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += gr[j] * br[j];
            gar[l] += s;
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        const double* ad2 = a.data().data();
        for (int i = 0; i < m; ++i) {
          const double* ar = ad2 + static_cast<size_t>(i) * k;
          const double* gr = go + static_cast<size_t>(i) * n;
          for (int l = 0; l < k; ++l) {
            const double av = ar[l];
            double* gbr = gb + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) gbr[j] += av * gr[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.shape().size() != 2) fail("transpose: needs a rank-2 tensor");
  const int m = a.shape()[0], n = a.shape()[1];
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<size_t>(j) * m + i] = ad[static_cast<size_t>(i) * n + j];
    }
  }
  Tensor y = make_op_output({n, m}, std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, m, n]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
          ga[static_cast<size_t>(i) * n + j] +=
              go[static_cast<size_t>(j) * m + i];
        }
      }
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  const int rank = static_cast<int>(parts[0].shape().size());
  if (axis < 0 || axis >= rank) fail("concat: bad axis");

  std::vector<int> shape = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    if (static_cast<int>(p.shape().size()) != rank) {
      fail("concat: rank mismatch");
    }
    for (int d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[d] != shape[d]) {
        fail("concat: shape mismatch " + shape_str(shape) + " vs " +
             shape_str(p.shape()));
      }
    }
    total += p.shape()[axis];
  }
  shape[axis] = total;

  std::vector<double> out(numel(shape));
  std::vector<int> offsets(parts.size());
  if (rank == 1 || axis == 0) {
    size_t pos = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = static_cast<int>(pos);
      const auto& d = parts[p].data();
      std::copy(d.begin(), d.end(), out.begin() + pos);
      pos += d.size();
    }
  } else {  // rank 2, axis 1
    const int rows = shape[0];
    int col = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = col;
      const int pc = parts[p].shape()[1];
      const auto& d = parts[p].data();
      for (int r = 0; r < rows; ++r) {
        std::copy(d.begin() + static_cast<size_t>(r) * pc,
                  d.begin() + static_cast<size_t>(r + 1) * pc,
                  out.begin() + static_cast<size_t>(r) * total + col);
      }
      col += pc;
    }
  }

  bool wants = false;
  if (Tape::active()) {
    for (const Tensor& p : parts) wants = wants || p.requires_grad();
  }
  Tensor y = make_op_output(shape, std::move(out), wants);
  if (y.requires_grad()) {
    Tape::active()->record([parts = parts, y = y, offsets, axis, total]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      const int rank2 = static_cast<int>(parts[0].shape().size());
      for (size_t p = 0; p < parts.size(); ++p) {
        if (!parts[p].requires_grad()) continue;
        auto& gp = parts[p].grad();
        if (rank2 == 1 || axis == 0) {
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += go[offsets[p] + i];
        } else {
          const int rows = parts[p].shape()[0];
          const int pc = parts[p].shape()[1];
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < pc; ++c) {
              gp[static_cast<size_t>(r) * pc + c] +=
                  go[static_cast<size_t>(r) * total + offsets[p] + c];
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& a, int axis, int start, int end) {
  const int rank = static_cast<int>(a.shape().size());
  if (axis < 0 || axis >= rank) fail("slice: bad axis");
  if (start < 0 || end > a.shape()[axis] || start >= end) {
    fail("slice: bad range [" + std::to_string(start) + ", " +
         std::to_string(end) + ") for axis extent " +
         std::to_string(a.shape()[axis]));
  }
  std::vector<int> shape = a.shape();
  shape[axis] = end - start;
  const auto& ad = a.data();
  std::vector<double> out(numel(shape));
  if (rank == 1) {
    std::copy(ad.begin() + start, ad.begin() + end, out.begin());
  } else if (axis == 0) {
    const int n = a.shape()[1];
    std::copy(ad.begin() + static_cast<size_t>(start) * n,
              ad.begin() + static_cast<size_t>(end) * n, out.begin());
  } else {
    const int m = a.shape()[0], n = a.shape()[1], w = end - start;
    for (int r = 0; r < m; ++r) {
      std::copy(ad.begin() + static_cast<size_t>(r) * n + start,
                ad.begin() + static_cast<size_t>(r) * n + end,
                out.begin() + static_cast<size_t>(r) * w);
    }
  }
  Tensor y = make_op_output(shape, std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, axis, start, rank]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      if (rank == 1) {
        for (size_t i = 0; i < go.size(); ++i) ga[start + i] += go[i];
      } else if (axis == 0) {
        const int n = a.shape()[1];
        for (size_t i = 0; i < go.size(); ++i) {
          ga[static_cast<size_t>(start) * n + i] += go[i];
        }
      } else {
        const int m = a.shape()[0], n = a.shape()[1];
        const int w = static_cast<int>(go.size()) / m;
        for (int r = 0; r < m; ++r) {
          for (int c = 0; c < w; ++c) {
            ga[static_cast<size_t>(r) * n + start + c] +=
                go[static_cast<size_t>(r) * w + c];
          }
        }
      }
    });
  }
  return y;
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) fail("embedding_gather: table must be rank 2");
  const int v = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      fail("embedding_gather: id " + std::to_string(id) +
           " outside table of " + std::to_string(v) + " rows");
    }
  }
  const auto& td = table.data();
  std::vector<double> out(ids.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy(td.begin() + static_cast<size_t>(ids[i]) * d,
              td.begin() + static_cast<size_t>(ids[i] + 1) * d,
              out.begin() + i * d);
  }
  Tensor y = make_op_output({static_cast<int>(ids.size()), d}, std::move(out),
                            tape_wants_grad({&table}));
  if (y.requires_grad()) {
    Tape::active()->record([table = table, y = y, ids, d]() mutable {
      if (!y.has_grad() || !table.requires_grad()) return;
      const auto& go = y.grad();
      auto& gt = table.grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        for (int c = 0; c < d; ++c) {
          gt[static_cast<size_t>(ids[i]) * d + c] +=
              go[i * static_cast<size_t>(d) + c];
        }
      }
    });
  }
  return y;
}

// ---- lane helpers for softmax-style ops ---------------------------------

namespace {

struct Lanes {
  int count = 0;   // number of lanes
  int len = 0;     // elements per lane
  int stride = 0;  // stride between consecutive lane elements
  int step = 0;    // offset between lane starts
};

Lanes lanes_for(const Tensor& t, int axis, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 1) {
    if (axis != 0) fail(std::string(op) + ": bad axis for rank-1 tensor");
    return {1, s[0], 1, 0};
  }
  if (s.size() != 2) fail(std::string(op) + ": needs rank 1 or 2");
  if (axis == 1) return {s[0], s[1], 1, s[1]};
  if (axis == 0) return {s[1], s[0], s[1], 1};
  fail(std::string(op) + ": bad axis");
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  const Lanes lanes = lanes_for(a, axis, "softmax");
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (int lane = 0; lane < lanes.count; ++lane) {
    const size_t base = static_cast<size_t>(lane) * lanes.step;
    double max_v = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < lanes.len; ++i) {
      max_v = std::max(max_v, ad[base + static_cast<size_t>(i) * lanes.stride]);
    }
    double denom = 0.0;
    for (int i = 0; i < lanes.len; ++i) {
      const size_t idx = base + static_cast<size_t>(i) * lanes.stride;
      out[idx] = std::exp(ad[idx] - max_v);
      denom += out[idx];
    }
    for (int i = 0; i < lanes.len; ++i) {
      out[base + static_cast<size_t>(i) * lanes.stride] /= denom;
    }
  }
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, lanes]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      const auto& yd = y.data();
      auto& ga = a.grad();
      for (int lane = 0; lane < lanes.count; ++lane) {
        const size_t base = static_cast<size_t>(lane) * lanes.step;
        double dot = 0.0;
        for (int i = 0; i < lanes.len; ++i) {
          const size_t idx = base + static_cast<size_t>(i) * lanes.stride;
          dot += go[idx] * yd[idx];
        }
        for (int i = 0; i < lanes.len; ++i) {
          const size_t idx = base + static_cast<size_t>(i) * lanes.stride;
          ga[idx] += yd[idx] * (go[idx] - dot);
        }
      }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& a, int axis) {
  const Lanes lanes = lanes_for(a, axis, "log_softmax");
  const auto& ad = a.data();
  std::vector<double> out(ad.size());
  for (int lane = 0; lane < lanes.count; ++lane) {
    const size_t base = static_cast<size_t>(lane) * lanes.step;
    double max_v = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < lanes.len; ++i) {
      max_v = std::max(max_v, ad[base + static_cast<size_t>(i) * lanes.stride]);
    }
    double denom = 0.0;
    for (int i = 0; i < lanes.len; ++i) {
      denom += std::exp(ad[base + static_cast<size_t>(i) * lanes.stride] - max_v);
    }
    const double log_denom = std::log(denom) + max_v;
    for (int i = 0; i < lanes.len; ++i) {
      const size_t idx = base + static_cast<size_t>(i) * lanes.stride;
      out[idx] = ad[idx] - log_denom;
    }
  }
  round_mode(out);
  Tensor y = make_op_output(a.shape(), std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, lanes]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      const auto& yd = y.data();  // log probs
      auto& ga = a.grad();
      for (int lane = 0; lane < lanes.count; ++lane) {
        const size_t base = static_cast<size_t>(lane) * lanes.step;
        double total = 0.0;
        for (int i = 0; i < lanes.len; ++i) {
          total += go[base + static_cast<size_t>(i) * lanes.stride];
        }
        for (int i = 0; i < lanes.len; ++i) {
          const size_t idx = base + static_cast<size_t>(i) * lanes.stride;
          ga[idx] += go[idx] - std::exp(yd[idx]) * total;
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  const int d = x.cols();
  if (gain.shape() != std::vector<int>{d} || bias.shape() != std::vector<int>{d}) {
    fail("layer_norm: gain/bias must be rank-1 of size " + std::to_string(d) +
         ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const int n = x.rows();
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> out(xd.size());
  for (int r = 0; r < n; ++r) {
    const size_t base = static_cast<size_t>(r) * d;
    double m = 0.0;
    for (int c = 0; c < d; ++c) m += xd[base + c];
    m /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      var += (xd[base + c] - m) * (xd[base + c] - m);
    }
    var /= d;
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    for (int c = 0; c < d; ++c) {
      out[base + c] = (xd[base + c] - m) * inv_std * gd[c] + bd[c];
    }
  }
  round_mode(out);
  Tensor y = make_op_output(x.shape(), std::move(out),
                            tape_wants_grad({&x, &gain, &bias}));
  if (y.requires_grad()) {
    Tape::active()->record([x = x, gain = gain, bias = bias, y = y, epsilon, n, d]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      const auto& xd2 = x.data();
      const auto& gd2 = gain.data();
      for (int r = 0; r < n; ++r) {
        const size_t base = static_cast<size_t>(r) * d;
        double m = 0.0;
        for (int c = 0; c < d; ++c) m += xd2[base + c];
        m /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
          var += (xd2[base + c] - m) * (xd2[base + c] - m);
        }
        var /= d;
        const double inv_std = 1.0 / std::sqrt(var + epsilon);

        if (gain.requires_grad()) {
          auto& gg = gain.grad();
          for (int c = 0; c < d; ++c) {
            gg[c] += go[base + c] * (xd2[base + c] - m) * inv_std;
          }
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (int c = 0; c < d; ++c) gb[c] += go[base + c];
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < d; ++c) {
            const double xhat = (xd2[base + c] - m) * inv_std;
            const double dxhat = go[base + c] * gd2[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          for (int c = 0; c < d; ++c) {
            const double xhat = (xd2[base + c] - m) * inv_std;
            const double dxhat = go[base + c] * gd2[c];
            gx[base + c] += inv_std * (dxhat - (sum_dxhat +
                                                xhat * sum_dxhat_xhat) / d);
          }
        }
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  std::vector<double> out = {total};
  round_mode(out);
  Tensor y = make_op_output({1}, std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const double g = y.grad()[0];
      auto& ga = a.grad();
      for (double& v : ga) v += g;
    });
  }
  return y;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.data()) total += v;
  std::vector<double> out = {total / n};
  round_mode(out);
  Tensor y = make_op_output({1}, std::move(out), tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, n]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const double g = y.grad()[0] / n;
      auto& ga = a.grad();
      for (double& v : ga) v += g;
    });
  }
  return y;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const int n = a.rows(), m = a.cols();
  if (bias.shape() != std::vector<int>{m}) {
    fail("add_bias: shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(bias.shape()));
  }
  const auto& ad = a.data();
  const auto& bd = bias.data();
  std::vector<double> out(ad.size());
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) {
      out[static_cast<size_t>(r) * m + c] =
          ad[static_cast<size_t>(r) * m + c] + bd[c];
    }
  }
  round_mode(out);
  Tensor y =
      make_op_output(a.shape(), std::move(out), tape_wants_grad({&a, &bias}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, bias = bias, y = y, n, m]() mutable {
      if (!y.has_grad()) return;
      const auto& go = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (int r = 0; r < n; ++r) {
          for (int c = 0; c < m; ++c) {
            gb[c] += go[static_cast<size_t>(r) * m + c];
          }
        }
      }
    });
  }
  return y;
}

Tensor select_index(const Tensor& a, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
  if (a.shape().size() != 2) fail("select_index: needs a rank-2 tensor");
  if (rows.size() != cols.size()) fail("select_index: rows/cols length mismatch");
  const int m = a.shape()[0], n = a.shape()[1];
  const auto& ad = a.data();
  std::vector<double> out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m || cols[i] < 0 || cols[i] >= n) {
      fail("select_index: index out of range");
    }
    out[i] = ad[static_cast<size_t>(rows[i]) * n + cols[i]];
  }
  Tensor y = make_op_output({static_cast<int>(rows.size())}, std::move(out),
                            tape_wants_grad({&a}));
  if (y.requires_grad()) {
    Tape::active()->record([a = a, y = y, rows, cols, n]() mutable {
      if (!y.has_grad() || !a.requires_grad()) return;
      const auto& go = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < rows.size(); ++i) {
        ga[static_cast<size_t>(rows[i]) * n + cols[i]] += go[i];
      }
    });
  }
  return y;
}

// ---- gradient checking --------------------------------------------------

namespace {

// Works on the given tensors in place (so programs may reach them through
// shared handles, e.g. model parameters). Values and requires_grad flags
// are restored before returning; gradients are cleared.
GradCheckReport grad_check_impl(const TensorProgram& f,
                                const std::vector<Tensor>& inputs,
                                double epsilon, int probes_per_input,
                                std::mt19937_64* rng) {
  PrecisionGuard precision(Precision::f64);

  std::vector<Tensor> xs = inputs;  // handles, shared storage
  std::vector<bool> saved_flags;
  for (Tensor& x : xs) {
    saved_flags.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = f(xs);
    if (loss.size() != 1) fail("grad_check: program must be scalar-valued");
    tape.backward(loss);
    for (Tensor& x : xs) {
      analytic.push_back(x.has_grad() ? x.grad()
                                      : std::vector<double>(x.size(), 0.0));
      x.zero_grad();
    }
  }
  for (size_t i = 0; i < xs.size(); ++i) {
    xs[i].set_requires_grad(saved_flags[i]);
  }

  GradCheckReport report;
  for (size_t xi = 0; xi < xs.size(); ++xi) {
    std::vector<size_t> elems;
    const size_t total = xs[xi].data().size();
    if (probes_per_input <= 0 || static_cast<size_t>(probes_per_input) >= total) {
      for (size_t e = 0; e < total; ++e) elems.push_back(e);
    } else {
      for (int p = 0; p < probes_per_input; ++p) {
        elems.push_back((*rng)() % total);
      }
    }
    double max_err = 0.0;
    for (size_t e : elems) {
      double& slot = xs[xi].data()[e];
      const double orig = slot;
      slot = orig + epsilon;
      const double up = f(xs).item();
      slot = orig - epsilon;
      const double down = f(xs).item();
      slot = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double exact = analytic[xi][e];
      const double denom =
          std::max({std::fabs(exact), std::fabs(numeric), 1e-8});
      max_err = std::max(max_err, std::fabs(exact - numeric) / denom);
    }
    report.max_rel_err.push_back(max_err);
    report.worst = std::max(report.worst, max_err);
  }
  return report;
}

}  // namespace

GradCheckReport grad_check(const TensorProgram& f,
                           const std::vector<Tensor>& inputs, double epsilon) {
  return grad_check_impl(f, inputs, epsilon, 0, nullptr);
}

GradCheckReport grad_check_sampled(const TensorProgram& f,
                                   const std::vector<Tensor>& inputs,
                                   double epsilon, int probes_per_input,
                                   std::mt19937_64& rng) {
  return grad_check_impl(f, inputs, epsilon, probes_per_input, &rng);
}

}  // namespace boklm::tensor
