#pragma once

// Dense row-major tensors of doubles with a reverse-mode tape.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// parameters are shared between a model and its optimizer. Tensors produced
// by differentiable ops are never mutated; only leaves (parameters, inputs)
// are written to, and only when no live tape references them.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace iecl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXd>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;
  // Set for op outputs recorded on a tape; leaves keep tape == nullptr.
  Tape* tape = nullptr;
  std::uint64_t generation = 0;
  std::size_t node = 0;
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m, bool requires_grad = false);
  static Tensor from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index axis) const;
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  std::span<const double> data() const { return impl_->data; }
  // In-place access for leaves (parameter updates, input construction).
  std::span<double> mutable_data();
  double item() const;
  double at(Index flat) const { return impl_->data.at(static_cast<std::size_t>(flat)); }

  // Rank-2 view; rank-1 tensors view as a single row.
  ConstMatrixMap matrix() const;
  Eigen::MatrixXd to_matrix() const { return matrix(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->tape == nullptr; }

  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();
  void clear_grad() { impl_->grad.reset(); }

  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
};

// Receives d(root)/d(output) and accumulates into the input gradient buffers.
// grad_in[i] is null when input i takes no gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // The tape ops record onto for the calling thread.
  static Tape& active();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

  // Populates .grad of every reachable leaf with d(root)/d(leaf), then
  // consumes the tape.
  void backward(const Tensor& root);

  // Vector-Jacobian product seed^T * d(output)/d(wrt) for each tensor in
  // wrt. Leaves the tape and all .grad fields untouched.
  std::vector<std::vector<double>> vjp(const Tensor& output, std::span<const double> seed,
                                       std::span<const Tensor> wrt) const;

  // Drops all recorded nodes; tensors recorded so far become constants.
  void clear();

  // Used by op implementations.
  bool tracks(const Tensor& t) const;
  void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::vector<bool> input_tracked;
    std::size_t out_numel = 0;
    BackwardFn fn;
  };

  void check_root(const Tensor& t) const;
  // Runs the reverse sweep from `node`, returning accumulated leaf gradients.
  std::vector<std::pair<detail::TensorImpl*, std::vector<double>>> sweep(std::size_t node,
                                                                         std::span<const double> seed) const;

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

// Installs a fresh tape as the thread's active tape for its lifetime.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

// Disables recording on the calling thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// backward on the root's tape; root must be a scalar.
void backward(const Tensor& root);

}  // namespace iecl
