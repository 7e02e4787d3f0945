#include "iecl/tensor.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <unordered_map>

namespace iecl {

namespace {

thread_local Tape* t_active_tape = nullptr;
thread_local bool t_grad_enabled = true;

Tape& default_tape() {
  thread_local Tape tape;
  return tape;
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (iecl::numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("Tensor: shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                     " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(iecl::numel(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m, bool requires_grad) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  MatrixMap(data.data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(data), requires_grad);
}

Tensor Tensor::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v, bool requires_grad) {
  return Tensor({v.size()}, std::vector<double>(v.data(), v.data() + v.size()), requires_grad);
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("dim: axis out of range for shape " + to_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw TapeError("mutable_data: tensor is an op result; only leaves may be written");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return impl_->data[0];
}

ConstMatrixMap Tensor::matrix() const {
  if (rank() == 2) return {impl_->data.data(), shape()[0], shape()[1]};
  if (rank() <= 1) return {impl_->data.data(), 1, numel()};
  throw ShapeError("matrix: expected rank <= 2, got shape " + to_string(shape()));
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw TapeError("set_requires_grad: only leaves can change requires_grad");
  impl_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!impl_->grad) throw TapeError("grad: tensor has no gradient");
  return *impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return Tensor(shape(), std::vector<double>(g.begin(), g.end()));
}

void Tensor::zero_grad() {
  if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------
// Tape

Tape& Tape::active() { return t_active_tape ? *t_active_tape : default_tape(); }

bool Tape::tracks(const Tensor& t) const {
  const auto& impl = *t.impl();
  if (!impl.requires_grad) return false;
  if (impl.tape == nullptr) return true;
  return impl.tape == this && impl.generation == generation_;
}

void Tape::record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  Node node;
  node.out_numel = static_cast<std::size_t>(out.numel());
  node.fn = std::move(fn);
  node.inputs.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    node.input_tracked.push_back(tracks(in));
    node.inputs.push_back(in.impl());
  }
  auto& impl = *out.impl_;
  impl.requires_grad = true;
  impl.tape = this;
  impl.generation = generation_;
  impl.node = nodes_.size();
  nodes_.push_back(std::move(node));
}

void Tape::check_root(const Tensor& t) const {
  const auto& impl = *t.impl();
  if (impl.tape != this) throw TapeError("backward: tensor was not recorded on this tape");
  if (impl.generation != generation_) {
    throw TapeError("backward: tape already consumed; re-run the forward pass");
  }
}

std::vector<std::pair<detail::TensorImpl*, std::vector<double>>> Tape::sweep(std::size_t root,
                                                                             std::span<const double> seed) const {
  std::vector<std::vector<double>> grads(root + 1);
  grads[root].assign(seed.begin(), seed.end());
  std::unordered_map<detail::TensorImpl*, std::size_t> leaf_slot;
  std::deque<std::pair<detail::TensorImpl*, std::vector<double>>> leaves;
  std::vector<std::vector<double>*> ptrs;

  for (std::size_t i = root + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    const Node& node = nodes_[i];
    ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      if (!node.input_tracked[j]) continue;
      detail::TensorImpl* in = node.inputs[j].get();
      std::vector<double>* buf = nullptr;
      if (in->tape == nullptr) {
        auto [it, inserted] = leaf_slot.try_emplace(in, leaves.size());
        if (inserted) leaves.emplace_back(in, std::vector<double>(in->data.size(), 0.0));
        buf = &leaves[it->second].second;
      } else {
        buf = &grads[in->node];
        if (buf->empty()) buf->assign(in->data.size(), 0.0);
      }
      ptrs[j] = buf;
    }
    node.fn(grads[i], ptrs);
    // Each node is visited exactly once; release its gradient early.
    if (i != root) std::vector<double>().swap(grads[i]);
  }
  return {std::make_move_iterator(leaves.begin()), std::make_move_iterator(leaves.end())};
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw TapeError("backward: root must be a scalar, got shape " + to_string(root.shape()));
  }
  check_root(root);
  const double one = 1.0;
  auto leaves = sweep(root.impl()->node, std::span<const double>(&one, 1));
  for (auto& [leaf, g] : leaves) {
    if (!leaf->grad) {
      leaf->grad = std::move(g);
    } else {
      auto& acc = *leaf->grad;
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
    }
  }
  clear();
}

std::vector<std::vector<double>> Tape::vjp(const Tensor& output, std::span<const double> seed,
                                           std::span<const Tensor> wrt) const {
  check_root(output);
  if (static_cast<Index>(seed.size()) != output.numel()) {
    throw ShapeError("vjp: seed length " + std::to_string(seed.size()) + " does not match output shape " +
                     to_string(output.shape()));
  }
  auto leaves = sweep(output.impl()->node, seed);
  std::vector<std::vector<double>> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    if (!w.is_leaf()) throw TapeError("vjp: gradients are only reported for leaves");
    auto it = std::find_if(leaves.begin(), leaves.end(), [&](const auto& p) { return p.first == w.impl().get(); });
    result.push_back(it != leaves.end() ? it->second : std::vector<double>(static_cast<std::size_t>(w.numel()), 0.0));
  }
  return result;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

TapeScope::TapeScope() : previous_(t_active_tape) { t_active_tape = &tape_; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void backward(const Tensor& root) {
  Tape& tape = Tape::active();
  if (root.impl()->tape != &tape) {
    throw TapeError("backward: root was not produced on the active tape");
  }
  tape.backward(root);
}

}  // namespace iecl
