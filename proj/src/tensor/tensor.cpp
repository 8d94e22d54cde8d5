#include "lt2m/tensor.hpp"

#include <atomic>
#include <sstream>

namespace lt2m {

namespace {

std::atomic<bool> g_checked{false};
std::atomic<std::uint64_t> g_next_tape_id{1};

template <typename S>
thread_local Tape<S>* t_active = nullptr;

}  // namespace

namespace detail {

struct TensorAccess {
  template <typename S>
  static void attach(Tensor<S>& t, std::uint64_t tape_id, int node) {
    t.tape_id_ = tape_id;
    t.node_ = node;
  }
};

}  // namespace detail

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void set_checked_mode(bool enabled) { g_checked.store(enabled); }
bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kLeaf: return "leaf";
    case OpTag::kAdd: return "add";
    case OpTag::kSub: return "sub";
    case OpTag::kMul: return "mul";
    case OpTag::kMatmul: return "matmul";
    case OpTag::kExp: return "exp";
    case OpTag::kLog: return "log";
    case OpTag::kRelu: return "relu";
    case OpTag::kSigmoid: return "sigmoid";
    case OpTag::kSilu: return "silu";
    case OpTag::kSoftplus: return "softplus";
    case OpTag::kSum: return "sum";
    case OpTag::kMean: return "mean";
    case OpTag::kConcat: return "concat";
    case OpTag::kSlice: return "slice";
    case OpTag::kReverse: return "reverse";
    case OpTag::kBroadcast: return "broadcast";
    case OpTag::kReshape: return "reshape";
    case OpTag::kSquare: return "square";
    case OpTag::kScale: return "scale";
    case OpTag::kStridedRows: return "strided_rows";
    case OpTag::kRepeatRows: return "repeat_rows";
    case OpTag::kDepthwiseConv: return "depthwise_conv1d";
    case OpTag::kGroupNorm: return "group_norm";
    case OpTag::kDiscretizeA: return "discretize_a";
    case OpTag::kDiscretizeB: return "discretize_b";
    case OpTag::kSelectiveScan: return "selective_scan";
  }
  return "?";
}

// ---------------------------------------------------------------- Tensor

template <typename S>
Tensor<S>::Tensor(Shape shape, Array data)
    : shape_(std::move(shape)), data_(std::make_shared<Array>(std::move(data))) {
  if (lt2m::numel(shape_) != data_->size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not match " +
                     std::to_string(data_->size()) + " values");
  }
  for (Index d : shape_) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + to_string(shape_));
  }
}

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape) {
  const Index n = lt2m::numel(shape);
  return Tensor(std::move(shape), Array::Zero(n));
}

template <typename S>
Tensor<S> Tensor<S>::constant(Shape shape, S value) {
  const Index n = lt2m::numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value));
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value) {
  return Tensor(Shape{}, Array::Constant(1, value));
}

template <typename S>
Tensor<S> Tensor<S>::from(Shape shape, std::initializer_list<S> values) {
  Array data(static_cast<Index>(values.size()));
  Index i = 0;
  for (S v : values) data(i++) = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename S>
Tensor<S> Tensor<S>::parameter(Shape shape, Array data) {
  Tensor t(std::move(shape), std::move(data));
  t.requires_grad_ = true;
  return t;
}

template <typename S>
Index Tensor<S>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  return (*data_)(0);
}

template <typename S>
typename Tensor<S>::ConstMatrixMap Tensor<S>::matrix() const {
  if (rank() == 2) return ConstMatrixMap(data_->data(), shape_[0], shape_[1]);
  if (rank() == 1) return ConstMatrixMap(data_->data(), 1, shape_[0]);
  throw ShapeError("matrix: expected rank 1 or 2, got " + to_string(shape_));
}

template <typename S>
typename Tensor<S>::Array& Tensor<S>::parameter_data() {
  if (!requires_grad_) throw std::logic_error("parameter_data: tensor is not a parameter");
  return *data_;
}

template <typename S>
Tensor<S> Tensor<S>::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

// ------------------------------------------------------------------ Tape

template <typename S>
Tape<S>::Tape() : id_(g_next_tape_id.fetch_add(1)), previous_(t_active<S>) {
  t_active<S> = this;
}

template <typename S>
Tape<S>::~Tape() {
  t_active<S> = previous_;
}

template <typename S>
Tape<S>* Tape<S>::active() {
  return t_active<S>;
}

template <typename S>
int Tape<S>::node_of(const Tensor<S>& t) {
  if (t.tape_id_ == id_ && t.node_ >= 0) return t.node_;
  if (!t.requires_grad_) return -1;
  auto [it, inserted] = leaves_.try_emplace(t.storage_id(), static_cast<int>(nodes_.size()));
  if (inserted) nodes_.push_back(Node{OpTag::kLeaf, t.numel(), {}, nullptr});
  return it->second;
}

template <typename S>
int Tape<S>::record(OpTag op, Index size, std::vector<int> inputs, Backward backward) {
  nodes_.push_back(Node{op, size, std::move(inputs), std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename S>
void Tape<S>::backward(const Tensor<S>& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + to_string(root.shape()));
  }
  const int root_node = (root.tape_id_ == id_) ? root.node_ : -1;
  grads_.assign(nodes_.size(), Array());
  swept_ = true;
  if (root_node < 0) {
    if (root.requires_grad_) {
      auto it = leaves_.find(root.storage_id());
      if (it != leaves_.end()) grads_[it->second] = Array::Ones(1);
      return;
    }
    throw std::logic_error("backward: root was not recorded on this tape");
  }
  grads_[root_node] = Array::Ones(1);
  std::vector<Array*> grad_in;
  for (int i = root_node; i >= 0; --i) {
    Node& node = nodes_[i];
    if (grads_[i].size() == 0 || !node.backward) continue;
    grad_in.clear();
    for (int in : node.inputs) {
      if (in < 0) {
        grad_in.push_back(nullptr);
        continue;
      }
      if (grads_[in].size() == 0) grads_[in] = Array::Zero(nodes_[in].size);
      grad_in.push_back(&grads_[in]);
    }
    node.backward(grads_[i], grad_in);
    if (node.op != OpTag::kLeaf && i != root_node) {
      // Intermediate gradients are no longer needed once propagated.
      grads_[i] = Array();
    }
  }
}

template <typename S>
typename Tape<S>::Array Tape<S>::grad(const Tensor<S>& t) const {
  int node = -1;
  if (t.tape_id_ == id_) {
    node = t.node_;
  } else if (t.requires_grad_) {
    auto it = leaves_.find(t.storage_id());
    if (it != leaves_.end()) node = it->second;
  }
  if (!swept_ || node < 0 || static_cast<std::size_t>(node) >= grads_.size() ||
      grads_[node].size() == 0) {
    return Array::Zero(t.numel());
  }
  return grads_[node];
}

// ------------------------------------------------------------ make_result

template <typename S>
Tensor<S> make_result(OpTag op, Shape shape, typename Tensor<S>::Array data,
                      const std::vector<const Tensor<S>*>& inputs,
                      std::function<void(const typename Tensor<S>::Array&,
                                         std::vector<typename Tensor<S>::Array*>&)>
                          backward) {
  if (checked_mode()) {
    for (const Tensor<S>* in : inputs) {
      if (!in->array().allFinite()) {
        throw NonFiniteError(std::string(op_name(op)) + ": non-finite input");
      }
    }
  }
  Tensor<S> out(std::move(shape), std::move(data));
  Tape<S>* tape = Tape<S>::active();
  if (tape == nullptr) return out;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  bool any = false;
  for (const Tensor<S>* in : inputs) {
    const int id = tape->node_of(*in);
    any = any || id >= 0;
    ids.push_back(id);
  }
  if (!any) return out;
  const int node = tape->record(op, out.numel(), std::move(ids), std::move(backward));
  detail::TensorAccess::attach(out, tape->id(), node);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

template Tensor<float> make_result<float>(
    OpTag, Shape, Tensor<float>::Array, const std::vector<const Tensor<float>*>&,
    std::function<void(const Tensor<float>::Array&, std::vector<Tensor<float>::Array*>&)>);
template Tensor<double> make_result<double>(
    OpTag, Shape, Tensor<double>::Array, const std::vector<const Tensor<double>*>&,
    std::function<void(const Tensor<double>::Array&, std::vector<Tensor<double>::Array*>&)>);

}  // namespace lt2m
