#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lt2m {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised by every primitive whose operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised in checked mode when a primitive sees a NaN or Inf operand.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Global toggle for NaN/Inf input rejection. Off by default.
void set_checked_mode(bool enabled);
bool checked_mode();

enum class OpTag : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kExp,
  kLog,
  kRelu,
  kSigmoid,
  kSilu,
  kSoftplus,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kReverse,
  kBroadcast,
  kReshape,
  kSquare,
  kScale,
  kStridedRows,
  kRepeatRows,
  kDepthwiseConv,
  kGroupNorm,
  kDiscretizeA,
  kDiscretizeB,
  kSelectiveScan,
};

const char* op_name(OpTag tag);

template <typename Scalar>
class Tape;

namespace detail {
struct TensorAccess;
}

/// Dense row-major n-dimensional array. Values are immutable once a tensor
/// has been produced by a primitive; parameters are the only tensors whose
/// storage is updated in place (by optimizers and checkpoint loading).
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  Tensor(Shape shape, Array data);

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, Scalar value);
  static Tensor scalar(Scalar value);
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);

  /// Trainable leaf. Copies of the returned tensor share storage.
  static Tensor parameter(Shape shape, Array data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const;
  Index numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  const Array& array() const { return *data_; }
  Scalar item() const;
  Scalar operator[](Index i) const { return (*data_)(i); }

  /// Rank-2 view; rank-1 tensors are viewed as a single row.
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return requires_grad_; }

  /// Mutable storage of a parameter. Throws for non-parameter tensors.
  Array& parameter_data();

  /// Identity of the underlying storage.
  const void* storage_id() const { return data_.get(); }

  /// Same values, detached from any recorded graph.
  Tensor detach() const;

 private:
  friend class Tape<Scalar>;
  friend struct detail::TensorAccess;

  Shape shape_;
  std::shared_ptr<Array> data_;
  bool requires_grad_ = false;
  std::uint64_t tape_id_ = 0;
  int node_ = -1;
};

/// Append-only reverse-mode tape. Constructing a tape makes it the active
/// recorder for the current thread until it is destroyed; primitives applied
/// while a tape is active record a node whenever an operand is a parameter
/// or was itself recorded on that tape.
template <typename Scalar>
class Tape {
 public:
  using Array = typename Tensor<Scalar>::Array;
  using Backward = std::function<void(const Array& grad_out, std::vector<Array*>& grad_in)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Reverse sweep from a scalar root. Every reachable leaf receives
  /// d(root)/d(leaf); unreachable leaves report zero.
  void backward(const Tensor<Scalar>& root);

  /// Gradient of the last backward() with respect to `t` (zeros if `t`
  /// was never reached).
  Array grad(const Tensor<Scalar>& t) const;

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  OpTag op(std::size_t node) const { return nodes_[node].op; }

  // Used by primitives.
  int node_of(const Tensor<Scalar>& t);
  int record(OpTag op, Index size, std::vector<int> inputs, Backward backward);

 private:
  struct Node {
    OpTag op;
    Index size;
    std::vector<int> inputs;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<Array> grads_;
  std::unordered_map<const void*, int> leaves_;
  std::uint64_t id_;
  Tape* previous_ = nullptr;
  bool swept_ = false;
};

/// Builds a primitive's output and, when a tape is recording and any input
/// participates in differentiation, records a node with the given backward
/// rule. `grad_in[i]` is null for inputs that do not need a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(
    OpTag op, Shape shape, typename Tensor<Scalar>::Array data,
    const std::vector<const Tensor<Scalar>*>& inputs,
    std::function<void(const typename Tensor<Scalar>::Array&,
                       std::vector<typename Tensor<Scalar>::Array*>&)>
        backward);

}  // namespace lt2m
