// Dense float32 tensor with NCHW conventions, plus the layout-change
// bookkeeping used to compare attention implementations.
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace iformer {

// Error taxonomy. The CLI maps these onto exit codes, so library code
// should pick the narrowest one that applies.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Counts physical data reorderings (permutes). reshape never counts: it
// reinterprets extents without moving elements. A counter is installed for
// the current thread with LayoutCounterScope; with none installed, permutes
// are simply not recorded.
struct LayoutCounter {
  long long permutes = 0;
};

class LayoutCounterScope {
 public:
  explicit LayoutCounterScope(LayoutCounter& counter);
  ~LayoutCounterScope();
  LayoutCounterScope(const LayoutCounterScope&) = delete;
  LayoutCounterScope& operator=(const LayoutCounterScope&) = delete;

 private:
  LayoutCounter* previous_;
};

LayoutCounter* active_layout_counter();

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<float> data);

  static Tensor full(std::vector<int64_t> shape, float value);
  static Tensor zeros(std::vector<int64_t> shape) { return full(std::move(shape), 0.0f); }
  static Tensor ones(std::vector<int64_t> shape) { return full(std::move(shape), 1.0f); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t extent(int axis) const;
  int64_t numel() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& at(std::initializer_list<int64_t> index);
  float at(std::initializer_list<int64_t> index) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

 private:
  int64_t flat_index(std::initializer_list<int64_t> index) const;

  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

// Reinterprets extents; element order is untouched. One extent may be -1
// and is inferred. Element count must be conserved.
Tensor reshape(const Tensor& t, std::vector<int64_t> shape);

// Physically reorders data so the output is contiguous in the new axis
// order. Always counts as one layout change, identity orders included.
Tensor permute(const Tensor& t, const std::vector<int>& axes);

enum class BinaryOp { Add, Mul };

// Same-shape elementwise op, or rank-4 [N,C,H,W] against a rank-1 [C]
// per-channel vector.
Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::Add); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::Mul); }

// [M,K]x[K,N] or batched [B,M,K]x[B,K,N]. The transpose flags read the
// operand as transposed without moving data, which is what lets single-head
// attention run on channel-major tensors with zero permutes.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

// Splits [N,C,H,W] into n equal channel slices, in order.
std::vector<Tensor> chunk_channels(const Tensor& t, int n);

// Inverse of chunk_channels; parts must agree on N,H,W.
Tensor concat_channels(const std::vector<Tensor>& parts);

// Worker count for the loops in conv2d/matmul. Default 1; results are
// bitwise identical for any setting because writes are disjoint.
int num_threads();
void set_num_threads(int n);

// Runs fn(begin, end) over [0,n) split across the configured workers.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace iformer
