#include "iformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

namespace iformer {

namespace {

thread_local LayoutCounter* g_active_counter = nullptr;

std::atomic<int> g_num_threads{1};

std::string shape_to_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + shape_to_str(shape));
  }
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_to_str(shape));
    n *= e;
  }
  return n;
}

}  // namespace

LayoutCounterScope::LayoutCounterScope(LayoutCounter& counter) : previous_(g_active_counter) {
  g_active_counter = &counter;
}

LayoutCounterScope::~LayoutCounterScope() { g_active_counter = previous_; }

LayoutCounter* active_layout_counter() { return g_active_counter; }

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(checked_numel(shape_), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data) : shape_(std::move(shape)) {
  int64_t n = checked_numel(shape_);
  if (n != static_cast<int64_t>(data.size())) {
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " +
                     shape_to_str(shape_));
  }
  data_ = std::move(data);
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

int64_t Tensor::extent(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank()));
  }
  return shape_[axis];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data_.size()); }

std::string Tensor::shape_str() const { return shape_to_str(shape_); }

int64_t Tensor::flat_index(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " does not match tensor rank " +
                     std::to_string(rank()));
  }
  int64_t flat = 0;
  int axis = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= shape_[axis]) {
      throw ShapeError("index out of bounds at axis " + std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

float& Tensor::at(std::initializer_list<int64_t> index) { return data_[flat_index(index)]; }

float Tensor::at(std::initializer_list<int64_t> index) const { return data_[flat_index(index)]; }

Tensor reshape(const Tensor& t, std::vector<int64_t> shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("reshape target rank must be 1..4, got " + shape_to_str(shape));
  }
  int infer_axis = -1;
  int64_t known = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer_axis >= 0) throw ShapeError("reshape allows at most one inferred extent");
      infer_axis = static_cast<int>(i);
    } else if (shape[i] <= 0) {
      throw ShapeError("reshape extents must be positive or -1, got " + shape_to_str(shape));
    } else {
      known *= shape[i];
    }
  }
  if (infer_axis >= 0) {
    if (t.numel() % known != 0) {
      throw ShapeError("cannot infer extent: " + std::to_string(t.numel()) +
                       " elements not divisible by " + std::to_string(known));
    }
    shape[infer_axis] = t.numel() / known;
    known *= shape[infer_axis];
  }
  if (known != t.numel()) {
    throw ShapeError("reshape from " + t.shape_str() + " to " + shape_to_str(shape) +
                     " changes element count");
  }
  return Tensor(std::move(shape), t.vec());
}

Tensor permute(const Tensor& t, const std::vector<int>& axes) {
  int r = t.rank();
  if (static_cast<int>(axes.size()) != r) {
    throw ShapeError("permutation size " + std::to_string(axes.size()) +
                     " does not match tensor rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[a]) throw ShapeError("invalid permutation of axes");
    seen[a] = true;
  }

  std::vector<int64_t> out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = t.shape()[axes[i]];

  std::vector<int64_t> in_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * t.shape()[i + 1];

  Tensor out(out_shape);
  // Walk output positions in order; gather from the permuted source stride.
  std::vector<int64_t> stride_for_out(r);
  for (int i = 0; i < r; ++i) stride_for_out[i] = in_strides[axes[i]];

  std::vector<int64_t> idx(r, 0);
  const float* src = t.data();
  float* dst = out.data();
  int64_t n = t.numel();
  int64_t src_pos = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    dst[flat] = src[src_pos];
    for (int axis = r - 1; axis >= 0; --axis) {
      src_pos += stride_for_out[axis];
      if (++idx[axis] < out_shape[axis]) break;
      src_pos -= stride_for_out[axis] * out_shape[axis];
      idx[axis] = 0;
    }
  }

  if (g_active_counter) g_active_counter->permutes += 1;
  return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    int64_t n = a.numel();
    if (op == BinaryOp::Add) {
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    } else {
      for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    }
    return out;
  }
  if (a.rank() == 4 && b.rank() == 1 && a.extent(1) == b.extent(0)) {
    Tensor out(a.shape());
    int64_t n = a.extent(0), c = a.extent(1), hw = a.extent(2) * a.extent(3);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int64_t ni = 0; ni < n; ++ni) {
      for (int64_t ci = 0; ci < c; ++ci) {
        float v = pb[ci];
        const float* row = pa + (ni * c + ci) * hw;
        float* orow = po + (ni * c + ci) * hw;
        if (op == BinaryOp::Add) {
          for (int64_t i = 0; i < hw; ++i) orow[i] = row[i] + v;
        } else {
          for (int64_t i = 0; i < hw; ++i) orow[i] = row[i] * v;
        }
      }
    }
    return out;
  }
  throw ShapeError("elementwise shapes incompatible: " + a.shape_str() + " vs " + b.shape_str());
}

namespace {

// One [M,K]x[K,N] product on raw pointers, with optional transposed reads.
void matmul_2d(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t k,
               bool ta, bool tb) {
  for (int64_t i = 0; i < m; ++i) {
    float* orow = out + i * n;
    std::fill(orow, orow + n, 0.0f);
    for (int64_t p = 0; p < k; ++p) {
      float av = ta ? a[p * m + i] : a[i * k + p];
      if (tb) {
        const float* bcol = b + p;  // b is [N,K]: element (p, j) lives at j*k+p
        for (int64_t j = 0; j < n; ++j) orow[j] += av * bcol[j * k];
      } else {
        const float* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul expects two rank-2 or two rank-3 tensors, got " + a.shape_str() +
                     " and " + b.shape_str());
  }
  bool batched = a.rank() == 3;
  int64_t batch = batched ? a.extent(0) : 1;
  if (batched && b.extent(0) != batch) {
    throw ShapeError("matmul batch mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  int off = batched ? 1 : 0;
  int64_t m = transpose_a ? a.extent(off + 1) : a.extent(off);
  int64_t ka = transpose_a ? a.extent(off) : a.extent(off + 1);
  int64_t kb = transpose_b ? b.extent(off + 1) : b.extent(off);
  int64_t n = transpose_b ? b.extent(off) : b.extent(off + 1);
  if (ka != kb) {
    throw ShapeError("matmul inner extents differ: " + a.shape_str() + " vs " + b.shape_str());
  }

  std::vector<int64_t> out_shape = batched ? std::vector<int64_t>{batch, m, n}
                                           : std::vector<int64_t>{m, n};
  Tensor out(out_shape);
  int64_t a_step = batched ? a.extent(1) * a.extent(2) : 0;
  int64_t b_step = batched ? b.extent(1) * b.extent(2) : 0;
  parallel_for(batch, [&](int64_t lo, int64_t hi) {
    for (int64_t bi = lo; bi < hi; ++bi) {
      matmul_2d(a.data() + bi * a_step, b.data() + bi * b_step, out.data() + bi * m * n, m, n,
                ka, transpose_a, transpose_b);
    }
  });
  return out;
}

std::vector<Tensor> chunk_channels(const Tensor& t, int n) {
  if (t.rank() != 4) throw ShapeError("chunk_channels expects rank-4, got " + t.shape_str());
  if (n <= 0) throw ArgumentError("chunk count must be positive");
  int64_t c = t.extent(1);
  if (c % n != 0) {
    throw ShapeError("channels " + std::to_string(c) + " not divisible into " + std::to_string(n) +
                     " chunks");
  }
  int64_t cs = c / n;
  int64_t batch = t.extent(0), hw = t.extent(2) * t.extent(3);
  std::vector<Tensor> parts;
  parts.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tensor part({batch, cs, t.extent(2), t.extent(3)});
    for (int64_t b = 0; b < batch; ++b) {
      const float* src = t.data() + (b * c + i * cs) * hw;
      float* dst = part.data() + b * cs * hw;
      std::copy(src, src + cs * hw, dst);
    }
    parts.push_back(std::move(part));
  }
  return parts;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels needs at least one part");
  int64_t batch = parts[0].extent(0), h = parts[0].extent(2), w = parts[0].extent(3);
  int64_t c_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 4) throw ShapeError("concat_channels expects rank-4, got " + p.shape_str());
    if (p.extent(0) != batch || p.extent(2) != h || p.extent(3) != w) {
      throw ShapeError("concat_channels parts disagree on batch or spatial extents");
    }
    c_total += p.extent(1);
  }
  Tensor out({batch, c_total, h, w});
  int64_t hw = h * w;
  for (int64_t b = 0; b < batch; ++b) {
    int64_t c_off = 0;
    for (const Tensor& p : parts) {
      int64_t pc = p.extent(1);
      const float* src = p.data() + b * pc * hw;
      float* dst = out.data() + (b * c_total + c_off) * hw;
      std::copy(src, src + pc * hw, dst);
      c_off += pc;
    }
  }
  return out;
}

int num_threads() { return g_num_threads.load(); }

void set_num_threads(int n) {
  if (n < 1) throw ArgumentError("thread count must be >= 1");
  g_num_threads.store(n);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  int workers = g_num_threads.load();
  if (workers <= 1 || n <= 1) {
    fn(0, n);
    return;
  }
  if (workers > n) workers = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  int64_t chunk = (n + workers - 1) / workers;
  for (int t = 0; t < workers; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace iformer
