#include "iformer/window.hpp"

#include <algorithm>

namespace iformer {

Tensor window_partition(const Tensor& x, int window) {
  if (x.rank() != 4) throw ShapeError("window_partition expects rank-4, got " + x.shape_str());
  if (window <= 0) throw ArgumentError("window size must be positive");
  int64_t n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (h % window != 0 || w % window != 0) {
    throw ShapeError("spatial extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(window));
  }
  int64_t wh = h / window, ww = w / window;
  Tensor out({n * wh * ww, c, window, window});
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t wi = 0; wi < wh; ++wi) {
      for (int64_t wj = 0; wj < ww; ++wj) {
        int64_t ob = (ni * wh + wi) * ww + wj;
        for (int64_t ci = 0; ci < c; ++ci) {
          const float* src = x.data() + ((ni * c + ci) * h + wi * window) * w + wj * window;
          float* dst = out.data() + (ob * c + ci) * window * window;
          for (int64_t r = 0; r < window; ++r) {
            std::copy(src + r * w, src + r * w + window, dst + r * window);
          }
        }
      }
    }
  }
  return out;
}

Tensor window_reverse(const Tensor& windows, int window, int64_t h, int64_t w) {
  if (windows.rank() != 4) {
    throw ShapeError("window_reverse expects rank-4, got " + windows.shape_str());
  }
  if (window <= 0) throw ArgumentError("window size must be positive");
  if (windows.extent(2) != window || windows.extent(3) != window) {
    throw ShapeError("window_reverse input spatial extents must equal the window size");
  }
  if (h % window != 0 || w % window != 0) {
    throw ShapeError("target extents not divisible by window");
  }
  int64_t wh = h / window, ww = w / window;
  int64_t per_image = wh * ww;
  if (windows.extent(0) % per_image != 0) {
    throw ShapeError("window batch " + std::to_string(windows.extent(0)) +
                     " not divisible by windows per image " + std::to_string(per_image));
  }
  int64_t n = windows.extent(0) / per_image;
  int64_t c = windows.extent(1);
  Tensor out({n, c, h, w});
  for (int64_t ni = 0; ni < n; ++ni) {
    for (int64_t wi = 0; wi < wh; ++wi) {
      for (int64_t wj = 0; wj < ww; ++wj) {
        int64_t ib = (ni * wh + wi) * ww + wj;
        for (int64_t ci = 0; ci < c; ++ci) {
          const float* src = windows.data() + (ib * c + ci) * window * window;
          float* dst = out.data() + ((ni * c + ci) * h + wi * window) * w + wj * window;
          for (int64_t r = 0; r < window; ++r) {
            std::copy(src + r * window, src + (r + 1) * window, dst + r * w);
          }
        }
      }
    }
  }
  return out;
}

Tensor chunked_window_partition(const Tensor& x, int window, int n_chunks) {
  std::vector<Tensor> parts = chunk_channels(x, n_chunks);
  for (Tensor& part : parts) part = window_partition(part, window);
  return concat_channels(parts);
}

Tensor chunked_window_reverse(const Tensor& windows, int window, int64_t h, int64_t w,
                              int n_chunks) {
  std::vector<Tensor> parts = chunk_channels(windows, n_chunks);
  for (Tensor& part : parts) part = window_reverse(part, window, h, w);
  return concat_channels(parts);
}

}  // namespace iformer
