// Non-overlapping window partitioning for local attention, plus the
// channel-chunked variants used to bound live memory at high resolution.
#pragma once

#include "iformer/tensor.hpp"

namespace iformer {

// [N,C,H,W] -> [N*(H/P)*(W/P), C, P, P]. Windows are ordered row-major:
// for each image, window (i,j) becomes batch entry i*(W/P)+j.
Tensor window_partition(const Tensor& x, int window);

// Inverse of window_partition for a map of extent H x W.
Tensor window_reverse(const Tensor& windows, int window, int64_t h, int64_t w);

// chunk_channels -> window_partition per chunk -> concat_channels. Output
// is bit-identical to window_partition on the whole tensor; the point is
// that each chunk is resident independently.
Tensor chunked_window_partition(const Tensor& x, int window, int n_chunks);

Tensor chunked_window_reverse(const Tensor& windows, int window, int64_t h, int64_t w,
                              int n_chunks);

}  // namespace iformer
