#pragma once

#include <cstdint>

#include "usdn/core/tensor.hpp"

namespace usdn::img {

// Storage domain of an image batch. `unit` is the [0,1] file/metric domain,
// `signed_range` the [-1,1] model domain (Tanh head).
enum class RangeTag { unit, signed_range };

// Batch of grayscale images, shape N x 1 x H x W.
struct ImageBatch {
  Tensor<float> data;
  RangeTag tag = RangeTag::unit;

  int64_t count() const { return data.ndim() == 4 ? data.dim(0) : 0; }
  int64_t height() const { return data.dim(2); }
  int64_t width() const { return data.dim(3); }
};

// Validates the ImageTensor invariants: 4-D N x 1 x H x W, H,W >= 8 and
// divisible by 8, all values inside the declared range.
void validate_image_batch(const ImageBatch& img);

// Domain conversions 2v-1 / (v+1)/2. Converting an already-converted batch
// is a contract error (guards against double mapping).
ImageBatch to_signed(const ImageBatch& unit);
ImageBatch to_unit(const ImageBatch& signed_img);

}  // namespace usdn::img
