#include "usdn/img/image.hpp"

namespace usdn::img {

void validate_image_batch(const ImageBatch& img) {
  const auto& t = img.data;
  if (t.ndim() != 4 || t.dim(1) != 1)
    throw ContractError("image batch must be N x 1 x H x W, got " + t.shape_str());
  int64_t h = t.dim(2), w = t.dim(3);
  if (h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0)
    throw ContractError("image sides must be >= 8 and divisible by 8, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  float lo = img.tag == RangeTag::unit ? 0.0f : -1.0f;
  for (int64_t i = 0; i < t.numel(); ++i) {
    float v = t[i];
    if (!(v >= lo && v <= 1.0f))
      throw ContractError("image value " + std::to_string(v) + " outside declared range");
  }
}

ImageBatch to_signed(const ImageBatch& unit) {
  if (unit.tag != RangeTag::unit)
    throw ContractError("to_signed: input already in signed range");
  ImageBatch out;
  out.tag = RangeTag::signed_range;
  out.data = unit.data;
  for (int64_t i = 0; i < out.data.numel(); ++i) out.data[i] = 2.0f * out.data[i] - 1.0f;
  return out;
}

ImageBatch to_unit(const ImageBatch& signed_img) {
  if (signed_img.tag != RangeTag::signed_range)
    throw ContractError("to_unit: input not in signed range");
  ImageBatch out;
  out.tag = RangeTag::unit;
  out.data = signed_img.data;
  for (int64_t i = 0; i < out.data.numel(); ++i)
    out.data[i] = 0.5f * (out.data[i] + 1.0f);
  return out;
}

}  // namespace usdn::img
