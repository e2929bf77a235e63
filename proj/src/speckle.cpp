#include "usdn/img/speckle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "usdn/core/rng.hpp"

namespace usdn::speckle {
namespace {

int64_t reflect_index(int64_t i, int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

void check_window(int k) {
  if (k != 3 && k != 5 && k != 7)
    throw ContractError("filter window must be one of {3,5,7}, got " + std::to_string(k));
}

}  // namespace

void validate_noise_spec(const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0 && spec.sigma <= 1.0))
    throw ContractError("noise sigma must be in [0,1], got " + std::to_string(spec.sigma));
}

img::ImageBatch add_speckle(const img::ImageBatch& clean, const NoiseSpec& spec) {
  validate_noise_spec(spec);
  if (clean.tag != img::RangeTag::unit)
    throw ContractError("add_speckle: expects unit-range input");

  img::ImageBatch out;
  out.tag = img::RangeTag::unit;
  out.data = clean.data;
  if (spec.sigma == 0.0) return out;

  Rng rng(spec.seed);
  float* px = out.data.data();
  const int64_t n = out.data.numel();
  for (int64_t i = 0; i < n; ++i) {
    double noise = spec.sigma * rng.normal();
    double y = static_cast<double>(px[i]) * (1.0 + noise);
    px[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return out;
}

img::ImageBatch median_filter(const img::ImageBatch& image, int k) {
  check_window(k);
  const int64_t n = image.count(), h = image.height(), w = image.width();
  const int r = k / 2;

  img::ImageBatch out;
  out.tag = image.tag;
  out.data = Tensor<float>(image.data.shape());

  std::vector<float> window(static_cast<size_t>(k) * k);
  for (int64_t b = 0; b < n; ++b) {
    const float* src = image.data.data() + b * h * w;
    float* dst = out.data.data() + b * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        size_t m = 0;
        for (int dy = -r; dy <= r; ++dy) {
          const float* row = src + reflect_index(y + dy, h) * w;
          for (int dx = -r; dx <= r; ++dx) window[m++] = row[reflect_index(x + dx, w)];
        }
        auto mid = window.begin() + static_cast<int64_t>(m) / 2;
        std::nth_element(window.begin(), mid, window.begin() + static_cast<int64_t>(m));
        dst[y * w + x] = *mid;
      }
  }
  return out;
}

img::ImageBatch lee_filter(const img::ImageBatch& image, int k, std::optional<double> noise_var) {
  check_window(k);
  if (noise_var && *noise_var < 0.0) throw ContractError("lee_filter: noise_var must be >= 0");
  const int64_t n = image.count(), h = image.height(), w = image.width();
  const int r = k / 2;
  const double inv_count = 1.0 / (static_cast<double>(k) * k);

  img::ImageBatch out;
  out.tag = image.tag;
  out.data = Tensor<float>(image.data.shape());

  std::vector<double> mean(static_cast<size_t>(h * w)), var(static_cast<size_t>(h * w));
  for (int64_t b = 0; b < n; ++b) {
    const float* src = image.data.data() + b * h * w;
    float* dst = out.data.data() + b * h * w;

    double var_sum = 0.0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double s = 0.0, s2 = 0.0;
        for (int dy = -r; dy <= r; ++dy) {
          const float* row = src + reflect_index(y + dy, h) * w;
          for (int dx = -r; dx <= r; ++dx) {
            double v = row[reflect_index(x + dx, w)];
            s += v;
            s2 += v * v;
          }
        }
        double mu = s * inv_count;
        double v2 = std::max(0.0, s2 * inv_count - mu * mu);
        mean[static_cast<size_t>(y * w + x)] = mu;
        var[static_cast<size_t>(y * w + x)] = v2;
        var_sum += v2;
      }

    double nv = noise_var ? *noise_var : var_sum / static_cast<double>(h * w);
    for (int64_t i = 0; i < h * w; ++i) {
      double v2 = var[static_cast<size_t>(i)];
      double gain = v2 > 0.0 ? std::max(0.0, (v2 - nv) / v2) : 0.0;
      // x + (W-1)*(x-mu) == mu + W*(x-mu), but is exact when W == 1.
      double x = src[i];
      dst[i] = static_cast<float>(x + (gain - 1.0) * (x - mean[static_cast<size_t>(i)]));
    }
  }
  return out;
}

}  // namespace usdn::speckle
