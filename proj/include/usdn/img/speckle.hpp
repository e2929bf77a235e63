#pragma once

#include <cstdint>
#include <optional>

#include "usdn/img/image.hpp"

namespace usdn::speckle {

enum class NoiseModel { multiplicative_gaussian };

struct NoiseSpec {
  NoiseModel model = NoiseModel::multiplicative_gaussian;
  double sigma = 0.25;  // multiplicative std
  uint64_t seed = 0;
};

void validate_noise_spec(const NoiseSpec& spec);

// y = clip(x + x*n, 0, 1), n ~ N(0, sigma^2) i.i.d. per pixel.
// Deterministic per seed; sigma = 0 returns the input exactly.
img::ImageBatch add_speckle(const img::ImageBatch& clean, const NoiseSpec& spec);

// k x k window median, reflect padding. k must be one of {3,5,7}.
img::ImageBatch median_filter(const img::ImageBatch& image, int k);

// Lee filter: out = x + (W-1)*(x - mu_w), W = max(0, (var_w - noise_var)/var_w),
// with var_w = 0 forcing W = 0. Window statistics over k x k reflect-padded
// neighborhoods. When noise_var is absent it is estimated as the mean of the
// local variances.
img::ImageBatch lee_filter(const img::ImageBatch& image, int k,
                           std::optional<double> noise_var = std::nullopt);

}  // namespace usdn::speckle
