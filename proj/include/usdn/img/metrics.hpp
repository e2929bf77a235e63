#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "usdn/img/image.hpp"

namespace usdn::metrics {

// All metrics operate on unit-range images mapped to the 0-255 scale, the
// convention consistent with typical published RMSE magnitudes.

// sqrt(mean((255a - 255b)^2))
double rmse(const img::ImageBatch& a, const img::ImageBatch& b);

// 20*log10(peak / rmse); identical inputs return +inf.
double psnr(const img::ImageBatch& a, const img::ImageBatch& b, double peak = 255.0);

// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01*255)^2,
// C2=(0.03*255)^2, averaged over valid window positions. Sides must be >= 11.
double ssim(const img::ImageBatch& a, const img::ImageBatch& b);

struct MetricRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;   // sorted by id
  MetricRow mean;                // arithmetic mean of rows, id = "MEAN"
  std::vector<std::string> errors;  // unpaired/unreadable files, excluded from mean
  double sigma = 0.0;            // noise level evaluated, 0 when unknown
};

// Pairs files by name across the two directories and evaluates each pair.
MetricReport evaluate_pairs(const std::filesystem::path& pred_dir,
                            const std::filesystem::path& clean_dir, double sigma = 0.0);

// CSV: header id,psnr,ssim,rmse; one 4-decimal row per image; trailing MEAN row.
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);

}  // namespace usdn::metrics
