#include "usdn/img/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "usdn/img/imagio.hpp"

namespace usdn::metrics {
namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

void check_pair(const img::ImageBatch& a, const img::ImageBatch& b) {
  if (!a.data.same_shape(b.data))
    throw ContractError("metric inputs differ in shape: " + a.data.shape_str() + " vs " +
                        b.data.shape_str());
}

const std::vector<double>& gaussian_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kWindow * kWindow);
    double sum = 0.0;
    for (int y = 0; y < kWindow; ++y)
      for (int x = 0; x < kWindow; ++x) {
        double dy = y - kWindow / 2, dx = x - kWindow / 2;
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kWindowSigma * kWindowSigma));
        w[y * kWindow + x] = v;
        sum += v;
      }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

}  // namespace

double rmse(const img::ImageBatch& a, const img::ImageBatch& b) {
  check_pair(a, b);
  double acc = 0.0;
  const float* pa = a.data.data();
  const float* pb = b.data.data();
  const int64_t n = a.data.numel();
  for (int64_t i = 0; i < n; ++i) {
    double d = 255.0 * (static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

double psnr(const img::ImageBatch& a, const img::ImageBatch& b, double peak) {
  double e = rmse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / e);
}

double ssim(const img::ImageBatch& a, const img::ImageBatch& b) {
  check_pair(a, b);
  const int64_t n = a.count(), h = a.height(), w = a.width();
  if (h < kWindow || w < kWindow)
    throw ContractError("ssim needs sides >= 11, got " + std::to_string(h) + "x" + std::to_string(w));

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto& win = gaussian_window();

  double total = 0.0;
  int64_t count = 0;
  for (int64_t img_i = 0; img_i < n; ++img_i) {
    const float* pa = a.data.data() + img_i * h * w;
    const float* pb = b.data.data() + img_i * h * w;
    for (int64_t y = 0; y + kWindow <= h; ++y)
      for (int64_t x = 0; x + kWindow <= w; ++x) {
        double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int wy = 0; wy < kWindow; ++wy)
          for (int wx = 0; wx < kWindow; ++wx) {
            double g = win[wy * kWindow + wx];
            double va = 255.0 * pa[(y + wy) * w + (x + wx)];
            double vb = 255.0 * pb[(y + wy) * w + (x + wx)];
            mx += g * va;
            my += g * vb;
            sxx += g * va * va;
            syy += g * vb * vb;
            sxy += g * va * vb;
          }
        double vx = sxx - mx * mx;
        double vy = syy - my * my;
        double cxy = sxy - mx * my;
        double val = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += val;
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

MetricReport evaluate_pairs(const std::filesystem::path& pred_dir,
                            const std::filesystem::path& clean_dir, double sigma) {
  MetricReport report;
  report.sigma = sigma;

  std::vector<std::string> preds = img::list_images(pred_dir);
  std::vector<std::string> cleans = img::list_images(clean_dir);
  std::map<std::string, bool> clean_present;
  for (const auto& c : cleans) clean_present[c] = true;

  for (const auto& name : preds) {
    if (!clean_present.count(name)) {
      report.errors.push_back("unpaired prediction: " + name);
      continue;
    }
    clean_present[name] = false;
    img::ImageBatch p = img::load_image(pred_dir / name);
    img::ImageBatch c = img::load_image(clean_dir / name);
    if (!p.data.same_shape(c.data)) {
      report.errors.push_back("shape mismatch: " + name);
      continue;
    }
    MetricRow row;
    row.id = name;
    row.rmse = rmse(p, c);
    row.psnr = psnr(p, c);
    row.ssim = ssim(p, c);
    report.rows.push_back(std::move(row));
  }
  for (const auto& [name, unmatched] : clean_present)
    if (unmatched) report.errors.push_back("unpaired reference: " + name);

  std::sort(report.rows.begin(), report.rows.end(),
            [](const MetricRow& x, const MetricRow& y) { return x.id < y.id; });

  report.mean.id = "MEAN";
  if (!report.rows.empty()) {
    for (const auto& r : report.rows) {
      report.mean.psnr += r.psnr;
      report.mean.ssim += r.ssim;
      report.mean.rmse += r.rmse;
    }
    double inv = 1.0 / static_cast<double>(report.rows.size());
    report.mean.psnr *= inv;
    report.mean.ssim *= inv;
    report.mean.rmse *= inv;
  }
  return report;
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report " + path.string());
  f << "id,psnr,ssim,rmse\n";
  char buf[256];
  auto emit = [&](const MetricRow& r) {
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f\n", r.id.c_str(), r.psnr, r.ssim, r.rmse);
    f << buf;
  };
  for (const auto& r : report.rows) emit(r);
  emit(report.mean);
}

}  // namespace usdn::metrics
