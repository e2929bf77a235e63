#include "usdn/img/imagio.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "usdn/core/rng.hpp"

namespace usdn::img {
namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// ---------------------------------------------------------------------------
// PNG

ImageBatch load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  std::vector<unsigned char> pixels;
  png_uint_32 w = 0, h = 0;
  int channels = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + path.string());
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unsupported bit depth 16: " + path.string());
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unsupported PNG channel count " + std::to_string(channels));
  }

  pixels.resize(static_cast<size_t>(w) * h * channels);
  {
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y)
      rows[y] = pixels.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBatch out;
  out.tag = RangeTag::unit;
  out.data = Tensor<float>({1, 1, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  float* dst = out.data.data();
  if (channels == 1) {
    for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i)
      dst[i] = static_cast<float>(pixels[i]) / 255.0f;
  } else {
    // BT.601 luma, applied before the /255 mapping.
    for (size_t i = 0; i < static_cast<size_t>(w) * h; ++i) {
      const unsigned char* p = pixels.data() + i * 3;
      double y601 = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      dst[i] = static_cast<float>(y601 / 255.0);
    }
  }
  return out;
}

void save_png_gray(const std::filesystem::path& path, int64_t w, int64_t h,
                   const std::vector<unsigned char>& bytes) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  {
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t y = 0; y < h; ++y)
      rows[static_cast<size_t>(y)] = const_cast<png_bytep>(bytes.data() + y * w);
    png_write_image(png, rows.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// PGM (binary P5, maxval 255)

ImageBatch load_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());

  auto next_token = [&f, &path]() -> std::string {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
      if (c == '#') {
        while ((c = f.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw FormatError("truncated PGM header: " + path.string());
    return tok;
  };

  if (next_token() != "P5") throw FormatError("not a binary PGM (P5): " + path.string());
  int64_t w = std::stoll(next_token());
  int64_t h = std::stoll(next_token());
  int64_t maxval = std::stoll(next_token());
  if (w <= 0 || h <= 0) throw FormatError("bad PGM dimensions: " + path.string());
  if (maxval != 255)
    throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " (want 255): " + path.string());

  std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError("truncated PGM pixel data: " + path.string());

  ImageBatch out;
  out.tag = RangeTag::unit;
  out.data = Tensor<float>({1, 1, h, w});
  for (size_t i = 0; i < bytes.size(); ++i) out.data[static_cast<int64_t>(i)] = bytes[i] / 255.0f;
  return out;
}

void save_pgm(const std::filesystem::path& path, int64_t w, int64_t h,
              const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write " + path.string());
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write: " + path.string());
}

void gaussian_blur_inplace(Tensor<float>& img, int64_t h, int64_t w, double sigma) {
  if (sigma <= 0.0) return;
  int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int64_t i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : kernel) v /= sum;

  auto reflect = [](int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };

  Tensor<float> tmp({h, w});
  float* src = img.data();
  // horizontal
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * src[y * w + reflect(x + i, w)];
      tmp[y * w + x] = static_cast<float>(acc);
    }
  // vertical
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * tmp[reflect(y + i, h) * w + x];
      src[y * w + x] = static_cast<float>(acc);
    }
}

}  // namespace

ImageBatch load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  std::string ext = lower_ext(path);
  ImageBatch out;
  if (ext == ".pgm")
    out = load_pgm(path);
  else
    out = load_png(path);
  if (out.height() < 8 || out.width() < 8)
    throw FormatError("image smaller than 8x8: " + path.string());
  return out;
}

void save_image(const ImageBatch& img, const std::filesystem::path& path) {
  if (img.tag != RangeTag::unit)
    throw ContractError("save_image: expects unit-range image (denormalize first)");
  if (img.data.ndim() != 4 || img.data.dim(0) != 1 || img.data.dim(1) != 1)
    throw ContractError("save_image: expects a single 1 x 1 x H x W image, got " + img.data.shape_str());
  int64_t h = img.height(), w = img.width();
  std::vector<unsigned char> bytes(static_cast<size_t>(h * w));
  const float* src = img.data.data();
  for (int64_t i = 0; i < h * w; ++i) {
    // round-half-up, then clamp
    double q = std::floor(static_cast<double>(src[i]) * 255.0 + 0.5);
    bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
  }
  if (lower_ext(path) == ".pgm")
    save_pgm(path, w, h, bytes);
  else
    save_png_gray(path, w, h, bytes);
}

ImageBatch resize_bilinear(const ImageBatch& img, int64_t oh, int64_t ow) {
  if (oh < 8 || ow < 8) throw ContractError("resize target must be >= 8x8");
  int64_t n = img.count(), ih = img.height(), iw = img.width();
  if (ih == oh && iw == ow) return img;

  ImageBatch out;
  out.tag = img.tag;
  out.data = Tensor<float>({n, 1, oh, ow});

  double sy = static_cast<double>(ih) / static_cast<double>(oh);
  double sx = static_cast<double>(iw) / static_cast<double>(ow);
  for (int64_t b = 0; b < n; ++b) {
    const float* src = img.data.data() + b * ih * iw;
    float* dst = out.data.data() + b * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      double ty = fy - y0;
      int64_t y0c = std::clamp<int64_t>(y0, 0, ih - 1);
      int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, ih - 1);
      for (int64_t x = 0; x < ow; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double tx = fx - x0;
        int64_t x0c = std::clamp<int64_t>(x0, 0, iw - 1);
        int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, iw - 1);
        double v00 = src[y0c * iw + x0c], v01 = src[y0c * iw + x1c];
        double v10 = src[y1c * iw + x0c], v11 = src[y1c * iw + x1c];
        double top = v00 + (v01 - v00) * tx;
        double bot = v10 + (v11 - v10) * tx;
        dst[y * ow + x] = static_cast<float>(top + (bot - top) * ty);
      }
    }
  }
  return out;
}

std::vector<std::string> list_images(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  if (!std::filesystem::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = lower_ext(e.path());
    if (ext == ".png" || ext == ".pgm") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

DatasetManifest make_splits(const std::filesystem::path& root, double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split ratio must be in (0,1)");
  std::vector<std::string> files = list_images(root);
  if (files.size() < 2) throw DatasetError("need at least 2 images in " + root.string());

  Rng rng(seed);
  rng.shuffle(files);
  auto n = static_cast<int64_t>(files.size());
  auto k = static_cast<int64_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  k = std::clamp<int64_t>(k, 1, n);

  DatasetManifest m;
  m.root = root;
  m.seed = seed;
  m.train.assign(files.begin(), files.begin() + k);
  m.test.assign(files.begin() + k, files.end());
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["root"] = m.root.string();
  j["seed"] = m.seed;
  j["train"] = m.train;
  j["test"] = m.test;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest JSON: " + std::string(e.what()));
  }
  DatasetManifest m;
  try {
    m.root = j.at("root").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest missing field: " + std::string(e.what()));
  }

  std::set<std::string> train_set(m.train.begin(), m.train.end());
  for (const auto& t : m.test)
    if (train_set.count(t)) throw DatasetError("manifest train/test overlap on " + t);
  for (const auto& rel : m.train)
    if (!std::filesystem::exists(m.root / rel)) throw DatasetError("missing train file " + rel);
  for (const auto& rel : m.test)
    if (!std::filesystem::exists(m.root / rel)) throw DatasetError("missing test file " + rel);
  return m;
}

void validate_phantom_spec(const PhantomSpec& spec) {
  if (spec.size < 8 || spec.size % 8 != 0)
    throw ContractError("phantom size must be >= 8 and divisible by 8");
  if (spec.n_blobs < 1) throw ContractError("phantom needs n_blobs >= 1");
  if (!(spec.intensity_lo <= spec.intensity_hi) || spec.intensity_lo < 0.0 || spec.intensity_hi > 1.0)
    throw ContractError("phantom intensity range must satisfy 0 <= lo <= hi <= 1");
  if (spec.background < 0.0 || spec.background > 1.0)
    throw ContractError("phantom background amplitude must be in [0,1]");
  if (spec.blur_sigma < 0.0) throw ContractError("phantom blur_sigma must be >= 0");
}

ImageBatch synth_phantom(const PhantomSpec& spec, uint64_t seed) {
  validate_phantom_spec(spec);
  int64_t s = spec.size;
  ImageBatch out;
  out.tag = RangeTag::unit;
  out.data = Tensor<float>({1, 1, s, s});
  float* px = out.data.data();

  // vertical gradient background
  for (int64_t y = 0; y < s; ++y) {
    float v = static_cast<float>(spec.background * static_cast<double>(y) / static_cast<double>(s - 1));
    for (int64_t x = 0; x < s; ++x) px[y * s + x] = v;
  }

  Rng rng(seed);
  for (int i = 0; i < spec.n_blobs; ++i) {
    double cx = rng.uniform(0.15, 0.85) * s;
    double cy = rng.uniform(0.15, 0.85) * s;
    double ax = rng.uniform(0.06, 0.22) * s;
    double ay = rng.uniform(0.06, 0.22) * s;
    double theta = rng.uniform(0.0, 3.14159265358979323846);
    double inten = spec.intensity_lo == spec.intensity_hi
                       ? spec.intensity_lo
                       : rng.uniform(spec.intensity_lo, spec.intensity_hi);
    double ct = std::cos(theta), st = std::sin(theta);
    for (int64_t y = 0; y < s; ++y)
      for (int64_t x = 0; x < s; ++x) {
        double dx = x - cx, dy = y - cy;
        double u = (dx * ct + dy * st) / ax;
        double v = (-dx * st + dy * ct) / ay;
        if (u * u + v * v <= 1.0) {
          float& p = px[y * s + x];
          p = std::max(p, static_cast<float>(inten));
        }
      }
  }

  if (spec.blur_sigma > 0.0) {
    Tensor<float> plane({s, s});
    std::memcpy(plane.data(), px, sizeof(float) * static_cast<size_t>(s * s));
    gaussian_blur_inplace(plane, s, s, spec.blur_sigma);
    std::memcpy(px, plane.data(), sizeof(float) * static_cast<size_t>(s * s));
  }
  for (int64_t i = 0; i < s * s; ++i) px[i] = std::clamp(px[i], 0.0f, 1.0f);
  return out;
}

}  // namespace usdn::img
