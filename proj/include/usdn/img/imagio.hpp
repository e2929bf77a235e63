#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "usdn/img/image.hpp"

namespace usdn::img {

// Reads an 8-bit grayscale PNG or binary PGM (P5). Color PNGs are converted
// with BT.601 luma weights (0.299/0.587/0.114); 16-bit files are rejected.
// Pixel values map to [0,1] as v/255.
ImageBatch load_image(const std::filesystem::path& path);

// Writes a single [0,1] image as an 8-bit grayscale PNG or PGM (by
// extension, default PNG). Quantization is round-half-up: byte =
// clamp(floor(v*255 + 0.5), 0, 255).
void save_image(const ImageBatch& img, const std::filesystem::path& path);

// Bilinear resize, corner-aligned=false (half-pixel center convention).
ImageBatch resize_bilinear(const ImageBatch& img, int64_t h, int64_t w);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> train;  // paths relative to root
  std::vector<std::string> test;
  uint64_t seed = 0;
};

// Deterministic split of the images under `root` (sorted, then shuffled by
// seed); first ceil(ratio*n) files go to train.
DatasetManifest make_splits(const std::filesystem::path& root, double ratio, uint64_t seed);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
// Loads and verifies the manifest: disjoint train/test, all files present.
DatasetManifest load_manifest(const std::filesystem::path& path);

struct PhantomSpec {
  int64_t size = 64;           // square side, divisible by 8
  int n_blobs = 6;
  double intensity_lo = 0.15;  // blob intensity range in [0,1]
  double intensity_hi = 0.95;
  double background = 0.35;    // vertical gradient amplitude
  double blur_sigma = 1.2;     // Gaussian blur in pixels
};

void validate_phantom_spec(const PhantomSpec& spec);

// Renders random ellipses over a vertical gradient, then Gaussian-blurs.
// Deterministic per (spec, seed); output in [0,1].
ImageBatch synth_phantom(const PhantomSpec& spec, uint64_t seed);

// Lists image files (*.png, *.pgm) directly under dir, sorted by filename.
std::vector<std::string> list_images(const std::filesystem::path& dir);

}  // namespace usdn::img
