#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rceed/tensor.hpp"

namespace rceed {

constexpr std::size_t kImageHeight = 48;
constexpr std::size_t kImageWidth = 160;
constexpr std::size_t kMaxLabelLength = 26;

// Row-major grayscale image with values in [0, 1].
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

// 5x7 bitmaps, one per character class.
struct GlyphAtlas {
  static constexpr std::size_t kWidth = 5;
  static constexpr std::size_t kHeight = 7;
  using Bitmap = std::array<std::array<bool, kWidth>, kHeight>;

  static const Bitmap& glyph(char c);
};

struct SampleSpec {
  std::string text;
  double curvature = 0.0;  // arc amplitude as a fraction of image height, [0, 0.3]
  double tilt = 0.0;       // linear change of glyph height along the word, [0, 0.2]
  double noise = 0.0;      // Gaussian sigma, [0, 0.1]
  double scale = 1.0;      // glyph size multiplier, [0.8, 1.2]
  std::uint64_t seed = 0;  // drives contrast, margins, curve direction and noise

  void validate() const;
};

struct LabeledSample {
  Tensor<float> image;  // [48 x 160 x 1], values k/255
  std::string label;
};

// Word image at its natural width (height 48), before preprocessing.
GrayImage render_canvas(const SampleSpec& spec);
// render_canvas -> preprocess -> quantize to multiples of 1/255.
LabeledSample render(const SampleSpec& spec);

// Scale to height 48 keeping the aspect ratio; right-pad with zeros up to
// width 160, or squeeze to 160 when wider.
Tensor<float> preprocess(const GrayImage& image);
GrayImage to_gray(const Tensor<float>& image);

struct DatasetSpec {
  std::size_t min_length = 1;
  std::size_t max_length = 10;
  double max_curvature = 0.3;
  double max_tilt = 0.2;
  double max_noise = 0.1;

  void validate() const;
};

// Sample i is drawn from Rng::derive(seed, i), so any index range can be
// generated independently.
SampleSpec sample_spec(const DatasetSpec& spec, std::uint64_t seed, std::size_t index);
std::vector<LabeledSample> generate_dataset(std::size_t n, const DatasetSpec& spec,
                                            std::uint64_t seed);

// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

// Directory of NNNNNN.pgm files plus labels.tsv (`<file>\t<label>` per line).
void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> read_dataset(const std::filesystem::path& dir);

}  // namespace rceed
