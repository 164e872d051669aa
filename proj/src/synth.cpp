#include "rceed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "rceed/charset.hpp"
#include "rceed/errors.hpp"
#include "rceed/rng.hpp"

namespace rceed {

namespace {

// clang-format off
constexpr const char* kGlyphRows[62][7] = {
  {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},  // 0
  {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},  // 1
  {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},  // 2
  {"####.", "....#", "....#", ".###.", "....#", "....#", "####."},  // 3
  {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},  // 4
  {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},  // 5
  {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},  // 6
  {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},  // 7
  {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},  // 8
  {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},  // 9
  {".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // A
  {"####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."},  // B
  {".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."},  // C
  {"###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."},  // D
  {"#####", "#....", "#....", "####.", "#....", "#....", "#####"},  // E
  {"#####", "#....", "#....", "####.", "#....", "#....", "#...."},  // F
  {".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"},  // G
  {"#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"},  // H
  {".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},  // I
  {"..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."},  // J
  {"#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"},  // K
  {"#....", "#....", "#....", "#....", "#....", "#....", "#####"},  // L
  {"#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"},  // M
  {"#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"},  // N
  {".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // O
  {"####.", "#...#", "#...#", "####.", "#....", "#....", "#...."},  // P
  {".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"},  // Q
  {"####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"},  // R
  {".####", "#....", "#....", ".###.", "....#", "....#", "####."},  // S
  {"#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."},  // T
  {"#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."},  // U
  {"#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."},  // V
  {"#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."},  // W
  {"#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"},  // X
  {"#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."},  // Y
  {"#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"},  // Z
  {".....", ".....", ".###.", "....#", ".####", "#...#", ".####"},  // a
  {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."},  // b
  {".....", ".....", ".###.", "#....", "#....", "#...#", ".###."},  // c
  {"....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"},  // d
  {".....", ".....", ".###.", "#...#", "#####", "#....", ".###."},  // e
  {"..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."},  // f
  {".....", ".####", "#...#", "#...#", ".####", "....#", ".###."},  // g
  {"#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"},  // h
  {"..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."},  // i
  {"...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."},  // j
  {"#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."},  // k
  {".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."},  // l
  {".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"},  // m
  {".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"},  // n
  {".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."},  // o
  {".....", ".....", "####.", "#...#", "####.", "#....", "#...."},  // p
  {".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"},  // q
  {".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."},  // r
  {".....", ".....", ".###.", "#....", ".###.", "....#", "####."},  // s
  {".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."},  // t
  {".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"},  // u
  {".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."},  // v
  {".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."},  // w
  {".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"},  // x
  {".....", ".....", "#...#", "#...#", ".####", "....#", ".###."},  // y
  {".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"},  // z
};
// clang-format on

std::vector<GlyphAtlas::Bitmap> build_atlas() {
  std::vector<GlyphAtlas::Bitmap> atlas(CharSet::kCharacters);
  for (std::size_t g = 0; g < CharSet::kCharacters; ++g)
    for (std::size_t r = 0; r < GlyphAtlas::kHeight; ++r)
      for (std::size_t c = 0; c < GlyphAtlas::kWidth; ++c)
        atlas[g][r][c] = kGlyphRows[g][r][c] == '#';
  return atlas;
}

float quantize(float v) { return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f; }

// Weights mapping n source samples onto m outputs: box filter when
// shrinking, linear interpolation (pixel-centre aligned) when enlarging.
struct Tap {
  std::size_t index;
  float weight;
};

std::vector<std::vector<Tap>> resample_taps(std::size_t n, std::size_t m) {
  std::vector<std::vector<Tap>> taps(m);
  const double ratio = static_cast<double>(n) / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (n == m) {
      taps[i] = {{i, 1.0f}};
    } else if (n > m) {
      const double lo = i * ratio, hi = (i + 1) * ratio;
      for (auto s = static_cast<std::size_t>(lo); s < n && static_cast<double>(s) < hi; ++s) {
        const double cover = std::min<double>(hi, s + 1.0) - std::max<double>(lo, s);
        if (cover > 0) taps[i].push_back({s, static_cast<float>(cover / ratio)});
      }
    } else {
      const double pos = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(n - 1));
      const auto s0 = static_cast<std::size_t>(pos);
      const std::size_t s1 = std::min(s0 + 1, n - 1);
      const auto frac = static_cast<float>(pos - static_cast<double>(s0));
      taps[i] = {{s0, 1.0f - frac}, {s1, frac}};
    }
  }
  return taps;
}

GrayImage resize(const GrayImage& in, std::size_t h, std::size_t w) {
  if (in.height == h && in.width == w) return in;
  const auto col_taps = resample_taps(in.width, w);
  const auto row_taps = resample_taps(in.height, h);
  GrayImage tmp(in.height, w);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0;
      for (const Tap& t : col_taps[x]) acc += t.weight * in.at(y, t.index);
      tmp.at(y, x) = acc;
    }
  GrayImage out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      float acc = 0;
      for (const Tap& t : row_taps[y]) acc += t.weight * tmp.at(t.index, x);
      out.at(y, x) = std::clamp(acc, 0.0f, 1.0f);
    }
  return out;
}

void check_range(const char* what, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    std::ostringstream msg;
    msg << what << " " << v << " outside [" << lo << ", " << hi << "]";
    throw ConfigError(msg.str());
  }
}

void check_label(const std::string& label) {
  if (label.empty()) throw InputError("empty label");
  if (label.size() > kMaxLabelLength)
    throw InputError("label '" + label + "' is longer than " + std::to_string(kMaxLabelLength));
  for (char c : label) CharSet::to_index(c);
}

}  // namespace

const GlyphAtlas::Bitmap& GlyphAtlas::glyph(char c) {
  static const std::vector<Bitmap> atlas = build_atlas();
  return atlas[CharSet::to_index(c)];
}

void SampleSpec::validate() const {
  if (text.empty()) throw InputError("cannot render an empty text");
  check_label(text);
  check_range("curvature", curvature, 0.0, 0.3);
  check_range("tilt", tilt, 0.0, 0.2);
  check_range("noise", noise, 0.0, 0.1);
  check_range("scale", scale, 0.8, 1.2);
}

GrayImage render_canvas(const SampleSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double cell = 4.0 * spec.scale;  // canvas pixels per glyph pixel
  const double advance = (GlyphAtlas::kWidth + 1) * cell;
  const double margin_left = rng.uniform(2.0, 8.0);
  const double margin_right = rng.uniform(2.0, 8.0);
  const double background = rng.uniform(0.0, 0.25);
  const double foreground = rng.uniform(0.65, 1.0);
  const double bend_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
  const double tilt_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;

  const std::size_t n = spec.text.size();
  const double text_width = n * advance - cell;
  const auto width = static_cast<std::size_t>(std::ceil(margin_left + text_width + margin_right));
  const double height = kImageHeight;
  const double glyph_height = GlyphAtlas::kHeight * cell;
  const double centre = height / 2.0;

  std::vector<const GlyphAtlas::Bitmap*> glyphs;
  for (char c : spec.text) glyphs.push_back(&GlyphAtlas::glyph(c));

  constexpr int kSuper = 3;
  GrayImage canvas(kImageHeight, width);
  for (std::size_t x = 0; x < width; ++x) {
    for (int sx = 0; sx < kSuper; ++sx) {
      const double u = x + (sx + 0.5) / kSuper - margin_left;
      if (u < 0 || u >= text_width) continue;
      const auto slot = static_cast<std::size_t>(u / advance);
      const double in_cell = (u - slot * advance) / cell;
      if (slot >= n || in_cell >= GlyphAtlas::kWidth) continue;
      const auto gc = static_cast<std::size_t>(in_cell);
      const double f = u / text_width;
      const double bend =
          bend_sign * spec.curvature * height * (std::sin(std::numbers::pi * f) - 0.5);
      const double stretch = 1.0 + tilt_sign * spec.tilt * (2.0 * f - 1.0);
      for (std::size_t y = 0; y < kImageHeight; ++y) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          const double ys = y + (sy + 0.5) / kSuper;
          const double v = (ys - centre - bend) / stretch + glyph_height / 2.0;
          if (v < 0 || v >= glyph_height) continue;
          const auto gr = static_cast<std::size_t>(v / cell);
          if (gr < GlyphAtlas::kHeight && (*glyphs[slot])[gr][gc]) ++hits;
        }
        canvas.at(y, x) += static_cast<float>(hits) / (kSuper * kSuper);
      }
    }
  }
  for (float& p : canvas.pixels) {
    double value = background + (foreground - background) * (p / kSuper);
    if (spec.noise > 0) value += spec.noise * rng.normal();
    p = static_cast<float>(std::clamp(value, 0.0, 1.0));
  }
  return canvas;
}

LabeledSample render(const SampleSpec& spec) {
  Tensor<float> image = preprocess(render_canvas(spec));
  for (float& v : image.data()) v = quantize(v);
  return {image, spec.text};
}

Tensor<float> preprocess(const GrayImage& image) {
  if (image.height == 0 || image.width == 0 || image.pixels.size() != image.height * image.width)
    throw InputError("cannot preprocess a zero-area image");
  const double scaled = static_cast<double>(image.width) * kImageHeight / image.height;
  const std::size_t width =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(scaled)), 1, kImageWidth);
  const GrayImage resized = resize(image, kImageHeight, width);
  Tensor<float> out(Shape{kImageHeight, kImageWidth, 1}, 0.0f);
  for (std::size_t y = 0; y < kImageHeight; ++y)
    for (std::size_t x = 0; x < width; ++x) out[y * kImageWidth + x] = resized.at(y, x);
  return out;
}

GrayImage to_gray(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw DimensionError("expected an H x W x 1 image, got " + shape_str(image.shape()));
  GrayImage out(image.dim(0), image.dim(1));
  std::copy(image.data().begin(), image.data().end(), out.pixels.begin());
  return out;
}

void DatasetSpec::validate() const {
  if (min_length < 1 || max_length > kMaxLabelLength || min_length > max_length)
    throw ConfigError("label lengths must satisfy 1 <= min <= max <= 26");
  check_range("max curvature", max_curvature, 0.0, 0.3);
  check_range("max tilt", max_tilt, 0.0, 0.2);
  check_range("max noise", max_noise, 0.0, 0.1);
}

SampleSpec sample_spec(const DatasetSpec& spec, std::uint64_t seed, std::size_t index) {
  Rng rng = Rng::derive(seed, index);
  const std::string_view alphabet = CharSet::alphabet();
  SampleSpec s;
  const std::size_t length = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
  for (std::size_t i = 0; i < length; ++i) s.text.push_back(alphabet[rng.below(alphabet.size())]);
  s.curvature = rng.uniform(0.0, spec.max_curvature);
  s.tilt = rng.uniform(0.0, spec.max_tilt);
  s.noise = rng.uniform(0.0, spec.max_noise);
  s.scale = rng.uniform(0.8, 1.2);
  s.seed = rng.next();
  return s;
}

std::vector<LabeledSample> generate_dataset(std::size_t n, const DatasetSpec& spec,
                                            std::uint64_t seed) {
  if (n == 0) throw InputError("dataset size must be at least 1");
  spec.validate();
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(render(sample_spec(spec, seed, i)));
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const auto bad = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  const auto token = [&]() {
    std::string t;
    while (f) {
      int c = f.get();
      if (c == '#') {
        while (f && f.get() != '\n') {
        }
      } else if (std::isspace(c)) {
        if (!t.empty()) break;
      } else if (c != EOF) {
        t.push_back(static_cast<char>(c));
      }
    }
    return t;
  };
  if (token() != "P5") throw bad("not a binary PGM (P5) file");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(token());
    height = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw bad("malformed header");
  }
  if (width == 0 || height == 0) throw bad("zero-area image");
  if (maxval == 0 || maxval > 255) throw bad("unsupported maxval " + std::to_string(maxval));
  std::vector<unsigned char> bytes(width * height);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw bad("truncated pixel data");
  GrayImage image(height, width);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    image.pixels[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  return image;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<LabeledSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream labels(dir / "labels.tsv", std::ios::binary);
  if (!labels) throw IoError("cannot write " + (dir / "labels.tsv").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.pgm", i);
    write_pgm(dir / name, to_gray(samples[i].image));
    labels << name << '\t' << samples[i].label << '\n';
  }
  if (!labels) throw IoError("failed writing " + (dir / "labels.tsv").string());
}

std::vector<LabeledSample> read_dataset(const std::filesystem::path& dir) {
  const auto labels_path = dir / "labels.tsv";
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw DataError("missing " + labels_path.string());
  std::vector<LabeledSample> out;
  std::string line;
  for (std::size_t number = 1; std::getline(labels, line); ++number) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = labels_path.string() + ":" + std::to_string(number);
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw DataError(where + ": expected `<file>\\t<label>`");
    const std::string file = line.substr(0, tab), label = line.substr(tab + 1);
    try {
      check_label(label);
    } catch (const InputError& e) {
      throw DataError(where + ": " + e.what());
    }
    GrayImage image;
    try {
      image = read_pgm(dir / file);
    } catch (const IoError& e) {
      throw DataError(e.what());
    }
    Tensor<float> tensor =
        image.height == kImageHeight && image.width == kImageWidth
            ? Tensor<float>(Shape{kImageHeight, kImageWidth, 1}, image.pixels)
            : preprocess(image);
    out.push_back({tensor, label});
  }
  if (out.empty()) throw DataError(labels_path.string() + " lists no samples");
  return out;
}

}  // namespace rceed
