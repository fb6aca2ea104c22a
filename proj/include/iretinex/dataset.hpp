#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "iretinex/colorspace.hpp"
#include "iretinex/degrade.hpp"
#include "iretinex/errors.hpp"

namespace iretinex {

/// SplitMix64 finalizer; mixes a seed with stream indices into an
/// independent RNG seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
  auto step = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return step(step(step(seed) ^ a) ^ b);
}

using Rng = std::mt19937_64;

struct ImagePair {
  ImageRGB low;
  ImageRGB clean;
};

// ---------------------------------------------------------------------------
// Procedural textures

inline constexpr std::size_t kTextureFamilies = 8;

inline const char* texture_family_name(std::size_t family) {
  static constexpr std::array<const char*, kTextureFamilies> names{
      "gradient", "checker", "value-noise", "color-ramp", "stripes", "blobs", "plaid", "marble"};
  return names.at(family % kTextureFamilies);
}

namespace detail {

struct Rgb {
  double r, g, b;
};

inline Rgb random_color(Rng& rng, double lo = 0.05, double hi = 0.95) {
  std::uniform_real_distribution<double> u(lo, hi);
  const double r = u(rng), g = u(rng), b = u(rng);
  return {r, g, b};
}

inline Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

inline Rgb hue_color(double h) {
  h -= std::floor(h);
  auto ch = [&](double off) {
    const double x = std::abs(std::fmod(h * 6.0 + off, 6.0) - 3.0) - 1.0;
    return 0.1 + 0.8 * std::clamp(x, 0.0, 1.0);
  };
  return {ch(0.0), ch(4.0), ch(2.0)};
}

/// Smoothly interpolated lattice noise with `octaves` doublings, in [0,1].
class ValueNoise {
 public:
  ValueNoise(Rng& rng, std::size_t cells) : cells_(cells), lattice_((cells + 1) * (cells + 1)) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : lattice_) v = u(rng);
  }

  double operator()(double x, double y, std::size_t octaves = 3) const {
    double sum = 0.0, amp = 1.0, norm = 0.0, freq = 1.0;
    for (std::size_t o = 0; o < octaves; ++o) {
      sum += amp * sample(std::fmod(x * freq, 1.0), std::fmod(y * freq, 1.0));
      norm += amp;
      amp *= 0.5;
      freq *= 2.0;
    }
    return sum / norm;
  }

 private:
  double sample(double x, double y) const {
    const double gx = x * double(cells_), gy = y * double(cells_);
    const std::size_t ix = std::min(std::size_t(gx), cells_ - 1), iy = std::min(std::size_t(gy), cells_ - 1);
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double tx = smooth(gx - double(ix)), ty = smooth(gy - double(iy));
    auto at = [&](std::size_t cx, std::size_t cy) { return lattice_[cy * (cells_ + 1) + cx]; };
    const double top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * tx;
    const double bot = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * tx;
    return top + (bot - top) * ty;
  }

  std::size_t cells_;
  std::vector<double> lattice_;
};

}  // namespace detail

/// Texture `index` of the bundled procedural set. The family is index mod 8;
/// the remaining parameters come from (seed, index).
inline ImageRGB procedural_texture(std::size_t index, std::size_t height, std::size_t width,
                                   std::uint64_t seed = 0) {
  using namespace detail;
  Rng rng(mix_seed(seed, 0x7e47u, index));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t family = index % kTextureFamilies;
  ImageRGB img(height, width);
  const Rgb c0 = random_color(rng), c1 = random_color(rng);
  const double angle = u(rng) * 2.0 * std::numbers::pi;
  const double freq = 2.0 + 4.0 * u(rng);
  const double phase = u(rng) * 2.0 * std::numbers::pi;
  ValueNoise noise(rng, 4 + std::size_t(4 * u(rng)));
  std::array<std::array<double, 3>, 4> blobs{};
  for (auto& b : blobs) b = {u(rng), u(rng), 0.08 + 0.15 * u(rng)};
  const Rgb c2 = random_color(rng);

  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = (double(x) + 0.5) / double(width), fy = (double(y) + 0.5) / double(height);
      Rgb c{};
      switch (family) {
        case 0: {  // linear gradient at a random angle
          const double t = 0.5 + 0.5 * ((fx - 0.5) * std::cos(angle) + (fy - 0.5) * std::sin(angle)) * 1.4;
          c = lerp(c0, c1, std::clamp(t, 0.0, 1.0));
          break;
        }
        case 1: {  // checkerboard
          const auto cx = std::size_t(fx * freq * 1.5), cy = std::size_t(fy * freq * 1.5);
          c = ((cx + cy) % 2) ? c0 : c1;
          break;
        }
        case 2:  // multi-octave value noise between two colors
          c = lerp(c0, c1, noise(fx, fy, 4));
          break;
        case 3: {  // hue ramp modulated by a vertical brightness ramp
          const Rgb h = hue_color(0.5 * fx + phase / (2.0 * std::numbers::pi));
          const double k = 0.4 + 0.6 * fy;
          c = {h.r * k, h.g * k, h.b * k};
          break;
        }
        case 4: {  // sinusoidal stripes
          const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq *
                                                    (fx * std::cos(angle) + fy * std::sin(angle)) + phase);
          c = lerp(c0, c1, t);
          break;
        }
        case 5: {  // soft blobs over a background
          double w = 0.0;
          for (const auto& b : blobs) {
            const double dx = fx - b[0], dy = fy - b[1];
            w += std::exp(-(dx * dx + dy * dy) / (2.0 * b[2] * b[2]));
          }
          c = lerp(c0, c1, std::clamp(w, 0.0, 1.0));
          break;
        }
        case 6: {  // plaid: product of two sinusoids
          const double sx = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * fx + phase);
          const double sy = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (freq * 0.7) * fy);
          c = lerp(lerp(c0, c1, sx), c2, 0.5 * sy);
          break;
        }
        default: {  // marble: noise-perturbed stripes
          const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * freq * fx + 6.0 * noise(fx, fy, 3));
          c = lerp(lerp(c0, c2, fy), c1, t);
          break;
        }
      }
      img.at(y, x, 0) = float(std::clamp(c.r, 0.0, 1.0));
      img.at(y, x, 1) = float(std::clamp(c.g, 0.0, 1.0));
      img.at(y, x, 2) = float(std::clamp(c.b, 0.0, 1.0));
    }
  }
  return img;
}

/// Textures first..first+count-1 of the bundled set.
inline std::vector<ImageRGB> bundled_textures(std::size_t count, std::size_t size = 64, std::uint64_t seed = 0,
                                              std::size_t first = 0) {
  std::vector<ImageRGB> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(procedural_texture(first + i, size, size, seed));
  return out;
}

/// Degrades each clean image once with an RNG stream derived from (seed, position).
inline std::vector<ImagePair> make_pairs(const std::vector<ImageRGB>& clean, const DegradeConfig& cfg) {
  cfg.validate();
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng rng(mix_seed(cfg.seed, 0xde9u, i));
    pairs.push_back({synth_lowlight(clean[i], cfg, rng), clean[i]});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Element of the dihedral group: counter-clockwise quarter turns, then an
/// optional horizontal mirror.
struct Dihedral {
  unsigned quarter_turns = 0;  // 0..3
  bool flip = false;
};

inline ImageRGB rotate90(const ImageRGB& img) {
  const std::size_t H = img.height(), W = img.width();
  ImageRGB out(W, H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(W - 1 - x, y, c) = img.at(y, x, c);
  return out;
}

inline ImageRGB flip_horizontal(const ImageRGB& img) {
  const std::size_t H = img.height(), W = img.width();
  ImageRGB out(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, W - 1 - x, c) = img.at(y, x, c);
  return out;
}

inline ImageRGB apply(const Dihedral& d, const ImageRGB& img) {
  ImageRGB out = img;
  for (unsigned i = 0; i < d.quarter_turns % 4; ++i) out = rotate90(out);
  if (d.flip) out = flip_horizontal(out);
  return out;
}

struct AugmentConfig {
  bool rotate = true;
  bool flip = true;
};

/// Draws one dihedral element and applies it to both members of the pair.
inline ImagePair augment(const ImagePair& pair, Rng& rng, const AugmentConfig& cfg = {}) {
  if (pair.low.height() != pair.clean.height() || pair.low.width() != pair.clean.width()) {
    throw DimensionError("augment: pair members differ in size");
  }
  if (cfg.rotate && pair.low.height() != pair.low.width()) {
    throw ConfigError("augment: rotation needs square patches, got " + std::to_string(pair.low.height()) + "x" +
                      std::to_string(pair.low.width()));
  }
  Dihedral d;
  if (cfg.rotate) d.quarter_turns = unsigned(std::uniform_int_distribution<int>(0, 3)(rng));
  if (cfg.flip) d.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return {apply(d, pair.low), apply(d, pair.clean)};
}

/// Random aligned crop of `size`×`size` from both members.
inline ImagePair random_crop(const ImagePair& pair, std::size_t size, Rng& rng) {
  const std::size_t H = pair.clean.height(), W = pair.clean.width();
  if (size > H || size > W) {
    throw ConfigError("patch " + std::to_string(size) + " exceeds image " + std::to_string(H) + "x" +
                      std::to_string(W));
  }
  const std::size_t y0 = H == size ? 0 : std::uniform_int_distribution<std::size_t>(0, H - size)(rng);
  const std::size_t x0 = W == size ? 0 : std::uniform_int_distribution<std::size_t>(0, W - size)(rng);
  return {pair.low.crop(y0, x0, size, size), pair.clean.crop(y0, x0, size, size)};
}

}  // namespace iretinex
