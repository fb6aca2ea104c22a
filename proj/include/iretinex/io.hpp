#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "iretinex/arch.hpp"
#include "iretinex/colorspace.hpp"
#include "iretinex/degrade.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/model.hpp"
#include "iretinex/training.hpp"

namespace iretinex {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Images

/// Nearest 8-bit level with ties rounded up (0.5 → 128).
inline std::uint8_t quantize(float v) {
  const double x = std::isfinite(v) ? std::clamp(double(v), 0.0, 1.0) : 0.0;
  return std::uint8_t(std::floor(x * 255.0 + 0.5));
}

namespace detail {

inline std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e;
}

inline std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageRGB from_bytes(std::size_t h, std::size_t w, const std::uint8_t* px, std::size_t stride_px) {
  std::vector<float> v(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) v[i * 3 + c] = float(px[i * stride_px + c]) / 255.0f;
  return ImageRGB(h, w, std::move(v));
}

inline std::vector<std::uint8_t> to_bytes(const ImageRGB& img) {
  std::vector<std::uint8_t> out(img.size());
  auto p = img.pixels();
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = quantize(p[i]);
  return out;
}

}  // namespace detail

/// Binary PPM (P6) with maxval 255.
inline ImageRGB load_ppm(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) { return FormatError("'" + path.string() + "': " + why); };
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw fail("truncated header");
    return std::string(bytes.begin() + long(start), bytes.begin() + long(pos));
  };
  auto number = [&]() {
    const std::string t = token();
    std::size_t v = 0;
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || end != t.data() + t.size()) throw fail("bad header field '" + t + "'");
    return v;
  };
  if (token() != "P6") throw fail("not a binary PPM (P6)");
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0) throw fail("empty image");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (only 8-bit)");
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos || bytes.size() - pos < w * h * 3) throw fail("truncated pixel data");
  return detail::from_bytes(h, w, reinterpret_cast<const std::uint8_t*>(bytes.data() + pos), 3);
}

inline void save_ppm(const ImageRGB& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
  const auto px = detail::to_bytes(img);
  out.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

/// 8-bit RGB or RGBA PNG; alpha is ignored.
inline ImageRGB load_png(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  auto fail = [&](const std::string& why) {
    const std::string msg = "'" + path.string() + "': " + why;
    png_image_free(&image);
    return FormatError(msg);
  };
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw fail(std::string("not a readable PNG (") + image.message + ")");
  if (image.format & PNG_FORMAT_FLAG_LINEAR) throw fail("unsupported bit depth 16 (only 8-bit RGB/RGBA)");
  if (image.format & PNG_FORMAT_FLAG_COLORMAP) throw fail("unsupported palette PNG (only 8-bit RGB/RGBA)");
  if (!(image.format & PNG_FORMAT_FLAG_COLOR)) throw fail("unsupported grayscale PNG (only 8-bit RGB/RGBA)");
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr))
    throw fail(std::string("corrupt or truncated PNG (") + image.message + ")");
  return detail::from_bytes(image.height, image.width, px.data(), 4);
}

inline void save_png(const ImageRGB& img, const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width());
  image.height = png_uint_32(img.height());
  image.format = PNG_FORMAT_RGB;
  const auto px = detail::to_bytes(img);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("cannot write '" + path.string() + "': " + msg);
  }
}

inline bool is_image_path(const fs::path& p) {
  const auto e = detail::lower_ext(p);
  return e == ".png" || e == ".ppm";
}

/// Dispatches on the extension (.png or .ppm).
inline ImageRGB load_image(const fs::path& path) {
  if (!fs::exists(path)) throw FormatError("'" + path.string() + "': no such file");
  const auto e = detail::lower_ext(path);
  if (e == ".png") return load_png(path);
  if (e == ".ppm") return load_ppm(path);
  throw FormatError("'" + path.string() + "': unsupported extension (use .png or .ppm)");
}

inline void save_image(const ImageRGB& img, const fs::path& path) {
  const auto e = detail::lower_ext(path);
  if (e == ".png") return save_png(img, path);
  if (e == ".ppm") return save_ppm(img, path);
  throw FormatError("'" + path.string() + "': unsupported extension (use .png or .ppm)");
}

/// Image files of a directory in name order.
inline std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_path(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Text header, one field per line, then a little-endian float32 blob:
//
//   iretinex-checkpoint 1
//   channels 16 / levels 2 / ses_scale 2 / icrr_width 16 / rcm_units 1
//   seed 0
//   iteration 2000
//   params <count>
//   param <name> <offset> <d0>x<d1>x...
//   end

inline constexpr int kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelParams<T> model;
  std::size_t iteration = 0;
};

namespace detail {

inline std::string dims_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline void put_f32(std::string& out, float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(char((u >> (8 * b)) & 0xffu));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= std::uint32_t(p[b]) << (8 * b);
  return std::bit_cast<float>(u);
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const ModelParams<T>& model, std::size_t iteration) {
  const auto params = model.parameters();
  const ArchConfig& a = model.arch;
  std::ostringstream head;
  head << "iretinex-checkpoint " << kCheckpointVersion << "\n"
       << "channels " << a.channels << "\nlevels " << a.levels << "\nses_scale " << a.ses_scale
       << "\nicrr_width " << a.icrr_width << "\nrcm_units " << a.rcm_units << "\nseed " << a.seed
       << "\niteration " << iteration << "\nparams " << params.size() << "\n";
  std::size_t offset = 0;
  for (const auto& p : params) {
    head << "param " << p.name << ' ' << offset << ' ' << detail::dims_str(p.tensor.shape()) << "\n";
    offset += 4 * p.tensor.size();
  }
  head << "end\n";
  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& p : params)
    for (T v : p.tensor.data()) detail::put_f32(out, float(v));
  return out;
}

template <typename T>
void save_checkpoint(const ModelParams<T>& model, std::size_t iteration, const fs::path& path) {
  const std::string bytes = serialize_checkpoint(model, iteration);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);  // a crash mid-write never clobbers the previous checkpoint
}

template <typename T>
Checkpoint<T> parse_checkpoint(const std::string& bytes, const std::string& origin) {
  auto fail = [&](const std::string& why) { return FormatError("checkpoint '" + origin + "': " + why); };
  const auto end_pos = bytes.find("\nend\n");
  if (end_pos == std::string::npos) throw fail("missing header terminator");
  std::istringstream head(bytes.substr(0, end_pos + 1));
  std::string magic;
  int version = 0;
  if (!(head >> magic >> version) || magic != "iretinex-checkpoint") throw fail("bad magic");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  ArchConfig arch;
  std::size_t iteration = 0, count = 0;
  auto field = [&](const char* key, auto& dst) {
    std::string k;
    if (!(head >> k >> dst) || k != key) throw fail(std::string("expected field '") + key + "'");
  };
  field("channels", arch.channels);
  field("levels", arch.levels);
  field("ses_scale", arch.ses_scale);
  field("icrr_width", arch.icrr_width);
  field("rcm_units", arch.rcm_units);
  field("seed", arch.seed);
  field("iteration", iteration);
  field("params", count);
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    throw fail(e.what());
  }

  Checkpoint<T> ck{ModelParams<T>::make(arch), iteration};
  auto params = ck.model.parameters();
  if (count != params.size())
    throw fail("manifest lists " + std::to_string(count) + " parameters, architecture has " +
               std::to_string(params.size()));
  const std::size_t blob_start = end_pos + 5;
  const std::size_t blob_size = bytes.size() - blob_start;
  std::size_t expected = 0;
  for (auto& p : params) {
    std::string tag, name, dims;
    std::size_t offset = 0;
    if (!(head >> tag >> name >> offset >> dims) || tag != "param") throw fail("malformed manifest entry");
    if (name != p.name) throw fail("expected parameter '" + p.name + "', found '" + name + "'");
    if (dims != detail::dims_str(p.tensor.shape()))
      throw fail("parameter '" + name + "' has shape " + dims + ", expected " + detail::dims_str(p.tensor.shape()));
    if (offset != expected) throw fail("parameter '" + name + "' at offset " + std::to_string(offset));
    expected += 4 * p.tensor.size();
    if (expected > blob_size) throw fail("truncated blob");
    const auto* src = reinterpret_cast<const unsigned char*>(bytes.data() + blob_start + offset);
    auto dst = p.tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(detail::get_f32(src + 4 * i));
  }
  if (expected != blob_size)
    throw fail("blob holds " + std::to_string(blob_size) + " bytes, manifest needs " + std::to_string(expected));
  return ck;
}

template <typename T = float>
Checkpoint<T> load_checkpoint(const fs::path& path) {
  const auto raw = detail::read_file(path);
  return parse_checkpoint<T>(std::string(raw.begin(), raw.end()), path.string());
}

// ---------------------------------------------------------------------------
// Run configuration
//
// Flat "key = value" lines; '#' starts a comment. Unknown keys are errors.

struct RunConfig {
  TrainConfig train;
  DegradeConfig degrade;
  ArchConfig arch;
  std::string train_dir;           // optional directory of clean PNG/PPM images
  std::size_t textures = 8;        // bundled textures used when train_dir is empty
  std::size_t texture_size = 64;
  std::uint64_t texture_seed = 0;
  std::string trace;               // CSV loss trace path; empty puts it next to the checkpoint

  void validate() const {
    train.validate();
    degrade.validate();
    arch.validate();
    if (train_dir.empty() && textures == 0) throw ConfigError("config: textures must be >= 1");
  }
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

namespace detail {

template <typename V>
void parse_value(const std::string& key, const std::string& text, V& dst) {
  auto bad = [&] { return ConfigError("config key '" + key + "': cannot parse '" + text + "'"); };
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1" || text == "on") dst = true;
    else if (text == "false" || text == "0" || text == "off") dst = false;
    else throw bad();
  } else if constexpr (std::is_same_v<V, std::string>) {
    dst = text;
  } else {
    V v{};
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size()) throw bad();
    dst = v;
  }
}

}  // namespace detail

/// Every accepted key with its default, in documentation order.
inline std::vector<std::pair<std::string, std::string>> config_keys() {
  RunConfig d;
  auto num = [](auto v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  return {{"lr_max", num(d.train.lr_max)},
          {"lr_min", num(d.train.lr_min)},
          {"total_iters", num(d.train.total_iters)},
          {"batch", num(d.train.batch)},
          {"beta1", num(d.train.beta1)},
          {"beta2", num(d.train.beta2)},
          {"adam_eps", num(d.train.adam_eps)},
          {"seed", num(d.train.seed)},
          {"patch", num(d.train.patch)},
          {"augment_rotate", flag(d.train.augment_rotate)},
          {"augment_flip", flag(d.train.augment_flip)},
          {"checkpoint_every", num(d.train.checkpoint_every)},
          {"alpha_min", num(d.degrade.alpha_min)},
          {"alpha_max", num(d.degrade.alpha_max)},
          {"gamma_min", num(d.degrade.gamma_min)},
          {"gamma_max", num(d.degrade.gamma_max)},
          {"sigma_min", num(d.degrade.sigma_min)},
          {"sigma_max", num(d.degrade.sigma_max)},
          {"poisson", flag(d.degrade.poisson)},
          {"poisson_scale", num(d.degrade.poisson_scale)},
          {"degrade_seed", num(d.degrade.seed)},
          {"channels", num(d.arch.channels)},
          {"levels", num(d.arch.levels)},
          {"ses_scale", num(d.arch.ses_scale)},
          {"icrr_width", num(d.arch.icrr_width)},
          {"rcm_units", num(d.arch.rcm_units)},
          {"init_seed", num(d.arch.seed)},
          {"train_dir", d.train_dir},
          {"textures", num(d.textures)},
          {"texture_size", num(d.texture_size)},
          {"texture_seed", num(d.texture_seed)},
          {"trace", d.trace}};
}

/// Applies one key; throws ConfigError on unknown keys and unparsable values.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_value;
  // clang-format off
  if (key == "lr_max") parse_value(key, value, c.train.lr_max);
  else if (key == "lr_min") parse_value(key, value, c.train.lr_min);
  else if (key == "total_iters") parse_value(key, value, c.train.total_iters);
  else if (key == "batch") parse_value(key, value, c.train.batch);
  else if (key == "beta1") parse_value(key, value, c.train.beta1);
  else if (key == "beta2") parse_value(key, value, c.train.beta2);
  else if (key == "adam_eps") parse_value(key, value, c.train.adam_eps);
  else if (key == "seed") parse_value(key, value, c.train.seed);
  else if (key == "patch") parse_value(key, value, c.train.patch);
  else if (key == "augment_rotate") parse_value(key, value, c.train.augment_rotate);
  else if (key == "augment_flip") parse_value(key, value, c.train.augment_flip);
  else if (key == "checkpoint_every") parse_value(key, value, c.train.checkpoint_every);
  else if (key == "alpha_min") parse_value(key, value, c.degrade.alpha_min);
  else if (key == "alpha_max") parse_value(key, value, c.degrade.alpha_max);
  else if (key == "gamma_min") parse_value(key, value, c.degrade.gamma_min);
  else if (key == "gamma_max") parse_value(key, value, c.degrade.gamma_max);
  else if (key == "sigma_min") parse_value(key, value, c.degrade.sigma_min);
  else if (key == "sigma_max") parse_value(key, value, c.degrade.sigma_max);
  else if (key == "poisson") parse_value(key, value, c.degrade.poisson);
  else if (key == "poisson_scale") parse_value(key, value, c.degrade.poisson_scale);
  else if (key == "degrade_seed") parse_value(key, value, c.degrade.seed);
  else if (key == "channels") parse_value(key, value, c.arch.channels);
  else if (key == "levels") parse_value(key, value, c.arch.levels);
  else if (key == "ses_scale") parse_value(key, value, c.arch.ses_scale);
  else if (key == "icrr_width") parse_value(key, value, c.arch.icrr_width);
  else if (key == "rcm_units") parse_value(key, value, c.arch.rcm_units);
  else if (key == "init_seed") parse_value(key, value, c.arch.seed);
  else if (key == "train_dir") parse_value(key, value, c.train_dir);
  else if (key == "textures") parse_value(key, value, c.textures);
  else if (key == "texture_size") parse_value(key, value, c.texture_size);
  else if (key == "texture_seed") parse_value(key, value, c.texture_seed);
  else if (key == "trace") parse_value(key, value, c.trace);
  else throw ConfigError("unknown config key '" + key + "'");
  // clang-format on
}

inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>") {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  const auto raw = detail::read_file(path);
  return parse_run_config(std::string(raw.begin(), raw.end()), path.string());
}

// ---------------------------------------------------------------------------
// Loss trace

/// CSV with header "iter,lr,loss"; values printed with round-trip precision.
inline std::string trace_csv(const std::vector<TraceEntry>& trace) {
  std::string out = "iter,lr,loss\n";
  char buf[64];
  for (const auto& e : trace) {
    out += std::to_string(e.iter);
    for (double v : {e.lr, e.loss}) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out += ',';
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace iretinex
