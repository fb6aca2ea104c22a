#include <gtest/gtest.h>
#include <png.h>

#include <cstring>
#include <fstream>
#include <random>

#include "iretinex/io.hpp"

using namespace iretinex;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(IRETINEX_TEST_TMP) / "io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

/// Image with values on the 8-bit grid, so an encode/decode round trip is exact.
ImageRGB grid_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  ImageRGB img(h, w);
  for (float& v : img.pixels()) v = float(u(rng)) / 255.0f;
  return img;
}

void write_png_raw(const fs::path& p, png_uint_32 format, std::size_t w, std::size_t h) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(w);
  image.height = png_uint_32(h);
  image.format = format;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image), 100);
  ASSERT_TRUE(png_image_write_to_file(&image, p.string().c_str(), 0, px.data(), 0, nullptr));
}

}  // namespace

// ---------------------------------------------------------------------------
// Images

TEST(Quantize, RoundsHalfUpAndClamps) {
  EXPECT_EQ(quantize(0.5f), 128);
  EXPECT_EQ(quantize(0.0f), 0);
  EXPECT_EQ(quantize(1.0f), 255);
  EXPECT_EQ(quantize(-3.0f), 0);
  EXPECT_EQ(quantize(7.0f), 255);
  EXPECT_EQ(quantize(NAN), 0);
}

TEST(ImageIo, HalfGraySavesAs128) {
  for (const char* ext : {".png", ".ppm"}) {
    const auto p = scratch(std::string("half") + ext);
    save_image(ImageRGB(2, 3, 0.5f), p);
    const auto back = load_image(p);
    ASSERT_EQ(back.height(), 2u);
    ASSERT_EQ(back.width(), 3u);
    for (float v : back.pixels()) EXPECT_EQ(v, 128.0f / 255.0f) << ext;
  }
}

TEST(ImageIo, RoundTripIsExactOnTheByteGrid) {
  const auto img = grid_image(9, 13, 4);
  for (const char* ext : {".png", ".ppm", ".PNG"}) {
    const auto p = scratch(std::string("rt") + ext);
    save_image(img, p);
    EXPECT_EQ(load_image(p), img) << ext;
  }
}

TEST(ImageIo, HandBuiltP6) {
  std::string bytes = "P6\n# two by two\n2 2\n255\n";
  const unsigned char px[12] = {0, 255, 51, 102, 153, 204, 1, 2, 3, 254, 128, 127};
  bytes.append(reinterpret_cast<const char*>(px), 12);
  const auto p = scratch("hand.ppm");
  dump(p, bytes);
  const auto img = load_image(p);
  ASSERT_EQ(img.height(), 2u);
  ASSERT_EQ(img.width(), 2u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(img.pixels()[i], float(px[i]) / 255.0f);
  EXPECT_EQ(img.at(0, 1, 0), 102.0f / 255.0f);
  EXPECT_EQ(img.at(1, 0, 2), 3.0f / 255.0f);
}

TEST(ImageIo, MalformedInputsAreFormatErrors) {
  EXPECT_THROW(load_image(scratch("does_not_exist.png")), FormatError);
  const auto trunc = scratch("trunc.ppm");
  dump(trunc, std::string("P6\n2 2\n255\n") + std::string(5, '\0'));
  EXPECT_THROW(load_image(trunc), FormatError);
  const auto p3 = scratch("ascii.ppm");
  dump(p3, "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(load_image(p3), FormatError);
  const auto deep = scratch("deep.ppm");
  dump(deep, "P6\n1 1\n65535\n" + std::string(6, '\0'));
  EXPECT_THROW(load_image(deep), FormatError);
  const auto junk = scratch("junk.png");
  dump(junk, "definitely not a png");
  EXPECT_THROW(load_image(junk), FormatError);
  const auto bmp = scratch("img.bmp");
  dump(bmp, "BM");
  EXPECT_THROW(load_image(bmp), FormatError);
  EXPECT_THROW(save_image(ImageRGB(1, 1), scratch("x.jpg")), FormatError);
}

TEST(ImageIo, UnsupportedPngLayoutsAreRejected) {
  const auto gray = scratch("gray.png");
  write_png_raw(gray, PNG_FORMAT_GRAY, 3, 3);
  EXPECT_THROW(load_image(gray), FormatError);
  const auto deep = scratch("deep.png");
  write_png_raw(deep, PNG_FORMAT_LINEAR_RGB, 3, 3);
  EXPECT_THROW(load_image(deep), FormatError);
}

TEST(ImageIo, RgbaDropsAlpha) {
  const auto p = scratch("rgba.png");
  write_png_raw(p, PNG_FORMAT_RGBA, 2, 2);
  const auto img = load_image(p);
  for (float v : img.pixels()) EXPECT_EQ(v, 100.0f / 255.0f);
}

TEST(ImageIo, ListImagesIsSortedAndFiltered) {
  const fs::path dir = scratch("listing");
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const char* n : {"b.png", "a.ppm", "c.PNG"}) save_image(ImageRGB(1, 1), dir / n);
  dump(dir / "notes.txt", "x");
  const auto files = list_images(dir);
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[0].filename(), "a.ppm");
  EXPECT_EQ(files[1].filename(), "b.png");
  EXPECT_EQ(files[2].filename(), "c.PNG");
  EXPECT_THROW(list_images(dir / "notes.txt"), FormatError);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  ArchConfig arch;
  arch.seed = 9;
  auto model = ModelParams<float>::make(arch);
  for (auto& p : model.parameters())
    for (auto& v : p.tensor.data()) v += 0.001f;  // move away from the init
  const auto p1 = scratch("a.ckpt"), p2 = scratch("b.ckpt");
  save_checkpoint(model, 1234, p1);
  const auto ck = load_checkpoint(p1);
  EXPECT_EQ(ck.iteration, 1234u);
  EXPECT_EQ(ck.model.arch.seed, 9u);
  save_checkpoint(ck.model, ck.iteration, p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  EXPECT_FALSE(fs::exists(p1.string() + ".tmp"));
}

TEST(Checkpoint, RestoresEveryParameter) {
  auto model = ModelParams<float>::make(ArchConfig{});
  auto ps = model.parameters();
  ps.begin()->tensor.data()[0] = 3.25f;
  const auto ck = parse_checkpoint<float>(serialize_checkpoint(model, 0), "mem");
  auto a = model.parameters(), b = ck.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  auto ib = b.begin();
  for (const auto& pa : a) {
    EXPECT_EQ(pa.name, ib->name);
    EXPECT_TRUE(std::equal(pa.tensor.data().begin(), pa.tensor.data().end(), ib->tensor.data().begin()));
    ++ib;
  }
  EXPECT_EQ(b.begin()->tensor.data()[0], 3.25f);
}

TEST(Checkpoint, ArchitectureTravelsWithTheWeights) {
  ArchConfig arch;
  arch.channels = 8;
  arch.levels = 1;
  arch.icrr_width = 8;
  const auto ck = parse_checkpoint<float>(serialize_checkpoint(ModelParams<float>::make(arch), 5), "mem");
  EXPECT_EQ(ck.model.arch.channels, 8u);
  EXPECT_EQ(ck.model.arch.levels, 1u);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const std::string good = serialize_checkpoint(ModelParams<float>::make(ArchConfig{}), 0);
  EXPECT_THROW(parse_checkpoint<float>(good.substr(0, good.size() - 1), "short"), FormatError);
  EXPECT_THROW(parse_checkpoint<float>(good + "x", "long"), FormatError);
  EXPECT_THROW(parse_checkpoint<float>("garbage", "junk"), FormatError);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint<float>(bad_magic, "magic"), FormatError);
  auto bad_version = good;
  bad_version.replace(bad_version.find(" 1\n"), 3, " 7\n");
  EXPECT_THROW(parse_checkpoint<float>(bad_version, "version"), FormatError);
  auto bad_channels = good;
  bad_channels.replace(bad_channels.find("channels 16"), 11, "channels 15");
  EXPECT_THROW(parse_checkpoint<float>(bad_channels, "arch"), FormatError);
  EXPECT_THROW(load_checkpoint(scratch("missing.ckpt")), FormatError);
}

// ---------------------------------------------------------------------------
// Run configuration

TEST(RunConfig, DefaultsMatchTheDocumentedKeys) {
  const auto c = parse_run_config("");
  EXPECT_EQ(c.train.lr_max, 2e-4);
  EXPECT_EQ(c.train.lr_min, 1e-6);
  EXPECT_EQ(c.train.total_iters, 2000u);
  EXPECT_EQ(c.train.batch, 4u);
  EXPECT_EQ(c.train.patch, 64u);
  EXPECT_EQ(c.arch.levels, 2u);
  EXPECT_EQ(config_keys().size(), 32u);
  RunConfig applied;
  for (const auto& [k, v] : config_keys())
    if (!v.empty()) {
      EXPECT_NO_THROW(set_config_value(applied, k, v)) << k;
    }
}

TEST(RunConfig, ParsesValuesAndComments) {
  const auto c = parse_run_config(
      "# tiny run\n"
      "total_iters = 30   # short\n"
      "batch=2\n"
      "  lr_max = 1e-3\n"
      "augment_flip = off\n"
      "poisson = false\n"
      "train_dir = /tmp/some dir\n"
      "levels = 1\n");
  EXPECT_EQ(c.train.total_iters, 30u);
  EXPECT_EQ(c.train.batch, 2u);
  EXPECT_EQ(c.train.lr_max, 1e-3);
  EXPECT_FALSE(c.train.augment_flip);
  EXPECT_FALSE(c.degrade.poisson);
  EXPECT_EQ(c.train_dir, "/tmp/some dir");
  EXPECT_EQ(c.arch.levels, 1u);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW(parse_run_config("learning_rate = 1e-3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("batch = 2\nbatch = 3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("batch = two\n"), ConfigError);
  EXPECT_THROW(parse_run_config("batch = -1\n"), ConfigError);
  EXPECT_THROW(parse_run_config("total_iters = 2e3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("poisson = maybe\n"), ConfigError);
  EXPECT_THROW(parse_run_config("just a line\n"), ConfigError);
  EXPECT_THROW(parse_run_config("lr_min = 1\n"), ConfigError);  // above lr_max
  try {
    parse_run_config("batch = 2\n\nnope = 1\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

TEST(RunConfig, LoadsFromFile) {
  const auto p = scratch("run.cfg");
  dump(p, "seed = 11\n");
  EXPECT_EQ(load_run_config(p).train.seed, 11u);
  EXPECT_THROW(load_run_config(scratch("absent.cfg")), FormatError);
}

// ---------------------------------------------------------------------------
// Trace

TEST(Trace, CsvRoundTripsValues) {
  const std::vector<TraceEntry> t{{0, 2e-4, 0.1}, {1, 1.999e-4, 1.0 / 3.0}};
  const auto csv = trace_csv(t);
  EXPECT_EQ(csv.rfind("iter,lr,loss\n0,2e-04,0.1\n1,", 0), 0u) << csv;
  const auto last = csv.substr(csv.rfind(',') + 1);
  EXPECT_EQ(std::stod(last), 1.0 / 3.0);
}
