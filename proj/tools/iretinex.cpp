// iretinex command-line tool: train, enhance, decompose, metrics, audit,
// synth-data, gradcheck. Exit codes: 0 success, 1 runtime failure, 2 bad flags.

#include <charconv>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "iretinex/dataset.hpp"
#include "iretinex/degrade.hpp"
#include "iretinex/fpenv.hpp"
#include "iretinex/gradsuite.hpp"
#include "iretinex/io.hpp"
#include "iretinex/metrics.hpp"
#include "iretinex/model.hpp"
#include "iretinex/training.hpp"

namespace {

using namespace iretinex;

/// Shortest round-trip form; integral values keep a trailing ".0".
std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::vector<fs::path> inputs_of(const fs::path& in) {
  if (fs::is_directory(in)) return list_images(in);
  return {in};
}

ImageRGB gray_image(const Tensor<float>& map) {
  ImageRGB img(map.dim(0), map.dim(1));
  auto v = map.data();
  auto p = img.pixels();
  for (std::size_t i = 0; i < v.size(); ++i) p[3 * i] = p[3 * i + 1] = p[3 * i + 2] = std::clamp(v[i], 0.0f, 1.0f);
  return img;
}

std::vector<ImagePair> training_pairs(const RunConfig& cfg) {
  std::vector<ImageRGB> clean;
  if (!cfg.train_dir.empty()) {
    for (const auto& p : list_images(cfg.train_dir)) clean.push_back(load_image(p));
    if (clean.empty()) throw ConfigError("train_dir '" + cfg.train_dir + "' holds no .png/.ppm images");
  } else {
    clean = bundled_textures(cfg.textures, cfg.texture_size, cfg.texture_seed);
  }
  return make_pairs(clean, cfg.degrade);
}

int cmd_train(const std::string& config_path, const std::string& out, bool quiet) {
  const RunConfig cfg = load_run_config(config_path);
  const auto pairs = training_pairs(cfg);
  auto model = ModelParams<float>::make(cfg.arch);
  const fs::path ckpt(out);
  const fs::path trace_path = cfg.trace.empty() ? fs::path(out + ".trace.csv") : fs::path(cfg.trace);

  std::vector<TraceEntry> trace;
  TrainCallbacks<float> cb;
  cb.on_iteration = [&](const TraceEntry& e) {
    trace.push_back(e);
    if (!quiet && (e.iter % 100 == 0 || e.iter + 1 == cfg.train.total_iters))
      std::cerr << "iter " << e.iter << " lr " << e.lr << " loss " << e.loss << "\n";
  };
  cb.on_checkpoint = [&](std::size_t iteration, const ModelParams<float>& m) { save_checkpoint(m, iteration, ckpt); };
  try {
    train(model, pairs, cfg.train, cb);
  } catch (const TrainingDiverged&) {
    write_text(trace_path, trace_csv(trace));
    throw;
  }
  write_text(trace_path, trace_csv(trace));
  nlohmann::json report = {{"iterations", trace.size()},
                           {"final_loss", json_number(trace.back().loss)},
                           {"checkpoint", ckpt.string()},
                           {"trace", trace_path.string()},
                           {"pairs", pairs.size()}};
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_enhance(const std::string& ckpt_path, const std::string& in, const std::string& out) {
  const auto ck = load_checkpoint<float>(ckpt_path);
  const auto files = inputs_of(in);
  fs::create_directories(out);
  nlohmann::json written = nlohmann::json::array();
  for (const auto& f : files) {
    const ImageRGB low = load_image(f);
    const fs::path dst = fs::path(out) / f.filename();
    save_image(enhance(low, ck.model), dst);
    written.push_back(dst.string());
  }
  std::cout << nlohmann::json{{"count", files.size()}, {"written", written}}.dump() << "\n";
  return 0;
}

int cmd_decompose(const std::string& ckpt_path, const std::string& in, const std::string& out) {
  const auto ck = load_checkpoint<float>(ckpt_path);
  fs::create_directories(out);
  nlohmann::json report = nlohmann::json::array();
  for (const auto& f : inputs_of(in)) {
    const ImageRGB low = load_image(f);
    ck.model.arch.check_extent(low.height(), low.width());
    NoTapeScope<float> no_tape;
    const auto d = decompose(low.to_tensor<float>(), ck.model.icrr);
    const auto cos = cosine_similarity(d.illum_features, d.reflect_features);
    const std::string stem = f.stem().string();
    const fs::path illum = fs::path(out) / (stem + "_illumination.png");
    const fs::path reflect = fs::path(out) / (stem + "_reflectance.png");
    save_image(gray_image(d.illum_map), illum);
    save_image(ImageRGB::from_tensor(d.reflect_img), reflect);
    report.push_back({{"input", f.string()},
                      {"illumination", illum.string()},
                      {"reflectance", reflect.string()},
                      {"cosine_similarity", cos.value},
                      {"degenerate", cos.degenerate}});
  }
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path, const std::string& out, bool json) {
  const ImageRGB a = load_image(a_path), b = load_image(b_path);
  const MetricsReport r = compare_images(a, b);
  if (!out.empty()) {
    fs::create_directories(out);
    std::string csv = "bin,a_r,a_g,a_b,b_r,b_g,b_b\n";
    for (std::size_t i = 0; i < 256; ++i) {
      csv += std::to_string(i);
      for (const auto* h : {&r.hist_a, &r.hist_b})
        for (std::size_t c = 0; c < 3; ++c) csv += "," + std::to_string((*h)[c][i]);
      csv += "\n";
    }
    write_text(fs::path(out) / "histogram.csv", csv);
    save_image(heatmap(error_map(a, b)), fs::path(out) / "error_map.png");
  }
  if (json) {
    std::cout << to_json(r).dump() << "\n";
  } else {
    std::cout << "psnr=" << num(r.psnr) << " ssim=" << num(r.ssim) << " mae=" << num(r.mean_abs_error) << "\n";
  }
  return 0;
}

int cmd_audit(std::uint64_t H, std::uint64_t W, std::uint64_t C, std::uint64_t s, bool live, bool json) {
  const FlopAudit a = flop_audit(H, W, C, s);
  if (json) {
    auto j = to_json(a);
    if (live) {
      j["mres_live"] = mres_live_flops(H, W, C, s);
      j["gmsa_live"] = gmsa_live_flops(H, W, C);
    }
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "mres=" << a.mres_flops << " gmsa=" << a.gmsa_flops << " ratio=" << num(a.ratio);
    if (live) std::cout << " mres_live=" << mres_live_flops(H, W, C, s) << " gmsa_live=" << gmsa_live_flops(H, W, C);
    std::cout << "\n";
  }
  if (live && mres_live_flops(H, W, C, s) != a.mres_flops) {
    std::cerr << "error: live mres counter disagrees with the closed form\n";
    return 1;
  }
  return 0;
}

int cmd_synth(const std::string& in, const std::string& out, double gamma, double alpha, double sigma,
              bool poisson, double poisson_scale, std::uint64_t seed, std::size_t count, std::size_t size) {
  const DegradeDraw draw{alpha, gamma, sigma};
  DegradeConfig check;
  check.alpha_min = check.alpha_max = alpha;
  check.gamma_min = check.gamma_max = gamma;
  check.sigma_min = check.sigma_max = sigma;
  check.poisson = poisson;
  check.poisson_scale = poisson_scale;
  check.validate();

  std::vector<std::pair<std::string, ImageRGB>> clean;
  fs::path low_dir = out;
  if (in.empty()) {
    const auto tex = bundled_textures(count, size, seed);
    char name[64];
    for (std::size_t i = 0; i < tex.size(); ++i) {
      std::snprintf(name, sizeof name, "texture_%02zu_%s.png", i, texture_family_name(i));
      clean.emplace_back(name, tex[i]);
    }
    fs::create_directories(fs::path(out) / "clean");
    for (const auto& [n, img] : clean) save_image(img, fs::path(out) / "clean" / n);
    low_dir = fs::path(out) / "low";
  } else {
    for (const auto& f : inputs_of(in)) clean.emplace_back(f.filename().string(), load_image(f));
  }
  fs::create_directories(low_dir);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng rng(mix_seed(seed, 0xde9u, i));
    save_image(apply_degradation(clean[i].second, draw, poisson, poisson_scale, rng), low_dir / clean[i].first);
  }
  std::cout << nlohmann::json{{"count", clean.size()}, {"out", low_dir.string()}}.dump() << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  constexpr double tolerance = 1e-4;
  const auto results = run_gradient_suite(module, seed);
  if (results.empty()) throw ConfigError("no gradient cases for module '" + module + "'");
  bool ok = true;
  double total = 0.0;
  for (const auto& r : results) {
    const bool pass = r.check.max_relative_error < tolerance;
    ok = ok && pass;
    total += r.seconds;
    std::cout << r.module << " " << r.name << " max_rel=" << r.check.max_relative_error
              << " probes=" << r.check.probes << " " << (pass ? "ok" : "FAIL") << "\n";
  }
  std::cout << "cases=" << results.size() << " seconds=" << total << " " << (ok ? "ok" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  iretinex::flush_denormals();
  iretinex::tune_allocator();

  CLI::App app{"Retinex low-light enhancement: training, inference and diagnostics"};
  app.require_subcommand(1);

  std::string config, out, ckpt, in, a_path, b_path, module;
  bool quiet = false, json = false, live = false, poisson = false;
  std::uint64_t H = 0, W = 0, C = 0, s = 0, seed = 0;
  double gamma = 1.5, alpha = 1.0, sigma = 0.0, poisson_scale = 400.0;
  std::size_t count = 16, size = 64;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config, "flat key = value config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "checkpoint path")->required();
  train->add_flag("--quiet", quiet, "no progress on stderr");

  auto* enh = app.add_subcommand("enhance", "enhance an image or every image of a directory");
  enh->add_option("--ckpt", ckpt, "checkpoint")->required();
  enh->add_option("--in", in, "image or directory")->required();
  enh->add_option("--out", out, "output directory")->required();

  auto* dec = app.add_subcommand("decompose", "write illumination and reflectance maps");
  dec->add_option("--ckpt", ckpt, "checkpoint")->required();
  dec->add_option("--in", in, "image or directory")->required();
  dec->add_option("--out", out, "output directory")->required();

  auto* met = app.add_subcommand("metrics", "compare two images");
  met->add_option("--a", a_path, "first image")->required();
  met->add_option("--b", b_path, "second image")->required();
  met->add_option("--out", out, "directory for histogram.csv and error_map.png");
  met->add_flag("--json", json, "full JSON report with histograms");

  auto* aud = app.add_subcommand("audit", "attention FLOP counts");
  aud->add_option("--H", H, "height")->required();
  aud->add_option("--W", W, "width")->required();
  aud->add_option("--C", C, "channels")->required();
  aud->add_option("--s", s, "SES upsampling factor")->required();
  aud->add_flag("--live", live, "also run instrumented attention calls");
  aud->add_flag("--json", json, "JSON output");

  auto* syn = app.add_subcommand("synth-data", "degrade clean images into low-light ones");
  syn->add_option("--in", in, "clean image or directory; bundled textures when omitted");
  syn->add_option("--out", out, "output directory")->required();
  syn->add_option("--gamma", gamma, "power-law exponent");
  syn->add_option("--alpha", alpha, "illumination scale in (0, 1]");
  syn->add_option("--sigma", sigma, "Gaussian noise standard deviation");
  syn->add_option("--seed", seed, "noise and texture seed");
  syn->add_flag("--poisson", poisson, "add signal-dependent shot noise");
  syn->add_option("--poisson-scale", poisson_scale, "photon count at full scale");
  syn->add_option("--count", count, "bundled textures to generate");
  syn->add_option("--size", size, "bundled texture size");

  auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient suite (double precision)");
  grd->add_option("--module", module, "tensor_core, icrr, rcm or losses");
  grd->add_option("--seed", seed, "data seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(config, out, quiet);
    if (*enh) return cmd_enhance(ckpt, in, out);
    if (*dec) return cmd_decompose(ckpt, in, out);
    if (*met) return cmd_metrics(a_path, b_path, out, json);
    if (*aud) return cmd_audit(H, W, C, s, live, json);
    if (*syn) return cmd_synth(in, out, gamma, alpha, sigma, poisson, poisson_scale, seed, count, size);
    if (*grd) return cmd_gradcheck(module, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
