#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fse/checkpoint.hpp"
#include "fse/config.hpp"
#include "fse/shadow_synth.hpp"
#include "fse/train.hpp"

namespace fse {

namespace cli {

struct SynthArgs {
  std::string clean_dir;
  int count = 1;
  std::uint64_t seed = 0;
  std::string out_dir;
};

inline std::string histogram_line(const std::vector<int>& bins, double lo, double hi) {
  std::ostringstream os;
  os.precision(3);
  double width = (hi - lo) / double(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i)
    os << "[" << lo + width * double(i) << "," << lo + width * double(i + 1) << "): " << bins[i] << "  ";
  return os.str();
}

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  FSE_CHECK(a.count > 0, ConfigError, "count must be positive");
  FSE_CHECK(std::filesystem::exists(a.clean_dir), ConfigError, "clean dir does not exist: " + a.clean_dir);
  auto cleans = detail::scan_images(a.clean_dir);
  FSE_CHECK(!cleans.empty(), ConfigError, "clean dir holds no images: " + a.clean_dir);

  namespace fs = std::filesystem;
  for (const char* sub : {"shadow", "target", "mask", "spec"}) fs::create_directories(fs::path(a.out_dir) / sub);

  std::vector<int> opacity_bins(6, 0), feather_hard(5, 0), feather_soft(5, 0);
  std::int64_t written = 0, image_idx = 0;
  for (const auto& [stem, path] : cleans) {
    Tensor clean = load_image<float>(path);
    FSE_CHECK(clean.size(1) == 3, FormatError, path + ": synthesis needs RGB cleans");
    for (int c = 0; c < a.count; ++c) {
      ShadowSpec spec = sample_spec(derive_seed(a.seed, std::uint64_t(image_idx), std::uint64_t(c)),
                                    clean.size(2), clean.size(3));
      SamplePair pair = synthesize_pair(clean, spec);
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "_s%03d", c);
      std::string id = stem + suffix;
      save_image(pair.shadow, (fs::path(a.out_dir) / "shadow" / (id + ".png")).string());
      save_image(pair.target, (fs::path(a.out_dir) / "target" / (id + ".png")).string());
      save_image(*pair.mask, (fs::path(a.out_dir) / "mask" / (id + ".png")).string());
      std::ofstream sj((fs::path(a.out_dir) / "spec" / (id + ".json")).string());
      sj << nlohmann::json(spec).dump(2) << "\n";

      opacity_bins[std::min<std::size_t>(5, std::size_t((spec.opacity - 0.15) / 0.05))] += 1;
      if (spec.hardness == Hardness::kHard)
        feather_hard[std::min<std::size_t>(4, std::size_t((spec.feather_radius - 5.0) / 2.0))] += 1;
      else
        feather_soft[std::min<std::size_t>(4, std::size_t((spec.feather_radius - 25.0) / 5.0))] += 1;
      ++written;
    }
    ++image_idx;
  }
  out << "pairs written: " << written << "\n";
  out << "opacity histogram: " << histogram_line(opacity_bins, 0.15, 0.45) << "\n";
  out << "feather histogram (hard): " << histogram_line(feather_hard, 5, 15) << "\n";
  out << "feather histogram (soft): " << histogram_line(feather_soft, 25, 50) << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::optional<std::string> resume;
  std::optional<std::string> out_override;
  std::optional<std::uint64_t> seed_override;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config_path);
  if (a.out_override) rc.out_dir = *a.out_override;
  if (a.seed_override) rc.train.seed = *a.seed_override;
  FSE_CHECK(!rc.data_root.empty(), ConfigError, "config: data.root is required for training");

  auto dataset = load_paired_dataset<float>(rc.data_root, rc.manifest);
  FSE_CHECK(!dataset.empty(), ConfigError, "training dataset is empty: " + rc.data_root);

  TrainOptions opts;
  opts.out_dir = rc.out_dir;
  CheckpointBundle resume_bundle;
  if (a.resume) {
    resume_bundle = load_checkpoint(*a.resume);
    // the config snapshot travels with the checkpoint
    rc.model = resume_bundle.model_config;
    rc.train = resume_bundle.train_config;
    opts.resume = &resume_bundle;
  }

  TrainResult res = train(dataset, rc.model, rc.train, opts);
  out << "trained to step " << res.checkpoint.step << " on " << dataset.size() << " pairs\n";
  if (!res.history.empty()) {
    out << "final loss: " << res.history.back().total << "\n";
  }
  out << "checkpoint: " << rc.out_dir << "/checkpoint_final.fseckpt\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_root;
  std::optional<std::string> manifest;
  std::int64_t resolution = 256;
  std::string out_dir;
  std::string perceptual_backend = "fallback";
  bool save_images = false;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);
  auto dataset = load_paired_dataset<float>(a.data_root, a.manifest);
  FSE_CHECK(!dataset.empty(), ConfigError, "evaluation dataset is empty: " + a.data_root);

  std::optional<std::string> dump;
  if (a.save_images) dump = a.out_dir + "/images";
  MetricReport report = evaluate(ckpt, dataset, a.resolution, a.perceptual_backend, dump);

  std::filesystem::create_directories(a.out_dir);
  std::ofstream rf(a.out_dir + "/metrics.txt");
  FSE_CHECK(rf.good(), IoError, "cannot write report under " + a.out_dir);
  rf << report.to_kv();
  out << report.to_kv();
  if (report.lpips_proxy)
    out << "note: perceptual distance is a proxy (random-feature backend), not comparable to published LPIPS\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string out_dir;
  std::optional<std::string> mask_path;
  bool save_mask = false;
};

inline int cmd_infer(const InferArgs& a, std::ostream& out) {
  CheckpointBundle ckpt = load_checkpoint(a.checkpoint);
  FSE_CHECK(!a.inputs.empty(), ConfigError, "no input images given");
  FSE_CHECK(!a.mask_path || a.inputs.size() == 1, ConfigError,
            "--mask applies to a single input image");
  std::filesystem::create_directories(a.out_dir);

  NoGradGuard ng;
  auto params = make_param_vars(ckpt.params, false);
  for (const auto& input : a.inputs) {
    Tensor img = load_image<float>(input);
    FSE_CHECK(img.size(1) == 3, FormatError, input + ": inference needs an RGB image");
    Tensor mask({1, 1, img.size(2), img.size(3)});
    if (a.mask_path) {
      Tensor m = load_image<float>(*a.mask_path);
      if (m.size(1) == 3) m = rgb_to_luminance(m);
      FSE_CHECK(m.size(2) == img.size(2) && m.size(3) == img.size(3), ShapeError,
                *a.mask_path + ": mask size does not match " + input);
      mask = std::move(m);
    }
    auto outs = fse_forward(params, make_leaf(img), make_leaf(mask), ckpt.train_config.ablation,
                            ckpt.model_config);
    std::string stem = std::filesystem::path(input).stem().string();
    std::string out_path = a.out_dir + "/" + stem + ".png";
    save_image(clamp01(outs.restored->value), out_path);
    if (a.save_mask) save_image(clamp01(outs.refined_mask->value), a.out_dir + "/" + stem + "_mask.png");
    out << input << " -> " << out_path << "\n";
  }
  return 0;
}

inline int cmd_report(const std::vector<std::string>& files, std::ostream& out) {
  FSE_CHECK(!files.empty(), ConfigError, "no report files given");
  std::vector<std::pair<std::string, MetricReport>> rows;
  std::size_t name_w = 6;
  for (const auto& f : files) {
    rows.emplace_back(std::filesystem::path(f).parent_path().filename().string() + "/" +
                          std::filesystem::path(f).filename().string(),
                      MetricReport::load(f));
    name_w = std::max(name_w, rows.back().first.size());
  }
  bool any_proxy = false;
  out << std::left << std::setw(int(name_w + 2)) << "source"
      << std::right << std::setw(10) << "PSNR" << std::setw(10) << "SSIM" << std::setw(10) << "MSE"
      << std::setw(10) << "LPIPS" << std::setw(4) << "" << std::setw(10) << "samples" << "\n";
  for (const auto& [name, r] : rows) {
    any_proxy = any_proxy || r.lpips_proxy;
    out << std::left << std::setw(int(name_w + 2)) << name << std::right << std::fixed
        << std::setprecision(2) << std::setw(10) << r.psnr_db << std::setprecision(4) << std::setw(10)
        << r.ssim << std::setw(10) << r.mse << std::setw(10) << r.lpips
        << std::setw(4) << (r.lpips_proxy ? "*" : "") << std::setw(10) << r.n_samples << "\n";
  }
  out.unsetf(std::ios::fixed);
  if (any_proxy) out << "* proxy perceptual backend (random features), not comparable to published LPIPS\n";
  return 0;
}

}  // namespace cli

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 2 usage/validation, 3 runtime numerical failure.
inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Face Shadow Eraser: synthesis, training, evaluation and inference"};
  app.require_subcommand(1);

  cli::SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "synthesize a paired shadow dataset from clean images");
  synth->add_option("--clean-dir", sa.clean_dir, "directory of shadow-free images")->required();
  synth->add_option("--count", sa.count, "shadow variants per clean image")->required();
  synth->add_option("--seed", sa.seed, "base seed");
  synth->add_option("--out", sa.out_dir, "output dataset root")->required();

  cli::TrainArgs ta;
  std::string ta_out;
  std::int64_t ta_seed = -1;
  auto* tr = app.add_subcommand("train", "train the three-stage pipeline");
  tr->add_option("--config", ta.config_path, "run config (JSON)")->required();
  std::string ta_resume;
  tr->add_option("--resume", ta_resume, "checkpoint to resume from");
  tr->add_option("--out", ta_out, "output directory override");
  tr->add_option("--seed", ta_seed, "seed override");

  cli::EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a paired dataset");
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  ev->add_option("--data", ea.data_root, "paired dataset root")->required();
  std::string ea_manifest;
  ev->add_option("--manifest", ea_manifest, "restrict ids to this manifest");
  ev->add_option("--resolution", ea.resolution, "inference resolution (square)");
  ev->add_option("--out", ea.out_dir, "report output directory");
  ev->add_option("--perceptual-backend", ea.perceptual_backend, "perceptual backend: fallback|<path>");
  ev->add_flag("--save-images", ea.save_images, "also write restored images");

  cli::InferArgs ia;
  auto* in = app.add_subcommand("infer", "remove shadows from images");
  in->add_option("--checkpoint", ia.checkpoint, "checkpoint file")->required();
  in->add_option("input", ia.inputs, "input image(s)")->required();
  in->add_option("--out", ia.out_dir, "output directory")->required();
  std::string ia_mask;
  in->add_option("--mask", ia_mask, "initial shadow mask (single input only)");
  in->add_flag("--save-mask", ia.save_mask, "also write the refined mask M'");

  std::vector<std::string> report_files;
  auto* rp = app.add_subcommand("report", "render metric reports as a comparison table");
  rp->add_option("files", report_files, "metric report files")->required();

  std::vector<const char*> argv;
  argv.push_back("fse");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cli::cmd_synth(sa, out);
    if (tr->parsed()) {
      if (!ta_resume.empty()) ta.resume = ta_resume;
      if (!ta_out.empty()) ta.out_override = ta_out;
      if (ta_seed >= 0) ta.seed_override = std::uint64_t(ta_seed);
      return cli::cmd_train(ta, out);
    }
    if (ev->parsed()) {
      if (!ea_manifest.empty()) ea.manifest = ea_manifest;
      if (ea.out_dir.empty()) ea.out_dir = RunConfig::default_out_root() + "/eval";
      return cli::cmd_eval(ea, out);
    }
    if (in->parsed()) {
      if (!ia_mask.empty()) ia.mask_path = ia_mask;
      return cli::cmd_infer(ia, out);
    }
    if (rp->parsed()) return cli::cmd_report(report_files, out);
  } catch (const NumericError& e) {
    err << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 2;
  }
  err << "usage error: no subcommand\n";
  return 2;
}

}  // namespace fse
