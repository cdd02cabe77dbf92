// Copyright 2026 The RMLP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rmlp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rmlp/analysis.hpp"
#include "rmlp/checkpoint.hpp"
#include "rmlp/config.hpp"
#include "rmlp/distortion.hpp"
#include "rmlp/error.hpp"
#include "rmlp/io.hpp"
#include "rmlp/rng.hpp"
#include "rmlp/train.hpp"

namespace rmlp {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "RunConfig JSON")->required()->check(CLI::ExistingFile);
  c.seed_opt = sub->add_option("--seed", c.seed, "overrides the config seed");
  sub->add_option("--out", c.out, "output directory")->required();
}

RunConfig load(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (c.seed_opt->count() > 0) cfg.seed = c.seed;
  cfg.dataset.seed = derive_seed(cfg.seed, 0x64617461ULL);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const ojson& doc) { write_text(path, doc.dump(2) + "\n"); }

// CSV writer with shortest round-trip doubles.
class Csv {
 public:
  explicit Csv(const std::vector<std::string>& header) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += '\n';
  }
  Csv& operator<<(double v) { return field(format_double(v)); }
  Csv& operator<<(std::size_t v) { return field(std::to_string(v)); }
  Csv& operator<<(int v) { return field(std::to_string(v)); }
  void end_row() {
    text_ += '\n';
    first_ = true;
  }
  const std::string& str() const { return text_; }

 private:
  Csv& field(const std::string& s) {
    if (!first_) text_ += ',';
    text_ += s;
    first_ = false;
    return *this;
  }
  std::string text_;
  bool first_ = true;
};

ojson map_curve(const std::vector<CurvePoint>& curve) {
  ojson out = ojson::array();
  for (const CurvePoint& p : curve) out.push_back({p.rank_fraction, p.norm});
  return out;
}

ojson histogram_json(const Histogram& h) { return {{"lo", h.lo}, {"hi", h.hi}, {"density", h.density}}; }

// --- subcommands -------------------------------------------------------------

void verify_distortion(const RunConfig& cfg, const fs::path& out) {
  const DistortionConfig& d = cfg.distortion;
  RowMatrix points(static_cast<Eigen::Index>(d.points), static_cast<Eigen::Index>(d.dim));
  Xoshiro256 rng(derive_seed(cfg.seed, 0x706f696eULL));
  for (Eigen::Index i = 0; i < points.size(); ++i) points.data()[i] = rng.gaussian();
  const double bound = amplitude_bound(d.epsilon, d.points, d.out_dim);
  const double lambda = d.lambda ? *d.lambda : d.lambda_fraction * bound;
  const DistortionReport<double> report =
      distortion_experiment(points, d.out_dim, lambda, d.epsilon, d.trials, derive_seed(cfg.seed, 1));

  RowMatrix unit = points.rowwise().normalized();
  CorollaryOptions opts;
  opts.enforce_bound = false;
  const double residual = corollary_check(unit, d.out_dim, lambda, d.epsilon, d.trials, derive_seed(cfg.seed, 2), opts);

  Csv csv({"trial", "i", "j", "norm", "violation"});
  const DifferenceSet<double> eset = difference_set(points);
  for (std::size_t t = 0; t < report.trials; ++t) {
    for (std::size_t k = 0; k < report.pairs_per_trial; ++k) {
      const double norm = report.pair_norms[t * report.pairs_per_trial + k];
      const int bad = norm < 1.0 - d.epsilon || norm > 1.0 + d.epsilon;
      csv << t << eset.pairs[k].first << eset.pairs[k].second << norm << bad;
      csv.end_row();
    }
  }
  ojson doc = {{"points", d.points},
               {"dim", d.dim},
               {"out_dim", d.out_dim},
               {"epsilon", d.epsilon},
               {"amplitude_bound", bound},
               {"lambda", lambda},
               {"within_bound", lambda < bound},
               {"trials", report.trials},
               {"pairs_per_trial", report.pairs_per_trial},
               {"sigma_min", report.sigma_min},
               {"sigma_max", report.sigma_max},
               {"violations", report.violations.size()},
               {"violation_fraction", report.violation_fraction},
               {"residual_violation_probability", residual},
               {"seed", cfg.seed}};
  write_json(out / "report.json", doc);
  write_text(out / "pairs.csv", csv.str());
}

void demo_circle(const RunConfig& cfg, const fs::path& out) {
  const CircleCloud cloud = circle_demo(cfg.circle.points, cfg.circle.lambda, cfg.seed);
  const CircleCloud identity = circle_demo(cfg.circle.points, 0.0, cfg.seed);
  Csv csv({"k", "x_in", "y_in", "x_out", "y_out"});
  for (Eigen::Index k = 0; k < cloud.points_in.rows(); ++k) {
    csv << static_cast<std::size_t>(k) << cloud.points_in(k, 0) << cloud.points_in(k, 1) << cloud.points_out(k, 0)
        << cloud.points_out(k, 1);
    csv.end_row();
  }
  write_text(out / "circle.csv", csv.str());
  write_json(out / "summary.json", {{"points", cfg.circle.points},
                                    {"lambda", cloud.lambda},
                                    {"radial_cv", cloud.radial_cv},
                                    {"radial_cv_identity", identity.radial_cv},
                                    {"seed", cfg.seed}});
}

SyntheticDataset dataset_for(const RunConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(data_dir);
  return gen_synthetic(cfg.dataset);
}

void train_toy(const RunConfig& cfg, const fs::path& out, const std::string& data_dir) {
  TrainState state = init_train_state(cfg.model, cfg.train, cfg.seed);
  if (cfg.train.steps == 0) {
    save_checkpoint(out / "checkpoint", state);
    return;
  }
  const SyntheticDataset data = dataset_for(cfg, data_dir);
  if (data.spec.image_size != cfg.model.image_size) throw ConfigError("dataset image size does not match the model");
  // Last quarter held out for the 1-NN probe.
  const std::size_t n = data.images.size();
  const std::size_t held = n >= 8 ? n / 4 : 0;
  const std::span<const Tensor> pool(data.images.data(), n - held);

  Csv csv({"step", "total", "dino", "ibot", "koleo", "lr"});
  train_run(state, pool, cfg.train.steps, [&](const StepMetrics& m) {
    csv << m.step << m.total << m.dino << m.ibot << m.koleo << m.lr;
    csv.end_row();
  });
  save_checkpoint(out / "checkpoint", state);
  write_text(out / "metrics.csv", csv.str());

  ojson summary = {{"steps", state.step}, {"train_images", n - held}, {"held_out_images", held}};
  if (held > 0) {
    const std::span<const Tensor> query(data.images.data() + (n - held), held);
    const RowMatrix ref = class_embeddings(state.teacher, cfg.model, pool);
    const RowMatrix qry = class_embeddings(state.teacher, cfg.model, query);
    const std::span<const int> labels(data.labels);
    summary["one_nn_accuracy"] = one_nn_accuracy(ref, labels.first(n - held), qry, labels.subspan(n - held));
  }
  write_json(out / "summary.json", summary);
}

void analyze_artifacts(const RunConfig& cfg, const fs::path& out, const std::string& checkpoint,
                       const std::string& data_dir, const std::vector<std::string>& pgms,
                       const std::vector<std::string>& mask_pgms) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Network& net = cfg.analysis.network == "student" ? ck.student : ck.teacher;
  const ViTConfig& mc = ck.model_cfg;
  if (mc.channels != 1) throw ConfigError("analyze-artifacts: only single-channel models are supported");

  std::vector<Tensor> images;
  std::vector<BoolGrid> presence;
  if (!pgms.empty()) {
    if (!mask_pgms.empty() && mask_pgms.size() != pgms.size()) {
      throw ConfigError("analyze-artifacts: --mask must be given once per --image");
    }
    for (const std::string& p : pgms) images.push_back(load_pgm(p));
    for (const std::string& p : mask_pgms) {
      // A mask image is reduced to a patch grid: a patch is present when
      // more than half of its pixels are bright.
      const RowMatrix m = patch_means(load_pgm(p).to_matrix(), mc.patch_size);
      presence.push_back(m.array() > 0.5);
    }
  } else {
    const SyntheticDataset data = dataset_for(cfg, data_dir);
    images = data.images;
    presence = data.masks;
  }
  for (const Tensor& img : images) {
    if (img.shape() != Shape{mc.image_size, mc.image_size}) {
      throw ShapeError("analyze-artifacts: image shape " + shape_string(img.shape()) + " does not match the model");
    }
  }

  const double sigma = cfg.analysis.smoothing_sigma ? *cfg.analysis.smoothing_sigma : mc.patch_size / 4.0;
  std::vector<AttentionMap> first, second;
  std::vector<BoolGrid> splits;
  ojson per_image = ojson::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor tokens = vit_forward(net.backbone, images[i], mc);
    const RowMatrix patches = tokens.to_matrix().bottomRows(static_cast<Eigen::Index>(mc.num_patches()));
    first.push_back(first_order_map(patches));
    second.push_back(second_order_map(patches));
    const PatchSplit split = gmm_patch_split(images[i].to_matrix(), mc.patch_size, sigma, cfg.analysis.em_iters,
                                             derive_seed(cfg.seed, i));
    splits.push_back(split.labels);

    Csv csv({"row", "col", "norm", "pca_norm", "info_label"});
    const std::size_t g = mc.grid();
    for (std::size_t r = 0; r < g; ++r) {
      for (std::size_t c = 0; c < g; ++c) {
        const auto rr = static_cast<Eigen::Index>(r), cc = static_cast<Eigen::Index>(c);
        csv << r << c << first.back().grid(rr, cc) << second.back().grid(rr, cc)
            << static_cast<int>(split.labels(rr, cc));
        csv.end_row();
      }
    }
    char name[32];
    std::snprintf(name, sizeof(name), "image_%04zu.csv", i);
    write_text(out / name, csv.str());

    ojson entry = {{"file", name}};
    if (i < presence.size()) {
      for (const auto& [key, map] : {std::pair{"first_order", &first.back()}, std::pair{"second_order", &second.back()}}) {
        try {
          entry[std::string("top_norm_correlation_") + key] = top_norm_correlation(*map, presence[i]);
        } catch (const DomainError&) {
          entry[std::string("top_norm_correlation_") + key] = nullptr;
        }
      }
    }
    per_image.push_back(entry);
  }

  ojson summary = {{"images", images.size()}, {"network", cfg.analysis.network}, {"smoothing_sigma", sigma}};
  summary["proportion_curve"] = {{"first_order", map_curve(norm_proportion_curve(first))},
                                 {"second_order", map_curve(norm_proportion_curve(second))}};
  for (const auto& [key, maps] : {std::pair{"first_order", &first}, std::pair{"second_order", &second}}) {
    try {
      const SplitDensities sd = split_densities(*maps, splits, cfg.analysis.bins);
      summary["split_densities"][key] = {{"low_mean", sd.low_mean},
                                         {"high_mean", sd.high_mean},
                                         {"low", histogram_json(sd.low)},
                                         {"high", histogram_json(sd.high)}};
    } catch (const DomainError& e) {
      summary["split_densities"][key] = nullptr;
    }
  }
  summary["per_image"] = per_image;
  write_json(out / "summary.json", summary);
}

void gen_synthetic_cmd(const RunConfig& cfg, const fs::path& out) { save_dataset(out, gen_synthetic(cfg.dataset)); }

}  // namespace

int cli(const std::vector<std::string>& args) {
  CLI::App app{"Randomized-head self-supervised ViT toolkit", args.empty() ? "rmlp" : args.front()};
  app.require_subcommand(1);

  Common verify_c, circle_c, train_c, analyze_c, gen_c;
  std::string train_data, analyze_data, analyze_ckpt;
  std::vector<std::string> analyze_images, analyze_masks;

  auto* verify = app.add_subcommand("verify-distortion", "distortion experiment over random point sets");
  add_common(verify, verify_c);
  auto* circle = app.add_subcommand("demo-circle", "unit circle pushed through one randomized layer");
  add_common(circle, circle_c);
  auto* train = app.add_subcommand("train-toy", "train the toy ViT with DINO/iBOT/KoLeo");
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory from gen-synthetic")->check(CLI::ExistingDirectory);
  auto* analyze = app.add_subcommand("analyze-artifacts", "attention maps and information split");
  add_common(analyze, analyze_c);
  analyze->add_option("--checkpoint", analyze_ckpt, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--data", analyze_data, "dataset directory from gen-synthetic")->check(CLI::ExistingDirectory);
  analyze->add_option("--image", analyze_images, "P5 greymap, repeatable")->check(CLI::ExistingFile);
  analyze->add_option("--mask", analyze_masks, "presence mask greymap per --image")->check(CLI::ExistingFile);
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset");
  add_common(gen, gen_c);

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cerr << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    std::cerr << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    auto run = [](const Common& c, auto&& body) {
      const RunConfig cfg = load(c);
      fs::create_directories(c.out);
      body(cfg, fs::path(c.out));
    };
    if (verify->parsed()) run(verify_c, verify_distortion);
    if (circle->parsed()) run(circle_c, demo_circle);
    if (train->parsed()) run(train_c, [&](const RunConfig& cfg, const fs::path& out) { train_toy(cfg, out, train_data); });
    if (analyze->parsed()) {
      run(analyze_c, [&](const RunConfig& cfg, const fs::path& out) {
        analyze_artifacts(cfg, out, analyze_ckpt, analyze_data, analyze_images, analyze_masks);
      });
    }
    if (gen->parsed()) run(gen_c, gen_synthetic_cmd);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    std::cerr << "invalid parameters: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "training failed at step " << e.step() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace rmlp
