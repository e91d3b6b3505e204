// piseg: command-line entry point for synthetic data, training, evaluation
// and diagnostics.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "piseg/config.hpp"
#include "piseg/data.hpp"
#include "piseg/diagnostics.hpp"
#include "piseg/eval.hpp"
#include "piseg/pipeline.hpp"
#include "piseg/plot.hpp"
#include "piseg/runtime.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace piseg;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + " is not valid JSON: " + e.what());
  }
}

// "seen=a,b,unseen=c,d": a token starting with seen= or unseen= opens a group.
DatasetSplit parse_split(const std::string& text) {
  DatasetSplit split;
  std::vector<std::string>* current = nullptr;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.rfind("seen=", 0) == 0) {
      current = &split.seen;
      token = token.substr(5);
    } else if (token.rfind("unseen=", 0) == 0) {
      current = &split.unseen;
      token = token.substr(7);
    }
    if (!current) throw Error("split must start with seen= or unseen=: " + text);
    if (!token.empty()) current->push_back(token);
  }
  return split;
}

// Dotted key path to a nested patch: train.base_lr=0.001.
void add_set_override(json& patch, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("--set expects key.path=value, got " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  json* node = &patch;
  size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

// Train-mode and eval-mode logits must agree when every perturbation is the
// identity. Returns the largest absolute difference over the checked samples.
double forward_parity(const RunConfig& config) {
  const auto manifest = load_manifest(config.train_manifest);
  const auto encoder = make_encoder(config.encoder, config.model.embed_dim, &manifest);
  const auto data = prepare_data(manifest, encoder, config.encoder.prompt_template);
  Rng init = make_rng(config.train.seed, "init");
  const ModelParams params = init_model(config.model, init);
  Rng noise_rng = make_rng(config.train.seed, "parity");
  double worst = 0.0;
  for (size_t i = 0; i < std::min<size_t>(data.size(), 4); ++i) {
    const auto& mask = data.masks[i];
    const NoiseDraw noise = draw_noise(config.model, data.features[i].tensor.rows(), noise_rng);
    const Logits train = forward(config.model, params, data.text, data.features[i], {mask.height, mask.width},
                                 SpmMode::kTrain, &noise);
    const Logits eval = forward(config.model, params, data.text, data.features[i], {mask.height, mask.width},
                                SpmMode::kEval, nullptr);
    worst = std::max(worst, (train.tensor - eval.tensor).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"piseg: perturbation-injected open-vocabulary segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic segmentation dataset");
  SyntheticSpec spec;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--images", spec.num_images, "Training images")->capture_default_str();
  synth->add_option("--test-images", spec.test_images, "Test images (holdout split only)")->capture_default_str();
  synth->add_option("--classes", spec.num_classes, "Classes including background")->capture_default_str();
  synth->add_option("--size", spec.size, "Image side length in pixels")->capture_default_str();
  synth->add_option("--shapes", spec.shapes_per_image, "Shapes per image")->capture_default_str();
  synth->add_option("--holdout", spec.holdout, "Classes kept out of the training images")->capture_default_str();
  synth->add_option("--stride", spec.patch_stride, "Patch stride shapes snap to")->capture_default_str();
  synth->add_flag("--ellipses", spec.ellipses, "Mix ellipses in with rectangles");
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--id", spec.dataset_id, "Dataset id")->capture_default_str();

  // validate
  auto* validate = app.add_subcommand("validate", "Check manifests and print a conformance report");
  std::vector<std::string> validate_paths;
  std::string validate_json;
  validate->add_option("manifests", validate_paths, "Manifest files")->required();
  validate->add_option("--json", validate_json, "Also write the report as JSON");

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string config_path, preset = "default", train_manifest, train_out, resume, noise_family;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  int batch_size = 0;
  double lr = 0.0, sigma_t = 0.0, df = 0.0;
  bool zero_image_spm = false, no_standardize = false, no_text_spm = false, no_image_spm = false;
  std::vector<std::string> sets;
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--preset", preset, "Base preset (default, desk)")->capture_default_str();
  train->add_option("--manifest", train_manifest, "Training manifest");
  train->add_option("--out", train_out, "Run directory");
  auto* seed_opt = train->add_option("--seed", seed, "Random seed");
  auto* steps_opt = train->add_option("--steps", steps, "Total optimization steps");
  auto* batch_opt = train->add_option("--batch-size", batch_size, "Images per step");
  auto* lr_opt = train->add_option("--lr", lr, "Base learning rate");
  auto* sigma_opt = train->add_option("--sigma-t", sigma_t, "Init std of the text perturbation parameters");
  train->add_flag("--zero-image-spm", zero_image_spm, "Freeze the image perturbation at identity and check parity");
  train->add_option("--noise-family", noise_family, "gaussian, laplace, uniform or student_t");
  auto* df_opt = train->add_option("--df", df, "Student-t degrees of freedom");
  train->add_flag("--no-standardize", no_standardize, "Draw unit-scale rather than unit-variance noise");
  train->add_flag("--no-text-spm", no_text_spm, "Disable the text perturbation module");
  train->add_flag("--no-image-spm", no_image_spm, "Disable the image perturbation module");
  train->add_option("--set", sets, "Override any config key: section.key=value (repeatable)");
  train->add_option("--resume", resume, "Continue from a checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one or more manifests");
  std::string eval_ckpt, eval_out, eval_split, dump_logits;
  std::vector<std::string> eval_manifests;
  bool resolution_groups_flag = false;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifests, "Dataset manifest (repeatable)")->required();
  eval->add_option("--out", eval_out, "Directory for report files");
  eval->add_option("--split", eval_split, "seen=a,b,...,unseen=c,...");
  eval->add_flag("--resolution-groups", resolution_groups_flag, "Add low/high resolution sub-means");
  eval->add_option("--dump-logits", dump_logits, "Directory for raw logits");

  // map
  auto* map = app.add_subcommand("map", "Relabel a manifest onto a unified vocabulary");
  std::string map_manifest, map_table, map_vocab, map_out;
  map->add_option("--manifest", map_manifest, "Input manifest")->required();
  map->add_option("--taxonomy", map_table, "Taxonomy table (raw<TAB>unified)")->required();
  map->add_option("--vocab", map_vocab, "Unified vocabulary file")->required();
  map->add_option("--out", map_out, "Output manifest path")->required();

  // overlap
  auto* overlap = app.add_subcommand("overlap", "Category overlap between a training vocabulary and test sets");
  std::string overlap_vocab, overlap_out;
  std::vector<std::string> overlap_manifests;
  overlap->add_option("--vocab", overlap_vocab, "Training vocabulary file")->required();
  overlap->add_option("--manifest", overlap_manifests, "Mapped test manifest (repeatable)")->required();
  overlap->add_option("--out", overlap_out, "Output directory")->required();

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Perturbation response statistics of a checkpoint");
  std::string diag_ckpt, diag_manifest, diag_out;
  int diag_draws = 1;
  std::uint64_t diag_seed = 0;
  diagnose->add_option("--checkpoint", diag_ckpt, "Checkpoint file")->required();
  diagnose->add_option("--manifest", diag_manifest, "Dataset manifest")->required();
  diagnose->add_option("--draws", diag_draws, "Noise draws averaged per image")->capture_default_str();
  diagnose->add_option("--seed", diag_seed, "Random seed")->capture_default_str();
  diagnose->add_option("--out", diag_out, "Write statistics JSON here");

  // plots
  auto* plots = app.add_subcommand("plots", "Render training curves from a metrics log");
  std::string plot_log, plot_out;
  plots->add_option("--log", plot_log, "metrics.jsonl")->required();
  plots->add_option("--out", plot_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto out = generate_synthetic_dataset(spec, synth_out);
      std::cout << "wrote " << out.train_manifest.string() << "\n";
      if (out.test_manifest) std::cout << "wrote " << out.test_manifest->string() << "\n";
      return 0;
    }

    if (*validate) {
      json all = json::array();
      bool ok = true;
      for (const auto& p : validate_paths) {
        const auto report = validate_manifest(p);
        all.push_back(report.to_json());
        ok = ok && report.ok();
        std::cout << p << ": " << (report.ok() ? "OK" : "INVALID") << " (" << report.num_samples << " samples, "
                  << report.num_classes << " classes)\n";
        for (size_t c = 0; c < report.class_pixels.size(); ++c) {
          std::cout << "  class " << c << ": " << report.class_pixels[c] << " px\n";
        }
        std::cout << "  ignored: " << report.ignored_pixels << " px\n";
        for (const auto& issue : report.issues) std::cout << "  error: " << issue.file << ": " << issue.message << "\n";
      }
      if (!validate_json.empty()) write_text(validate_json, all.dump(2) + "\n");
      return ok ? 0 : 1;
    }

    if (*train) {
      RunConfig config = named_preset(preset);
      if (!config_path.empty()) apply_overrides(config, read_json_file(config_path));
      apply_overrides(config, environment_overrides(process_environment()));

      json flags = json::object();
      if (!train_manifest.empty()) flags["train_manifest"] = train_manifest;
      if (!train_out.empty()) flags["out_dir"] = train_out;
      if (seed_opt->count()) flags["train"]["seed"] = seed;
      if (steps_opt->count()) flags["train"]["total_steps"] = steps;
      if (batch_opt->count()) flags["train"]["batch_size"] = batch_size;
      if (lr_opt->count()) flags["train"]["base_lr"] = lr;
      if (sigma_opt->count()) flags["model"]["sigma_t"] = sigma_t;
      if (zero_image_spm) flags["model"]["freeze_image_spm"] = true;
      if (no_text_spm) flags["model"]["text_spm"] = false;
      if (no_image_spm) flags["model"]["image_spm"] = false;
      if (!noise_family.empty()) flags["noise"]["family"] = noise_family;
      if (df_opt->count()) flags["noise"]["df"] = df;
      if (no_standardize) flags["noise"]["standardized"] = false;
      for (const auto& s : sets) add_set_override(flags, s);
      apply_overrides(config, flags);
      if (df_opt->count() && config.model.noise.family != NoiseFamily::kStudentT) {
        throw Error("--df applies only with --noise-family student_t");
      }
      config.validate();

      if (zero_image_spm) {
        const double diff = forward_parity(config);
        const bool identity = config.model.sigma_t == 0.0 || !config.model.text_spm;
        std::cout << "parity at initialization: max |train - eval| = " << diff << "\n";
        if (identity && diff != 0.0) throw Error("train/eval forward parity failed with identity perturbations");
        if (identity) std::cout << "parity: OK\n";
      }

      TrainingOptions options;
      if (!resume.empty()) options.resume_from = resume;
      options.on_step = [&](const StepMetrics& m) {
        if (config.train.log_every > 0 && m.step % config.train.log_every == 0) {
          std::cout << "step " << m.step << " loss " << m.loss << " lr " << m.lr << "\n";
        }
      };
      const auto result = run_training(config, options);
      std::cout << "finished " << result.steps << " steps, final loss " << result.final_loss << "\n"
                << "checkpoint " << result.checkpoint.string() << "\n";
      return std::isfinite(result.final_loss) ? 0 : 1;
    }

    if (*eval) {
      const LoadedModel model = load_model(eval_ckpt);
      EvalOptions options;
      if (!eval_split.empty()) options.split = parse_split(eval_split);
      std::vector<EvalReport> reports;
      std::vector<DatasetResolution> resolutions;
      for (const auto& path : eval_manifests) {
        const auto manifest = load_manifest(path);
        if (!dump_logits.empty()) options.dump_logits_dir = fs::path(dump_logits) / manifest.dataset_id;
        reports.push_back(evaluate_manifest(model, manifest, options));
        resolutions.push_back({manifest.dataset_id, manifest.native_width, manifest.native_height});
        std::cout << format_table(reports.back()) << "\n";
        if (!eval_out.empty()) {
          write_text(fs::path(eval_out) / (manifest.dataset_id + ".json"), to_json(reports.back()).dump(2) + "\n");
          write_text(fs::path(eval_out) / (manifest.dataset_id + ".txt"), format_table(reports.back()));
        }
      }
      if (reports.size() > 1 || resolution_groups_flag) {
        const auto cross = cross_dataset_report(reports, resolution_groups_flag ? &resolutions : nullptr);
        std::cout << format_table(cross);
        if (!eval_out.empty()) {
          write_text(fs::path(eval_out) / "cross_dataset.json", to_json(cross).dump(2) + "\n");
          write_text(fs::path(eval_out) / "cross_dataset.txt", format_table(cross));
        }
      }
      return 0;
    }

    if (*map) {
      const auto manifest = load_manifest(map_manifest, MaskScan::kLazy);
      auto mapped = map_taxonomy(manifest, read_taxonomy(map_table), read_vocabulary(map_vocab));
      const fs::path out = fs::absolute(map_out);
      const fs::path data_root = fs::weakly_canonical(fs::absolute(manifest.base_dir / manifest.root));
      mapped.root = fs::relative(data_root, fs::weakly_canonical(out.parent_path())).generic_string();
      if (mapped.root.empty()) mapped.root = ".";
      write_manifest(mapped, out);
      std::cout << "wrote " << out.string() << " (" << mapped.num_classes() << " unified categories)\n";
      return 0;
    }

    if (*overlap) {
      const auto vocab = read_vocabulary(overlap_vocab);
      std::vector<DatasetManifest> manifests;
      for (const auto& p : overlap_manifests) {
        auto m = load_manifest(p, MaskScan::kLazy);
        if (!m.mapped()) throw Error("manifest " + p + " has not been taxonomy-mapped; run `piseg map` first");
        manifests.push_back(std::move(m));
      }
      const auto reports = overlap_report({vocab.begin(), vocab.end()}, manifests);
      json j = json::array();
      std::vector<std::string> ids;
      Series covered{"covered", {}, {}}, test_only{"test-only", {}, {}};
      for (size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        j.push_back(r.to_json());
        ids.push_back(r.dataset_id);
        covered.x.push_back(static_cast<double>(i));
        covered.y.push_back(r.covered);
        test_only.x.push_back(static_cast<double>(i));
        test_only.y.push_back(r.test_only);
        std::printf("%-20s raw %3d  covered %3d  test-only %3d  coverage %.2f%%\n", r.dataset_id.c_str(),
                    r.raw_unique, r.covered, r.test_only, r.coverage_ratio * 100.0);
      }
      write_text(fs::path(overlap_out) / "overlap.json", j.dump(2) + "\n");
      write_bar_chart(fs::path(overlap_out) / "overlap.png", "category overlap", ids, {covered, test_only});
      return 0;
    }

    if (*diagnose) {
      const LoadedModel model = load_model(diag_ckpt);
      const auto stats = diagnose_manifest(model, load_manifest(diag_manifest), diag_draws, diag_seed);
      if (!stats) throw Error("no ground-truth class present in " + diag_manifest);
      const json j = {{"gt_in_mean", stats->gt_in_mean},
                      {"non_gt_mean", stats->non_gt_mean},
                      {"gap", stats->gap},
                      {"align_ratio", stats->align_ratio}};
      std::cout << j.dump(2) << "\n";
      if (!diag_out.empty()) write_text(diag_out, j.dump(2) + "\n");
      return 0;
    }

    if (*plots) {
      const auto summary = emit_plots(plot_log, plot_out);
      for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& f : summary.files) std::cout << "wrote " << f.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
