#include "piseg/pipeline.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace piseg {

namespace fs = std::filesystem;
using nlohmann::json;

SyntheticEncoder make_encoder(const EncoderConfig& config, int embed_dim, const DatasetManifest* manifest) {
  config.validate();
  SyntheticImageOptions opts;
  opts.embed_dim = embed_dim;
  opts.downsample = config.patch_stride;
  opts.seed_namespace = config.seed_namespace;
  opts.alignment = config.alignment;
  if (manifest) {
    for (const auto& entry : manifest->palette) {
      opts.lexicon[entry.rgb] = apply_prompt_template({entry.name}, config.prompt_template).prompts.front();
    }
  }
  return SyntheticEncoder(std::move(opts));
}

TrainingData prepare_data(const DatasetManifest& manifest, const EncoderAdapter& encoder,
                          const std::string& prompt_template) {
  TrainingData data;
  data.patch_stride = encoder.patch_stride();
  data.text = encoder.encode_text(apply_prompt_template(manifest.categories, prompt_template));
  for (size_t i = 0; i < manifest.samples.size(); ++i) {
    const Image image = load_sample_image(manifest, i);
    SegmentationMap mask = load_sample_mask(manifest, i);
    PISEG_CHECK(image.height == mask.height && image.width == mask.width,
                manifest.mask_path(i).string() << ": mask size differs from its image");
    VisualFeatureMap features = encoder.encode_image(image);
    check_pairing(data.text, features);
    data.features.push_back(std::move(features));
    data.masks.push_back(std::move(mask));
  }
  return data;
}

fs::path step_checkpoint_path(const fs::path& run_dir, std::int64_t step) {
  char name[48];
  std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(step));
  return run_dir / "checkpoints" / name;
}

namespace {

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  PISEG_CHECK(out, "cannot write " << path.string());
  out << j.dump(2) << "\n";
}

// Settings that change the trajectory must match when resuming.
json trajectory_fields(const json& config) {
  json j = {{"model", config.at("model")}, {"noise", config.at("noise")}, {"encoder", config.at("encoder")},
            {"train", config.at("train")}, {"train_manifest", config.at("train_manifest")}};
  j["train"].erase("checkpoint_every");
  j["train"].erase("log_every");
  j["train"].erase("diag_every");
  j["train"].erase("diag_draws");
  return j;
}

// Keeps log records strictly before `step`.
void truncate_log(const fs::path& log, std::int64_t step) {
  if (!fs::exists(log)) return;
  std::ifstream in(log);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    if (rec.at("step").get<std::int64_t>() < step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  out << kept;
}

}  // namespace

TrainingResult run_training(const RunConfig& config, const TrainingOptions& options) {
  config.validate();
  PISEG_CHECK(!config.train_manifest.empty(), "no train_manifest configured");
  const DatasetManifest manifest = load_manifest(config.train_manifest);
  const SyntheticEncoder encoder = make_encoder(config.encoder, config.model.embed_dim, &manifest);
  const TrainingData data = prepare_data(manifest, encoder, config.encoder.prompt_template);

  const fs::path run_dir = config.out_dir;
  fs::create_directories(run_dir);
  const json config_json = config.to_json();
  write_json_file(run_dir / "config.json", config_json);

  Trainer trainer(config.model, config.train, data);
  TrainingResult result;
  result.log = run_dir / "metrics.jsonl";
  if (options.resume_from) {
    const Checkpoint ck = read_checkpoint(*options.resume_from);
    PISEG_CHECK(ck.metadata.contains("config"), "checkpoint " << options.resume_from->string() << " has no config");
    PISEG_CHECK(trajectory_fields(ck.metadata["config"]) == trajectory_fields(config_json),
                "checkpoint " << options.resume_from->string() << " was trained with a different configuration");
    trainer.restore(ck);
    truncate_log(result.log, trainer.completed_steps());
  } else if (fs::exists(result.log)) {
    fs::remove(result.log);
  }

  std::ofstream log(result.log, std::ios::app);
  PISEG_CHECK(log, "cannot open " << result.log.string());
  const auto& tc = config.train;
  while (!trainer.done()) {
    if (options.stop_after && trainer.completed_steps() >= *options.stop_after) break;
    StepMetrics m;
    try {
      m = trainer.step();
    } catch (const NonFiniteLoss&) {
      result.aborted = true;
      result.checkpoint = run_dir / "abort.ckpt";
      write_checkpoint(result.checkpoint, trainer.checkpoint(config_json));
      throw;
    }
    result.final_loss = m.loss;
    const bool last = trainer.done();
    if ((tc.log_every > 0 && m.step % tc.log_every == 0) || m.delta || last) {
      log << m.to_json().dump() << "\n";
      log.flush();
    }
    if (options.on_step) options.on_step(m);
    if (tc.checkpoint_every > 0 && trainer.completed_steps() % tc.checkpoint_every == 0 && !last) {
      write_checkpoint(step_checkpoint_path(run_dir, trainer.completed_steps()), trainer.checkpoint(config_json));
    }
  }
  result.steps = trainer.completed_steps();
  result.checkpoint = trainer.done() ? run_dir / "final.ckpt" : step_checkpoint_path(run_dir, result.steps);
  write_checkpoint(result.checkpoint, trainer.checkpoint(config_json));
  return result;
}

LoadedModel load_model(const fs::path& checkpoint_path) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  PISEG_CHECK(ck.metadata.contains("config"), "checkpoint " << checkpoint_path.string() << " has no config");
  LoadedModel model;
  model.config = run_config_from_json(ck.metadata["config"]);
  Rng rng = make_rng(0, "init");
  model.params = init_model(model.config.model, rng);
  load_params(ck, model.params);
  return model;
}

ConfusionMatrix confusion_on(const ModelConfig& config, const ModelParams& params, const TrainingData& data,
                             const std::function<void(size_t, const Logits&)>& on_logits) {
  ConfusionMatrix cm(data.text.num_classes());
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& mask = data.masks[i];
    const Logits logits =
        forward(config, params, data.text, data.features[i], {mask.height, mask.width}, SpmMode::kEval, nullptr);
    if (on_logits) on_logits(i, logits);
    accumulate_confusion(cm, predict(logits), mask);
  }
  return cm;
}

EvalReport evaluate_manifest(const LoadedModel& model, const DatasetManifest& manifest, const EvalOptions& options) {
  const int n = manifest.num_classes();
  PISEG_CHECK(n >= 1 && n < kIgnoreIndex, "manifest " << manifest.dataset_id << " has " << n
                                                      << " classes; the model accepts 1 to 254");
  const SyntheticEncoder encoder = make_encoder(model.config.encoder, model.config.model.embed_dim, &manifest);
  PISEG_CHECK(encoder.embed_dim() == model.params.spm.text.mu.cols(),
              "encoder width " << encoder.embed_dim() << " does not match checkpoint width "
                               << model.params.spm.text.mu.cols());
  const TrainingData data = prepare_data(manifest, encoder, model.config.encoder.prompt_template);

  std::function<void(size_t, const Logits&)> dump;
  if (options.dump_logits_dir) {
    fs::create_directories(*options.dump_logits_dir);
    dump = [&](size_t i, const Logits& logits) {
      const fs::path stem = fs::path(manifest.samples[i].image).stem();
      write_logits(logits, *options.dump_logits_dir / (stem.string() + ".logits"));
    };
  }
  const ConfusionMatrix cm = confusion_on(model.config.model, model.params, data, dump);
  EvalReport report = dataset_report(cm, manifest.categories, manifest.dataset_id);
  const auto& split = options.split ? options.split : manifest.split;
  if (split) report.split = split_report(report, split->seen, split->unseen);
  return report;
}

std::optional<DeltaStats> diagnose_manifest(const LoadedModel& model, const DatasetManifest& manifest, int draws,
                                            std::uint64_t seed) {
  const SyntheticEncoder encoder = make_encoder(model.config.encoder, model.config.model.embed_dim, &manifest);
  const TrainingData data = prepare_data(manifest, encoder, model.config.encoder.prompt_template);
  std::vector<int> all(data.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  Rng rng = make_rng(seed, "diagnostics");
  return batch_delta_stats(all, data, model.params, model.config.model, draws, rng);
}

namespace {

constexpr char kLogitsMagic[8] = {'P', 'I', 'S', 'E', 'G', 'L', 'G', '1'};

}  // namespace

void write_logits(const Logits& logits, const fs::path& path) {
  static_assert(std::endian::native == std::endian::little);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  PISEG_CHECK(out, "cannot write " << path.string());
  out.write(kLogitsMagic, sizeof(kLogitsMagic));
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(logits.size.height),
                                 static_cast<std::uint64_t>(logits.size.width),
                                 static_cast<std::uint64_t>(logits.tensor.cols())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(logits.tensor.data()),
            static_cast<std::streamsize>(logits.tensor.size() * sizeof(double)));
  PISEG_CHECK(out, "failed while writing " << path.string());
}

Logits read_logits(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  PISEG_CHECK(in, "cannot open " << path.string());
  char magic[8];
  std::uint64_t dims[3];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  PISEG_CHECK(in && std::memcmp(magic, kLogitsMagic, sizeof(magic)) == 0, "not a logits file: " << path.string());
  Logits l;
  l.size = {static_cast<int>(dims[0]), static_cast<int>(dims[1])};
  l.tensor.resize(static_cast<Eigen::Index>(dims[0] * dims[1]), static_cast<Eigen::Index>(dims[2]));
  in.read(reinterpret_cast<char*>(l.tensor.data()), static_cast<std::streamsize>(l.tensor.size() * sizeof(double)));
  PISEG_CHECK(in, "truncated logits file " << path.string());
  return l;
}

}  // namespace piseg
