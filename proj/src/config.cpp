#include "piseg/config.hpp"

#include <algorithm>
#include <cctype>

extern char** environ;

namespace piseg {

using nlohmann::json;

void EncoderConfig::validate() const {
  PISEG_CHECK(patch_stride >= 1, "encoder.patch_stride must be positive");
  PISEG_CHECK(alignment >= 0.0 && alignment <= 1.0, "encoder.alignment must lie in [0, 1]");
  PISEG_CHECK(!seed_namespace.empty(), "encoder.seed_namespace must not be empty");
  apply_prompt_template({"x"}, prompt_template);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  encoder.validate();
}

json RunConfig::to_json() const {
  json j;
  j["model"] = {{"embed_dim", model.embed_dim},
                {"aggregator",
                 {{"num_blocks", model.aggregator.num_blocks},
                  {"feature_dim", model.aggregator.feature_dim},
                  {"window", model.aggregator.window}}},
                {"decoder_stages", model.decoder_stages},
                {"reduction_ratio", model.reduction_ratio},
                {"sigma_t", model.sigma_t},
                {"cosine_eps", model.cosine_eps},
                {"text_spm", model.text_spm},
                {"image_spm", model.image_spm},
                {"freeze_image_spm", model.freeze_image_spm}};
  j["noise"] = {{"family", to_string(model.noise.family)},
                {"df", model.noise.df},
                {"standardized", model.noise.standardized}};
  j["train"] = {{"total_steps", train.total_steps},   {"batch_size", train.batch_size},
                {"base_lr", train.base_lr},           {"warmup_steps", train.warmup_steps},
                {"weight_decay", train.weight_decay}, {"grad_clip", train.grad_clip},
                {"beta1", train.beta1},               {"beta2", train.beta2},
                {"adam_eps", train.adam_eps},         {"seed", train.seed},
                {"log_every", train.log_every},       {"diag_every", train.diag_every},
                {"diag_draws", train.diag_draws},     {"checkpoint_every", train.checkpoint_every}};
  j["encoder"] = {{"patch_stride", encoder.patch_stride},
                  {"seed_namespace", encoder.seed_namespace},
                  {"alignment", encoder.alignment},
                  {"prompt_template", encoder.prompt_template}};
  j["train_manifest"] = train_manifest;
  j["out_dir"] = out_dir;
  return j;
}

namespace {

void merge_strict(json& base, const json& patch, const std::string& path) {
  PISEG_CHECK(patch.is_object(), "config override at '" << (path.empty() ? "<root>" : path) << "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    PISEG_CHECK(base.contains(key), "unknown config key '" << here << "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, here);
      continue;
    }
    const bool ok = (slot.is_number() && value.is_number()) || (slot.is_boolean() && value.is_boolean()) ||
                    (slot.is_string() && value.is_string());
    PISEG_CHECK(ok, "config key '" << here << "' expects a " << slot.type_name() << ", got " << value.type_name());
    PISEG_CHECK(!(slot.is_number_integer() && value.is_number_float()),
                "config key '" << here << "' expects an integer, got " << value.dump());
    PISEG_CHECK(!(slot.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0),
                "config key '" << here << "' must be non-negative");
    slot = value;
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  apply_overrides(c, j);
  return c;
}

void apply_overrides(RunConfig& config, const json& patch) {
  json full = config.to_json();
  merge_strict(full, patch, "");
  RunConfig c;
  try {
    const auto& m = full["model"];
    c.model.embed_dim = m["embed_dim"].get<int>();
    c.model.aggregator.num_blocks = m["aggregator"]["num_blocks"].get<int>();
    c.model.aggregator.feature_dim = m["aggregator"]["feature_dim"].get<int>();
    c.model.aggregator.window = m["aggregator"]["window"].get<int>();
    c.model.decoder_stages = m["decoder_stages"].get<int>();
    c.model.reduction_ratio = m["reduction_ratio"].get<int>();
    c.model.sigma_t = m["sigma_t"].get<double>();
    c.model.cosine_eps = m["cosine_eps"].get<double>();
    c.model.text_spm = m["text_spm"].get<bool>();
    c.model.image_spm = m["image_spm"].get<bool>();
    c.model.freeze_image_spm = m["freeze_image_spm"].get<bool>();
    const auto& n = full["noise"];
    c.model.noise.family = parse_noise_family(n["family"].get<std::string>());
    c.model.noise.df = n["df"].get<double>();
    c.model.noise.standardized = n["standardized"].get<bool>();
    const auto& t = full["train"];
    c.train.total_steps = t["total_steps"].get<std::int64_t>();
    c.train.batch_size = t["batch_size"].get<int>();
    c.train.base_lr = t["base_lr"].get<double>();
    c.train.warmup_steps = t["warmup_steps"].get<std::int64_t>();
    c.train.weight_decay = t["weight_decay"].get<double>();
    c.train.grad_clip = t["grad_clip"].get<double>();
    c.train.beta1 = t["beta1"].get<double>();
    c.train.beta2 = t["beta2"].get<double>();
    c.train.adam_eps = t["adam_eps"].get<double>();
    c.train.seed = t["seed"].get<std::uint64_t>();
    c.train.log_every = t["log_every"].get<std::int64_t>();
    c.train.diag_every = t["diag_every"].get<std::int64_t>();
    c.train.diag_draws = t["diag_draws"].get<int>();
    c.train.checkpoint_every = t["checkpoint_every"].get<std::int64_t>();
    const auto& e = full["encoder"];
    c.encoder.patch_stride = e["patch_stride"].get<int>();
    c.encoder.seed_namespace = e["seed_namespace"].get<std::string>();
    c.encoder.alignment = e["alignment"].get<double>();
    c.encoder.prompt_template = e["prompt_template"].get<std::string>();
    c.train_manifest = full["train_manifest"].get<std::string>();
    c.out_dir = full["out_dir"].get<std::string>();
  } catch (const json::exception& ex) {
    throw Error(std::string("invalid config value: ") + ex.what());
  }
  c.validate();
  config = c;
}

json environment_overrides(const std::map<std::string, std::string>& env) {
  static const std::string kPrefix = "PISEG_";
  json patch = json::object();
  for (const auto& [name, value] : env) {
    if (name.rfind(kPrefix, 0) != 0) continue;
    std::string rest = name.substr(kPrefix.size());
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
    PISEG_CHECK(!rest.empty(), "empty config path in environment variable " << name);
    json* node = &patch;
    size_t start = 0;
    while (true) {
      const size_t sep = rest.find("__", start);
      const std::string key = rest.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      PISEG_CHECK(!key.empty(), "malformed config path in environment variable " << name);
      if (sep == std::string::npos) {
        json parsed = json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
        break;
      }
      node = &(*node)[key];
      PISEG_CHECK(node->is_null() || node->is_object(), "conflicting environment overrides at " << name);
      start = sep + 2;
    }
  }
  return patch;
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return env;
}

RunConfig desk_preset() {
  RunConfig c;
  c.model.embed_dim = 64;
  c.model.aggregator = {2, 64, 5};
  c.model.decoder_stages = 2;
  c.train.total_steps = 2000;
  c.train.batch_size = 8;
  c.train.base_lr = 1e-3;
  c.train.warmup_steps = 50;
  c.train.diag_every = 50;
  c.train.log_every = 10;
  c.out_dir = "runs/desk";
  return c;
}

RunConfig named_preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "default") return RunConfig{};
  throw Error("unknown preset '" + name + "' (expected desk or default)");
}

}  // namespace piseg
