// SPDX-License-Identifier: Apache-2.0
#include "tgm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace tgm {

namespace {

using nlohmann::json;

json parseJsonText(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

void rejectUnknownKeys(const json& obj, const std::set<std::string>& allowed,
                       const char* context) {
  if (!obj.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
  }
}

int getInt(const json& obj, const char* key, const char* context) {
  if (!obj.contains(key))
    throw ConfigError(std::string(context) + ": missing key '" + key + "'");
  if (!obj[key].is_number_integer())
    throw ConfigError(std::string(context) + ": '" + key + "' must be an integer");
  return obj[key].get<int>();
}

int getIntOr(const json& obj, const char* key, int fallback, const char* context) {
  return obj.contains(key) ? getInt(obj, key, context) : fallback;
}

double getNumberOr(const json& obj, const char* key, double fallback, const char* context) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number())
    throw ConfigError(std::string(context) + ": '" + key + "' must be a number");
  return obj[key].get<double>();
}

bool getBoolOr(const json& obj, const char* key, bool fallback, const char* context) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean())
    throw ConfigError(std::string(context) + ": '" + key + "' must be a boolean");
  return obj[key].get<bool>();
}

std::string getString(const json& obj, const char* key, const char* context) {
  if (!obj.contains(key))
    throw ConfigError(std::string(context) + ": missing key '" + key + "'");
  if (!obj[key].is_string())
    throw ConfigError(std::string(context) + ": '" + key + "' must be a string");
  return obj[key].get<std::string>();
}

LayerForm formFromName(const std::string& name, const char* context) {
  for (LayerForm f : {LayerForm::Conv1dStandard, LayerForm::Conv1dSharedGaussian,
                      LayerForm::Conv1dPerChannelGaussian, LayerForm::TgmSingle,
                      LayerForm::TgmGrouped, LayerForm::TgmChannelCombine1x1,
                      LayerForm::TgmChannelCombineSoft, LayerForm::TcUnconstrained})
    if (name == formName(f)) return f;
  throw ConfigError(std::string(context) + ": unknown layer form '" + name + "'");
}

KernelSource sourceFromName(const std::string& name, const char* context) {
  for (KernelSource s : {KernelSource::LearnedGaussianMixture, KernelSource::FixedGaussianMixture,
                         KernelSource::FixedRandomFilters, KernelSource::UnconstrainedFree})
    if (name == sourceName(s)) return s;
  throw ConfigError(std::string(context) + ": unknown kernel source '" + name + "'");
}

KernelSource defaultSource(LayerForm form) {
  if (form == LayerForm::Conv1dStandard || form == LayerForm::TcUnconstrained)
    return KernelSource::UnconstrainedFree;
  return KernelSource::LearnedGaussianMixture;
}

LayerConfig layerFromJson(const json& obj, int index) {
  const std::string ctx = "layer " + std::to_string(index);
  rejectUnknownKeys(obj, {"form", "source", "c_in", "c_out", "L", "M", "d", "per_row_gaussians"},
                    ctx.c_str());
  LayerConfig c;
  c.form = formFromName(getString(obj, "form", ctx.c_str()), ctx.c_str());
  c.source = obj.contains("source")
                 ? sourceFromName(getString(obj, "source", ctx.c_str()), ctx.c_str())
                 : defaultSource(c.form);
  c.c_in = getInt(obj, "c_in", ctx.c_str());
  c.c_out = getInt(obj, "c_out", ctx.c_str());
  c.L = getInt(obj, "L", ctx.c_str());
  c.M = getIntOr(obj, "M", 1, ctx.c_str());
  c.d = getInt(obj, "d", ctx.c_str());
  c.per_row_gaussians = getBoolOr(obj, "per_row_gaussians", false, ctx.c_str());
  validateLayer(c);
  return c;
}

json layerToJson(const LayerConfig& c) {
  json obj;
  obj["form"] = formName(c.form);
  obj["source"] = sourceName(c.source);
  obj["c_in"] = c.c_in;
  obj["c_out"] = c.c_out;
  obj["L"] = c.L;
  obj["M"] = c.M;
  obj["d"] = c.d;
  obj["per_row_gaussians"] = c.per_row_gaussians;
  return obj;
}

ModelConfig modelFromJson(const json& obj) {
  rejectUnknownKeys(obj, {"d", "num_classes", "classifier", "layers"}, "model config");
  ModelConfig cfg;
  cfg.d = getInt(obj, "d", "model config");
  cfg.num_classes = getInt(obj, "num_classes", "model config");
  if (obj.contains("classifier")) {
    const std::string kind = getString(obj, "classifier", "model config");
    if (kind == "per_class_linear")
      cfg.classifier = ClassifierKind::PerClassLinear;
    else if (kind == "shared_linear")
      cfg.classifier = ClassifierKind::SharedLinear;
    else
      throw ConfigError("model config: unknown classifier '" + kind + "'");
  }
  if (obj.contains("layers")) {
    if (!obj["layers"].is_array())
      throw ConfigError("model config: 'layers' must be an array");
    int i = 0;
    for (const auto& l : obj["layers"]) cfg.layers.push_back(layerFromJson(l, i++));
  }
  validateModel(cfg);
  return cfg;
}

json modelToJson(const ModelConfig& cfg) {
  json obj;
  obj["d"] = cfg.d;
  obj["num_classes"] = cfg.num_classes;
  obj["classifier"] = cfg.classifier == ClassifierKind::PerClassLinear ? "per_class_linear"
                                                                       : "shared_linear";
  obj["layers"] = json::array();
  for (const LayerConfig& l : cfg.layers) obj["layers"].push_back(layerToJson(l));
  return obj;
}

}  // namespace

ModelConfig parseModelConfig(const std::string& json_text) {
  return modelFromJson(parseJsonText(json_text, "model config"));
}

std::string modelConfigJson(const ModelConfig& cfg) { return modelToJson(cfg).dump(); }

TrainPlan parseTrainPlan(const std::string& json_text) {
  const json obj = parseJsonText(json_text, "train plan");
  rejectUnknownKeys(obj, {"epochs", "base_lr", "seed", "shuffle"}, "train plan");
  TrainPlan plan;
  plan.epochs = getIntOr(obj, "epochs", plan.epochs, "train plan");
  plan.base_lr = getNumberOr(obj, "base_lr", plan.base_lr, "train plan");
  if (obj.contains("seed")) {
    if (!obj["seed"].is_number_unsigned() && !obj["seed"].is_number_integer())
      throw ConfigError("train plan: 'seed' must be an integer");
    plan.seed = obj["seed"].get<std::uint64_t>();
  }
  plan.shuffle = getBoolOr(obj, "shuffle", plan.shuffle, "train plan");
  if (plan.epochs < 1) throw ConfigError("train plan: epochs must be positive");
  if (plan.base_lr < 0) throw ConfigError("train plan: base_lr must be nonnegative");
  return plan;
}

std::string trainPlanJson(const TrainPlan& plan) {
  json obj;
  obj["epochs"] = plan.epochs;
  obj["base_lr"] = plan.base_lr;
  obj["seed"] = plan.seed;
  obj["shuffle"] = plan.shuffle;
  return obj.dump();
}

SynthSpec parseSynthSpec(const std::string& json_text) {
  const json obj = parseJsonText(json_text, "synth spec");
  rejectUnknownKeys(obj,
                    {"num_videos", "d", "t_range", "num_classes", "delays", "trigger_duration",
                     "noise_std", "events_per_video", "trigger_gain", "seed"},
                    "synth spec");
  SynthSpec spec;
  spec.num_videos = getIntOr(obj, "num_videos", spec.num_videos, "synth spec");
  spec.d = getIntOr(obj, "d", spec.d, "synth spec");
  if (obj.contains("t_range")) {
    const auto& r = obj["t_range"];
    if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer())
      throw ConfigError("synth spec: 't_range' must be [t_min, t_max]");
    spec.t_min = r[0].get<int>();
    spec.t_max = r[1].get<int>();
  }
  spec.num_classes = getIntOr(obj, "num_classes", spec.num_classes, "synth spec");
  if (obj.contains("delays")) {
    if (!obj["delays"].is_array()) throw ConfigError("synth spec: 'delays' must be an array");
    spec.delays.clear();
    for (const auto& d : obj["delays"]) {
      if (!d.is_number_integer()) throw ConfigError("synth spec: delays must be integers");
      spec.delays.push_back(d.get<int>());
    }
  } else if (spec.num_classes != static_cast<int>(spec.delays.size())) {
    throw ConfigError("synth spec: 'delays' required when num_classes != 5");
  }
  spec.trigger_duration = getIntOr(obj, "trigger_duration", spec.trigger_duration, "synth spec");
  spec.noise_std = getNumberOr(obj, "noise_std", spec.noise_std, "synth spec");
  spec.events_per_video = getIntOr(obj, "events_per_video", spec.events_per_video, "synth spec");
  spec.trigger_gain = getNumberOr(obj, "trigger_gain", spec.trigger_gain, "synth spec");
  if (obj.contains("seed")) {
    if (!obj["seed"].is_number_unsigned() && !obj["seed"].is_number_integer())
      throw ConfigError("synth spec: 'seed' must be an integer");
    spec.seed = obj["seed"].get<std::uint64_t>();
  }
  validateSynthSpec(spec);
  return spec;
}

std::string synthSpecJson(const SynthSpec& spec) {
  json obj;
  obj["num_videos"] = spec.num_videos;
  obj["d"] = spec.d;
  obj["t_range"] = {spec.t_min, spec.t_max};
  obj["num_classes"] = spec.num_classes;
  obj["delays"] = spec.delays;
  obj["trigger_duration"] = spec.trigger_duration;
  obj["noise_std"] = spec.noise_std;
  obj["events_per_video"] = spec.events_per_video;
  obj["trigger_gain"] = spec.trigger_gain;
  obj["seed"] = spec.seed;
  return obj.dump(2);
}

RunConfig parseRunConfig(const std::string& json_text) {
  const json obj = parseJsonText(json_text, "run config");
  rejectUnknownKeys(obj, {"model", "train"}, "run config");
  if (!obj.contains("model")) throw ConfigError("run config: missing key 'model'");
  RunConfig rc;
  rc.model = modelFromJson(obj["model"]);
  if (obj.contains("train")) rc.train = parseTrainPlan(obj["train"].dump());
  return rc;
}

std::string readTextFile(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void writeTextFile(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace tgm
