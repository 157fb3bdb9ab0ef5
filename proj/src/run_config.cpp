#include "mfdp/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mfdp {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& keys) {
  if (!j.is_object()) throw ContractError("config: section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ContractError("config: unknown key '" + section + "." + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ContractError("config: bad value for '" + section + "." + key + "': " + j.at(key).dump());
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"preset", c.name},
              {"scales", c.scales},
              {"modules", c.modules},
              {"channels", c.channels},
              {"window", c.window},
              {"heads", c.heads},
              {"expansion", c.expansion},
              {"kappa", c.kappa},
              {"deform_kernel", c.deform_kernel},
              {"mix_kernel", c.mix_kernel},
              {"denoise", c.denoise},
              {"use_deformable_input", c.ablation.use_deformable_input},
              {"use_scem", c.ablation.use_scem},
              {"use_ltu", c.ablation.use_ltu}};
}

json to_json(const TrainConfig& c) {
  return json{{"batch_size", c.batch_size},
              {"patch_size", c.patch_size},
              {"lr", c.lr.base},
              {"lr_period_epochs", c.lr.period_epochs},
              {"steps_per_epoch", c.lr.steps_per_epoch},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"eps", c.adam.eps},
              {"weight_decay", c.adam.weight_decay},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"augment", c.augment},
              {"noise_max255", c.noise_max255},
              {"val_every", c.val_every},
              {"val_patches", c.val_patches},
              {"checkpoint_every", c.checkpoint_every},
              {"precision", c.standard_precision ? "standard" : "high"}};
}

json to_json(const LossConfig& c) {
  return json{{"alpha", c.alpha}, {"sigmas", c.sigmas}, {"k1", c.k1},
              {"k2", c.k2},       {"range", c.range},   {"scale_weights", c.scale_weights}};
}

json to_json(const Paths& p) {
  return json{{"train_dir", p.train_dir},
              {"val_dir", p.val_dir},
              {"out_dir", p.out_dir},
              {"init_checkpoint", p.init_checkpoint}};
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"loss", to_json(c.loss)},
              {"paths", to_json(c.paths)}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string s = "model";
  reject_unknown(j, s,
                 {"preset", "scales", "modules", "channels", "window", "heads", "expansion",
                  "kappa", "deform_kernel", "mix_kernel", "denoise", "use_deformable_input",
                  "use_scem", "use_ltu"});
  ModelConfig c;
  if (j.contains("preset")) {
    std::string name;
    read(j, "preset", name, s);
    c = ModelConfig::preset(name);
  }
  read(j, "scales", c.scales, s);
  read(j, "modules", c.modules, s);
  read(j, "channels", c.channels, s);
  read(j, "window", c.window, s);
  read(j, "heads", c.heads, s);
  read(j, "expansion", c.expansion, s);
  read(j, "kappa", c.kappa, s);
  read(j, "deform_kernel", c.deform_kernel, s);
  read(j, "mix_kernel", c.mix_kernel, s);
  read(j, "denoise", c.denoise, s);
  read(j, "use_deformable_input", c.ablation.use_deformable_input, s);
  read(j, "use_scem", c.ablation.use_scem, s);
  read(j, "use_ltu", c.ablation.use_ltu, s);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const std::string s = "train";
  reject_unknown(j, s,
                 {"batch_size", "patch_size", "lr", "lr_period_epochs", "steps_per_epoch", "beta1",
                  "beta2", "eps", "weight_decay", "epochs", "seed", "augment", "noise_max255",
                  "val_every", "val_patches", "checkpoint_every", "precision"});
  read(j, "batch_size", c.batch_size, s);
  read(j, "patch_size", c.patch_size, s);
  read(j, "lr", c.lr.base, s);
  read(j, "lr_period_epochs", c.lr.period_epochs, s);
  read(j, "steps_per_epoch", c.lr.steps_per_epoch, s);
  read(j, "beta1", c.adam.beta1, s);
  read(j, "beta2", c.adam.beta2, s);
  read(j, "eps", c.adam.eps, s);
  read(j, "weight_decay", c.adam.weight_decay, s);
  read(j, "epochs", c.epochs, s);
  read(j, "seed", c.seed, s);
  read(j, "augment", c.augment, s);
  read(j, "noise_max255", c.noise_max255, s);
  read(j, "val_every", c.val_every, s);
  read(j, "val_patches", c.val_patches, s);
  read(j, "checkpoint_every", c.checkpoint_every, s);
  if (j.contains("precision")) {
    std::string p;
    read(j, "precision", p, s);
    if (p != "standard" && p != "high") {
      throw ContractError("config: train.precision must be \"standard\" or \"high\"");
    }
    c.standard_precision = p == "standard";
  }
  c.validate();
  return c;
}

LossConfig loss_config_from_json(const json& j, LossConfig c) {
  const std::string s = "loss";
  reject_unknown(j, s, {"alpha", "sigmas", "k1", "k2", "range", "scale_weights"});
  read(j, "alpha", c.alpha, s);
  read(j, "sigmas", c.sigmas, s);
  read(j, "k1", c.k1, s);
  read(j, "k2", c.k2, s);
  read(j, "range", c.range, s);
  read(j, "scale_weights", c.scale_weights, s);
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ContractError("config: top level must be an object");
  reject_unknown(j, "", {"model", "train", "loss", "paths"});
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  if (j.contains("loss")) c.loss = loss_config_from_json(j["loss"]);
  if (j.contains("paths")) {
    const json& p = j["paths"];
    reject_unknown(p, "paths", {"train_dir", "val_dir", "out_dir", "init_checkpoint"});
    read(p, "train_dir", c.paths.train_dir, "paths");
    read(p, "val_dir", c.paths.val_dir, "paths");
    read(p, "out_dir", c.paths.out_dir, "paths");
    read(p, "init_checkpoint", c.paths.init_checkpoint, "paths");
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ContractError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ContractError("override '" + assignment + "' is not section.key=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json j = to_json(c);
  if (!j.contains(section)) throw ContractError("config: unknown section '" + section + "'");
  // A preset override replaces the whole model section.
  if (section == "model" && key == "preset") j["model"] = json::object();
  j[section][key] = value;
  c = run_config_from_json(j);
}

std::string dump(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace mfdp
