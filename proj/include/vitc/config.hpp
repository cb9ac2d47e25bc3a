#pragma once

#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "vitc/extraction.hpp"
#include "vitc/flops.hpp"
#include "vitc/optimizer.hpp"
#include "vitc/trainer.hpp"

// Run configuration: a human-editable JSON file with strict schema
// validation (unknown keys and type mismatches are errors) and defaults
// matching the desk-scale toy model.

namespace vitc {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "folder"
  std::string path;                  // class-per-directory root for "folder"
  int64_t per_class = 200;
};

struct RunConfig {
  ViTConfig model;        // defaults: 32x32/patch 8, D=64, H=4, L=4, mlp 4, 10 classes
  DataConfig data;
  TrainOptions dense;     // dense baseline phase
  HyperParams compress;   // budget-constrained phase (budget filled from fraction)
  FinetuneOptions finetune;
  double budget_fraction = 0.5;  // of the dense model's FLOPs
  std::string out_dir = "out";
  uint64_t seed = 0;
  int precision = 32;

  static RunConfig defaults() {
    RunConfig rc;
    rc.dense.epochs = 30;
    rc.dense.lr = 0.05;
    rc.compress.epochs = 16;
    rc.finetune.epochs = 8;
    return rc;
  }

  double resolved_budget() const { return budget_fraction * flops_dense(model); }

  void validate() const {
    model.validate();
    if (data.source != "synthetic" && data.source != "folder")
      throw std::invalid_argument("config: data.source must be 'synthetic' or 'folder'");
    if (data.source == "folder" && !std::filesystem::is_directory(data.path))
      throw std::invalid_argument("config: data.path is not a directory: " + data.path);
    if (data.source == "synthetic" && data.per_class <= 0)
      throw std::invalid_argument("config: data.per_class must be positive");
    if (budget_fraction <= 0.0 || budget_fraction > 1.0)
      throw std::invalid_argument("config: budget_fraction must lie in (0, 1]");
    if (precision != 32 && precision != 64)
      throw std::invalid_argument("config: precision must be 32 or 64");
    if (dense.epochs < 0 || finetune.epochs < 0)
      throw std::invalid_argument("config: epoch counts must be nonnegative");
    if (compress.lambda < 0 || finetune.lambda < 0)
      throw std::invalid_argument("config: lambda must be nonnegative");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = {{"image_size", model.image_size}, {"patch_size", model.patch_size},
                  {"channels", model.channels},     {"embed_dim", model.embed_dim},
                  {"num_blocks", model.num_blocks}, {"num_heads", model.num_heads},
                  {"mlp_ratio", model.mlp_ratio},   {"num_classes", model.num_classes}};
    j["data"] = {{"source", data.source}, {"path", data.path}, {"per_class", data.per_class}};
    j["dense"] = {{"epochs", dense.epochs},
                  {"batch_size", dense.batch_size},
                  {"lr", dense.lr},
                  {"momentum", dense.momentum},
                  {"cosine_decay", dense.cosine_decay}};
    j["compress"] = {{"epochs", compress.epochs},
                     {"batch_size", compress.batch_size},
                     {"lr_w", compress.lr_w},
                     {"momentum", compress.momentum},
                     {"lr_s", compress.lr_s},
                     {"lr_r", compress.lr_r},
                     {"lr_gate", compress.lr_gate},
                     {"lr_y", compress.lr_y},
                     {"lr_p", compress.lr_p},
                     {"lr_z", compress.lr_z},
                     {"lambda", compress.lambda},
                     {"z_rate_milestones", compress.z_rate_milestones},
                     {"z_rate_factors", compress.z_rate_factors},
                     {"tau_start", compress.tau_start},
                     {"tau_end", compress.tau_end},
                     {"enable_gating", compress.enable_gating},
                     {"enable_pruning", compress.enable_pruning},
                     {"cosine_w_decay", compress.cosine_w_decay}};
    j["finetune"] = {{"epochs", finetune.epochs},
                     {"batch_size", finetune.batch_size},
                     {"lr", finetune.lr},
                     {"momentum", finetune.momentum},
                     {"lambda", finetune.lambda},
                     {"cosine_decay", finetune.cosine_decay}};
    j["budget_fraction"] = budget_fraction;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["precision"] = precision;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j);
};

namespace detail {

inline void require_known_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                               const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& where, const std::string& key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument("config: bad type for '" + where + key + "'");
  }
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig rc = RunConfig::defaults();
  detail::require_known_keys(
      j, {"model", "data", "dense", "compress", "finetune", "budget_fraction", "out_dir", "seed", "precision"},
      "");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::require_known_keys(m,
                               {"image_size", "patch_size", "channels", "embed_dim", "num_blocks",
                                "num_heads", "mlp_ratio", "num_classes"},
                               "model.");
    detail::read_field(m, "model.", "image_size", rc.model.image_size);
    detail::read_field(m, "model.", "patch_size", rc.model.patch_size);
    detail::read_field(m, "model.", "channels", rc.model.channels);
    detail::read_field(m, "model.", "embed_dim", rc.model.embed_dim);
    detail::read_field(m, "model.", "num_blocks", rc.model.num_blocks);
    detail::read_field(m, "model.", "num_heads", rc.model.num_heads);
    detail::read_field(m, "model.", "mlp_ratio", rc.model.mlp_ratio);
    detail::read_field(m, "model.", "num_classes", rc.model.num_classes);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::require_known_keys(d, {"source", "path", "per_class"}, "data.");
    detail::read_field(d, "data.", "source", rc.data.source);
    detail::read_field(d, "data.", "path", rc.data.path);
    detail::read_field(d, "data.", "per_class", rc.data.per_class);
  }
  if (j.contains("dense")) {
    const auto& d = j.at("dense");
    detail::require_known_keys(d, {"epochs", "batch_size", "lr", "momentum", "cosine_decay"}, "dense.");
    detail::read_field(d, "dense.", "epochs", rc.dense.epochs);
    detail::read_field(d, "dense.", "batch_size", rc.dense.batch_size);
    detail::read_field(d, "dense.", "lr", rc.dense.lr);
    detail::read_field(d, "dense.", "momentum", rc.dense.momentum);
    detail::read_field(d, "dense.", "cosine_decay", rc.dense.cosine_decay);
  }
  if (j.contains("compress")) {
    const auto& c = j.at("compress");
    detail::require_known_keys(
        c, {"epochs", "batch_size", "lr_w", "momentum", "lr_s", "lr_r", "lr_gate", "lr_y", "lr_p", "lr_z",
            "lambda", "z_rate_milestones", "z_rate_factors", "tau_start", "tau_end", "enable_gating",
            "enable_pruning", "cosine_w_decay"},
        "compress.");
    detail::read_field(c, "compress.", "epochs", rc.compress.epochs);
    detail::read_field(c, "compress.", "batch_size", rc.compress.batch_size);
    detail::read_field(c, "compress.", "lr_w", rc.compress.lr_w);
    detail::read_field(c, "compress.", "momentum", rc.compress.momentum);
    detail::read_field(c, "compress.", "lr_s", rc.compress.lr_s);
    detail::read_field(c, "compress.", "lr_r", rc.compress.lr_r);
    detail::read_field(c, "compress.", "lr_gate", rc.compress.lr_gate);
    detail::read_field(c, "compress.", "lr_y", rc.compress.lr_y);
    detail::read_field(c, "compress.", "lr_p", rc.compress.lr_p);
    detail::read_field(c, "compress.", "lr_z", rc.compress.lr_z);
    detail::read_field(c, "compress.", "lambda", rc.compress.lambda);
    detail::read_field(c, "compress.", "z_rate_milestones", rc.compress.z_rate_milestones);
    detail::read_field(c, "compress.", "z_rate_factors", rc.compress.z_rate_factors);
    detail::read_field(c, "compress.", "tau_start", rc.compress.tau_start);
    detail::read_field(c, "compress.", "tau_end", rc.compress.tau_end);
    detail::read_field(c, "compress.", "enable_gating", rc.compress.enable_gating);
    detail::read_field(c, "compress.", "enable_pruning", rc.compress.enable_pruning);
    detail::read_field(c, "compress.", "cosine_w_decay", rc.compress.cosine_w_decay);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    detail::require_known_keys(f, {"epochs", "batch_size", "lr", "momentum", "lambda", "cosine_decay"},
                               "finetune.");
    detail::read_field(f, "finetune.", "epochs", rc.finetune.epochs);
    detail::read_field(f, "finetune.", "batch_size", rc.finetune.batch_size);
    detail::read_field(f, "finetune.", "lr", rc.finetune.lr);
    detail::read_field(f, "finetune.", "momentum", rc.finetune.momentum);
    detail::read_field(f, "finetune.", "lambda", rc.finetune.lambda);
    detail::read_field(f, "finetune.", "cosine_decay", rc.finetune.cosine_decay);
  }
  detail::read_field(j, "", "budget_fraction", rc.budget_fraction);
  detail::read_field(j, "", "out_dir", rc.out_dir);
  detail::read_field(j, "", "seed", rc.seed);
  detail::read_field(j, "", "precision", rc.precision);
  rc.validate();
  return rc;
}

// dataset construction shared by the CLI commands
inline Dataset load_dataset(const RunConfig& rc) {
  if (rc.data.source == "synthetic")
    return synth_dataset(rc.model.num_classes, rc.data.per_class, rc.model.image_size, rc.seed,
                         rc.model.channels);
  Dataset d = load_image_folder(rc.data.path, rc.model.image_size, rc.model.channels);
  if (d.num_classes != rc.model.num_classes)
    throw std::invalid_argument("config: folder has " + std::to_string(d.num_classes) +
                                " classes but the model expects " + std::to_string(rc.model.num_classes));
  return d;
}

}  // namespace vitc
