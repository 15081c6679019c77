#pragma once

#include <optional>
#include <string>

#include "streamdec/model.hpp"
#include "streamdec/optim.hpp"

namespace streamdec {

// Trainer bookkeeping carried across checkpoint resume.
struct TrainerState {
  std::vector<double> cb_ema;  // per-codebook CE EMA for loss weighting
  int64_t global_step = 0;
  std::string rng_state;  // mt19937_64 stream state
};

// Versioned binary container: magic + JSON header + named fp64 tensors,
// followed by optional optimizer and trainer blocks. Layout documented in
// the README.
namespace checkpoint {

void save(const std::string& path, Model& model, const AdamOptimizer* opt = nullptr,
          const TrainerState* trainer = nullptr);

Model load_model(const std::string& path);

struct Full {
  Model model;
  std::optional<OptimizerConfig> opt_config;  // caller rebuilds the optimizer
  bool has_optimizer = false;
  bool has_trainer = false;
  TrainerState trainer;
  std::string optimizer_blob;  // raw AdamOptimizer state
};
Full load_full(const std::string& path);

}  // namespace checkpoint

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace streamdec
