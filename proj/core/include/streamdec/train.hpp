#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "streamdec/checkpoint.hpp"
#include "streamdec/model.hpp"
#include "streamdec/optim.hpp"
#include "streamdec/session.hpp"

namespace streamdec {

struct TrainConfig {
  int64_t steps = 2000;
  int batch_size = 8;
  OptimizerConfig optim;
  MaskSettings masks;
  int64_t eval_every = 200;  // 0 disables periodic eval
  int eval_records = 20;
  DecodeParams eval_decode;
  double target_cer = 0.0;    // early stop when reached (0 = never)
  double time_limit_s = 0.0;  // wall clock budget (0 = none)
  uint64_t seed = 1;
  bool verbose = true;
  std::string checkpoint_path;  // saved at the end when nonempty
};

struct TrainResult {
  double final_loss = 0.0;
  std::vector<double> final_cb_ce;
  double last_eval_cer = -1.0;
  double best_eval_cer = -1.0;
  int64_t steps_run = 0;
  bool early_stopped = false;
  std::vector<std::pair<int64_t, double>> loss_history;
};

// Teacher-forced training over the corpus train split. Per-codebook CE is
// tracked as an EMA and blended into the loss weights with lambda_cb.
// Throws on a non-finite loss. Resume state (optimizer moments, EMA, rng)
// round-trips through the checkpoint.
TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                  AdamOptimizer* opt_in = nullptr, TrainerState* state_in = nullptr);

// One optimization step on an explicit record batch; exposed for tests and
// the resume-determinism contract.
double train_step(Model& model, const Corpus& corpus,
                  std::span<const DatasetRecord* const> batch, const MaskSettings& masks,
                  AdamOptimizer& opt, TrainerState& state, Rng& rng,
                  std::vector<double>* cb_ce_out = nullptr);

// Corpus CER of the model on (a prefix of) the eval split.
double eval_corpus_cer(const Model& model, const Corpus& corpus, const DecodeParams& params,
                       DecodeMode mode, int max_records);

// w_cb = (1 - lambda_cb) + lambda_cb * ema_cb / mean(ema); weights sum to
// the number of codebooks.
std::vector<double> codebook_weights(const ModelConfig& cfg, const std::vector<double>& ema);

}  // namespace streamdec
