#include "streamdec/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "streamdec/util.hpp"

namespace streamdec {

std::vector<double> codebook_weights(const ModelConfig& cfg, const std::vector<double>& ema) {
  const int n = cfg.n_outputs();
  double mean = 0.0;
  for (double e : ema) mean += e;
  mean /= static_cast<double>(n);
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double rel = mean > 0.0 ? ema[static_cast<size_t>(i)] / mean : 1.0;
    w[static_cast<size_t>(i)] = (1.0 - cfg.lambda_cb) + cfg.lambda_cb * rel;
  }
  return w;
}

double train_step(Model& model, const Corpus& corpus,
                  std::span<const DatasetRecord* const> batch, const MaskSettings& masks,
                  AdamOptimizer& opt, TrainerState& state, Rng& rng,
                  std::vector<double>* cb_ce_out) {
  const ModelConfig& cfg = model.config();
  if (state.cb_ema.empty()) state.cb_ema.assign(static_cast<size_t>(cfg.n_outputs()), 1.0);
  const std::vector<double> weights = codebook_weights(cfg, state.cb_ema);

  auto refs = model.named_params();
  opt.zero_grads(refs);

  double loss_sum = 0.0;
  std::vector<double> cb_sum(static_cast<size_t>(cfg.n_outputs()), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const DatasetRecord* rec : batch) {
    Graph g(false);
    Model::RecordLoss rl =
        model.build_record_loss(g, *rec, weights, masks, corpus.codec.alphabet, rng);
    loss_sum += g.value(rl.loss).at(0);
    for (size_t i = 0; i < cb_sum.size(); ++i) cb_sum[i] += rl.cb_ce[i];
    g.backward(g.scale(rl.loss, inv_batch));
  }
  const double loss = loss_sum * inv_batch;
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "train: non-finite loss at optimizer step " << opt.step_count() << " (per-cb CE:";
    for (double c : cb_sum) os << " " << c * inv_batch;
    os << ")";
    throw std::runtime_error(os.str());
  }
  for (size_t i = 0; i < cb_sum.size(); ++i) {
    state.cb_ema[i] = cfg.cb_ema_decay * state.cb_ema[i] +
                      (1.0 - cfg.cb_ema_decay) * cb_sum[i] * inv_batch;
  }
  opt.step(refs);
  ++state.global_step;
  if (cb_ce_out != nullptr) {
    cb_ce_out->assign(cb_sum.begin(), cb_sum.end());
    for (double& c : *cb_ce_out) c *= inv_batch;
  }
  return loss;
}

double eval_corpus_cer(const Model& model, const Corpus& corpus, const DecodeParams& params,
                       DecodeMode mode, int max_records) {
  int64_t edits = 0, total = 0;
  const size_t n = max_records > 0
                       ? std::min<size_t>(corpus.eval.size(), static_cast<size_t>(max_records))
                       : corpus.eval.size();
  if (n == 0) throw std::invalid_argument("eval_corpus_cer: empty eval split");
  for (size_t i = 0; i < n; ++i) {
    const RecordDecode rd = decode_record(model, corpus, corpus.eval[i], params, mode);
    edits += rd.char_edits;
    total += rd.ref_chars;
  }
  return static_cast<double>(edits) / static_cast<double>(total);
}

TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                  AdamOptimizer* opt_in, TrainerState* state_in) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  if (corpus.train.empty()) throw std::invalid_argument("train: empty train split");

  AdamOptimizer local_opt(cfg.optim);
  AdamOptimizer& opt = opt_in != nullptr ? *opt_in : local_opt;
  TrainerState local_state;
  TrainerState& state = state_in != nullptr ? *state_in : local_state;

  Rng rng(mix64(cfg.seed));
  if (!state.rng_state.empty()) {
    std::istringstream is(state.rng_state);
    is >> rng;
  }

  TrainResult result;
  std::uniform_int_distribution<size_t> pick(0, corpus.train.size() - 1);
  std::vector<const DatasetRecord*> batch(static_cast<size_t>(cfg.batch_size));
  std::vector<double> cb_ce;

  for (int64_t step = opt.step_count(); step < cfg.steps; ++step) {
    for (auto& b : batch) b = &corpus.train[pick(rng)];
    const double loss = train_step(model, corpus, batch, cfg.masks, opt, state, rng, &cb_ce);
    result.final_loss = loss;
    result.final_cb_ce = cb_ce;
    result.steps_run = opt.step_count();
    if (cfg.verbose && (step % 50 == 0 || step + 1 == cfg.steps)) {
      std::printf("step %6lld  loss %.4f  lr %.2e  ce", static_cast<long long>(step), loss,
                  opt.lr_at(step));
      for (double ce : cb_ce) std::printf(" %.3f", ce);
      std::printf("\n");
      std::fflush(stdout);
    }
    if (step % 10 == 0) result.loss_history.push_back({step, loss});

    const bool last = step + 1 == cfg.steps;
    if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      const double cer = eval_corpus_cer(model, corpus, cfg.eval_decode, DecodeMode::kStream,
                                         cfg.eval_records);
      result.last_eval_cer = cer;
      if (result.best_eval_cer < 0.0 || cer < result.best_eval_cer) result.best_eval_cer = cer;
      if (cfg.verbose) {
        std::printf("step %6lld  eval CER %.4f\n", static_cast<long long>(step), cer);
        std::fflush(stdout);
      }
      if (cfg.target_cer > 0.0 && cer <= cfg.target_cer) {
        result.early_stopped = true;
        break;
      }
    }
    if (cfg.time_limit_s > 0.0 &&
        std::chrono::duration<double>(Clock::now() - start).count() > cfg.time_limit_s) {
      break;
    }
  }

  {
    std::ostringstream os;
    os << rng;
    state.rng_state = os.str();
  }
  if (!cfg.checkpoint_path.empty()) {
    checkpoint::save(cfg.checkpoint_path, model, &opt, &state);
  }
  return result;
}

}  // namespace streamdec
