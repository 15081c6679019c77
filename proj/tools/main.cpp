// streamdec command line: data generation, training, offline/streaming
// decoding, guidance sweeps and ablation grids.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamdec/checkpoint.hpp"
#include "streamdec/harness.hpp"
#include "streamdec/synth.hpp"
#include "streamdec/train.hpp"
#include "streamdec/util.hpp"

using namespace streamdec;
using nlohmann::json;

namespace {

int parse_window(const std::string& s) {
  if (s == "inf" || s == "-1") return kUnbounded;
  return std::stoi(s);
}

double parse_lambda(const std::string& s) {
  if (s == "inf") return kHardGuidance;
  return std::stod(s);
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return json::parse(is);
}

void apply_decode_config(const json& j, DecodeParams& p) {
  if (j.contains("n_p")) p.n_p = j["n_p"].is_string() ? parse_window(j["n_p"].get<std::string>())
                                                      : j["n_p"].get<int>();
  if (j.contains("n_f")) p.n_f = j["n_f"].is_string() ? parse_window(j["n_f"].get<std::string>())
                                                      : j["n_f"].get<int>();
  if (j.contains("lambda")) {
    p.lambda = j["lambda"].is_string() ? parse_lambda(j["lambda"].get<std::string>())
                                       : j["lambda"].get<double>();
  }
  if (j.contains("top_k")) p.top_k = j["top_k"].get<int>();
  if (j.contains("greedy")) p.greedy = j["greedy"].get<bool>();
  if (j.contains("seed")) p.seed = j["seed"].get<uint64_t>();
}

ModelConfig model_config_for(const Corpus& corpus, const json& overrides) {
  ModelConfig mc;
  GraphemeAlphabet alphabet{corpus.config.n_letters};
  mc.n_graphemes = alphabet.n_ids();
  mc.n_codebooks = corpus.config.n_codebooks;
  mc.codebook_size = corpus.config.codebook_size;
  mc.word_vocab = corpus.vocab.n_tokens();
  mc.frame_rate = corpus.config.frame_rate;
  if (overrides.contains("d")) mc.d = overrides["d"].get<int>();
  if (overrides.contains("shared_layers")) mc.shared_layers = overrides["shared_layers"].get<int>();
  if (overrides.contains("group_layers")) mc.group_layers = overrides["group_layers"].get<int>();
  if (overrides.contains("groups")) mc.groups = overrides["groups"].get<std::vector<int>>();
  if (overrides.contains("heads")) mc.heads = overrides["heads"].get<int>();
  if (overrides.contains("dk")) mc.dk = overrides["dk"].get<int>();
  if (overrides.contains("n_state")) mc.n_state = overrides["n_state"].get<int>();
  if (overrides.contains("enr_layers")) mc.enr_layers = overrides["enr_layers"].get<int>();
  if (overrides.contains("enr_slots")) mc.enr_slots = overrides["enr_slots"].get<int>();
  if (overrides.contains("lambda_cb")) mc.lambda_cb = overrides["lambda_cb"].get<double>();
  mc.validate();
  return mc;
}

int cmd_synth_data(CLI::App& app) {
  auto cfg = std::make_shared<CorpusConfig>();
  auto out_dir = std::make_shared<std::string>("data");
  app.add_option("--out", *out_dir, "output directory");
  app.add_option("--records", cfg->n_train, "train records");
  app.add_option("--eval-records", cfg->n_eval, "eval records");
  app.add_option("--vocab", cfg->vocab_words, "word vocabulary size");
  app.add_option("--lmin", cfg->l_min, "min chunk length (words)");
  app.add_option("--lmax", cfg->l_max, "max chunk length (words)");
  app.add_option("--letters", cfg->n_letters, "grapheme letters");
  app.add_option("--codebooks", cfg->n_codebooks, "acoustic codebooks");
  app.add_option("--codebook-size", cfg->codebook_size, "codes per codebook");
  app.add_option("--protos", cfg->n_protos, "speaker prototype tables");
  app.add_option("--words-min", cfg->words_min, "min words per record");
  app.add_option("--words-max", cfg->words_max, "max words per record");
  app.add_option("--train-speakers", cfg->n_train_speakers, "train speaker pool");
  app.add_option("--eval-speakers", cfg->n_eval_speakers, "eval speaker pool");
  app.add_option("--seed", cfg->seed, "rng seed");
  app.callback([cfg, out_dir]() {
    const Corpus corpus = gen_corpus(*cfg);
    write_corpus(corpus, *out_dir);
    std::cout << "wrote " << corpus.train.size() << " train / " << corpus.eval.size()
              << " eval records to " << *out_dir << " (config hash "
              << corpus_config_hash(*cfg) << ")\n";
  });
  return 0;
}

struct TrainCli {
  std::string data = "data";
  std::string out = "model.ckpt";
  std::string resume;
  std::string config_file;
  TrainConfig tc;
  bool masks = false;
};

int cmd_train(CLI::App& app) {
  auto c = std::make_shared<TrainCli>();
  c->tc.optim.peak_lr = 3e-4;
  c->tc.optim.warmup_steps = 500;
  app.add_option("--data", c->data, "dataset directory");
  app.add_option("--out", c->out, "checkpoint path");
  app.add_option("--resume", c->resume, "resume from checkpoint");
  app.add_option("--config", c->config_file, "JSON config (model/train sections)");
  app.add_option("--steps", c->tc.steps, "optimizer steps");
  app.add_option("--batch", c->tc.batch_size, "records per step");
  app.add_option("--lr", c->tc.optim.peak_lr, "peak learning rate");
  app.add_option("--warmup", c->tc.optim.warmup_steps, "warmup steps");
  app.add_option("--eval-every", c->tc.eval_every, "steps between eval CER probes");
  app.add_option("--eval-records", c->tc.eval_records, "records per eval probe");
  app.add_option("--target-cer", c->tc.target_cer, "early-stop CER");
  app.add_option("--time-limit", c->tc.time_limit_s, "wall-clock budget (s)");
  app.add_option("--seed", c->tc.seed, "rng seed");
  app.add_flag("--masks", c->masks, "enable dynamic text-dropout masks");
  app.add_option("--mask-r1", c->tc.masks.r1, "mask core lookback (keys)");
  app.add_option("--mask-r2", c->tc.masks.r2, "mask core lookahead (keys)");
  app.callback([c]() {
    json overrides = json::object();
    if (!c->config_file.empty()) {
      const json j = load_json_file(c->config_file);
      if (j.contains("model")) overrides = j["model"];
      if (j.contains("train")) {
        const json& t = j["train"];
        if (t.contains("steps")) c->tc.steps = t["steps"].get<int64_t>();
        if (t.contains("batch")) c->tc.batch_size = t["batch"].get<int>();
        if (t.contains("lr")) c->tc.optim.peak_lr = t["lr"].get<double>();
        if (t.contains("warmup")) c->tc.optim.warmup_steps = t["warmup"].get<int64_t>();
        if (t.contains("masks")) c->masks = t["masks"].get<bool>();
        if (t.contains("mask_r1")) c->tc.masks.r1 = t["mask_r1"].get<int64_t>();
        if (t.contains("mask_r2")) c->tc.masks.r2 = t["mask_r2"].get<int64_t>();
        if (t.contains("seed")) c->tc.seed = t["seed"].get<uint64_t>();
      }
      if (j.contains("decode")) apply_decode_config(j["decode"], c->tc.eval_decode);
    }
    c->tc.masks.enabled = c->masks;
    c->tc.checkpoint_path = c->out;
    const Corpus corpus = load_corpus(c->data);

    if (!c->resume.empty()) {
      checkpoint::Full full = checkpoint::load_full(c->resume);
      AdamOptimizer opt(c->tc.optim);
      if (full.has_optimizer) {
        std::istringstream is(full.optimizer_blob);
        auto refs = full.model.named_params();
        opt.load_state(is, refs);
      }
      const TrainResult r = train(full.model, corpus, c->tc, &opt, &full.trainer);
      std::cout << "resumed training: " << r.steps_run << " total steps, loss "
                << r.final_loss << ", eval CER " << r.last_eval_cer << "\n";
      return;
    }
    Model model(model_config_for(corpus, overrides), c->tc.seed);
    std::cout << "model parameters: " << model.param_count() << "\n";
    const TrainResult r = train(model, corpus, c->tc);
    std::cout << "trained " << r.steps_run << " steps, loss " << r.final_loss
              << ", eval CER " << r.last_eval_cer << " -> " << c->out << "\n";
  });
  return 0;
}

struct DecodeCli {
  std::string ckpt = "model.ckpt";
  std::string data = "data";
  std::string mode = "stream";
  std::string np = "4", nf = "2", lambda = "1";
  std::string out;
  std::string attn_out;
  std::string config_file;
  DecodeRunConfig cfg;
  std::string criterion = "cer";
  bool summary_only = false;
};

void add_decode_options(CLI::App& app, std::shared_ptr<DecodeCli> c) {
  app.add_option("--ckpt", c->ckpt, "checkpoint path");
  app.add_option("--data", c->data, "dataset directory");
  app.add_option("--mode", c->mode, "offline|stream");
  app.add_option("--np", c->np, "past chunks in window (int or inf)");
  app.add_option("--nf", c->nf, "future chunks in window (int or inf)");
  app.add_option("--lambda", c->lambda, "guidance coefficient (float or inf)");
  app.add_option("--topk", c->cfg.params.top_k, "top-k for grapheme sampling");
  app.add_flag("--greedy", c->cfg.params.greedy, "argmax decoding, guidance off");
  app.add_option("--n-samples", c->cfg.n_samples, "N-time sampling (offline only)");
  app.add_option("--criterion", c->criterion, "cer|prob selection for N-time sampling");
  app.add_option("--records", c->cfg.max_records, "limit eval records (0 = all)");
  app.add_option("--seed", c->cfg.params.seed, "rng seed");
  app.add_option("--config", c->config_file, "JSON config (decode section)");
}

void run_decode_cli(DecodeCli& c, bool per_record) {
  if (!c.config_file.empty()) {
    const json j = load_json_file(c.config_file);
    if (j.contains("decode")) apply_decode_config(j["decode"], c.cfg.params);
  }
  c.cfg.params.n_p = parse_window(c.np);
  c.cfg.params.n_f = parse_window(c.nf);
  c.cfg.params.lambda = parse_lambda(c.lambda);
  c.cfg.mode = c.mode == "offline" ? DecodeMode::kOffline : DecodeMode::kStream;
  c.cfg.criterion =
      c.criterion == "prob" ? SelectionCriterion::kProbability : SelectionCriterion::kCer;
  c.cfg.params.dump_attention = !c.attn_out.empty();

  const Model model = checkpoint::load_model(c.ckpt);
  const Corpus corpus = load_corpus(c.data, /*load_train=*/false);

  std::ofstream per_record_os, attn_os;
  std::ostream* per_record_ptr = nullptr;
  std::ostream* attn_ptr = nullptr;
  if (per_record && !c.out.empty()) {
    per_record_os.open(c.out);
    per_record_ptr = &per_record_os;
  }
  if (!c.attn_out.empty()) {
    attn_os.open(c.attn_out);
    attn_ptr = &attn_os;
  }
  const CorpusEvalResult res = run_decode(model, corpus, c.cfg, per_record_ptr, attn_ptr);
  json summary;
  summary["records"] = res.records;
  summary["cer"] = res.cer;
  summary["wer"] = res.wer;
  summary["eos_missed"] = res.eos_missed;
  summary["mean_abs_lag"] = res.mean_abs_lag;
  summary["max_abs_lag"] = res.max_abs_lag;
  summary["p50_step_ms"] = res.p50_step_ms;
  summary["flatness"] = res.mean_flatness;
  std::cout << summary.dump(2) << "\n";
}

int cmd_decode(CLI::App& app) {
  auto c = std::make_shared<DecodeCli>();
  add_decode_options(app, c);
  app.add_option("--out", c->out, "per-record results (jsonl)");
  app.add_option("--dump-attention", c->attn_out, "attention weight log (jsonl)");
  app.callback([c]() { run_decode_cli(*c, true); });
  return 0;
}

int cmd_eval(CLI::App& app) {
  auto c = std::make_shared<DecodeCli>();
  add_decode_options(app, c);
  app.callback([c]() { run_decode_cli(*c, false); });
  return 0;
}

struct StreamCli {
  std::string ckpt = "model.ckpt";
  std::string data = "data";
  std::string np = "4", nf = "2", lambda = "1";
  int enrollment_record = 0;
  DecodeParams params;
  bool pace = false;
};

int cmd_stream(CLI::App& app) {
  auto c = std::make_shared<StreamCli>();
  app.add_option("--ckpt", c->ckpt, "checkpoint path");
  app.add_option("--data", c->data, "dataset directory (vocab/codec metadata)");
  app.add_option("--np", c->np, "past chunks (int or inf)");
  app.add_option("--nf", c->nf, "future chunks (int or inf)");
  app.add_option("--lambda", c->lambda, "guidance coefficient");
  app.add_option("--topk", c->params.top_k, "top-k");
  app.add_flag("--greedy", c->params.greedy, "argmax decoding");
  app.add_option("--seed", c->params.seed, "rng seed");
  app.add_option("--enrollment-record", c->enrollment_record,
                 "eval record supplying default enrollment");
  app.add_flag("--pace", c->pace, "replay arrivals on the wall clock");
  app.callback([c]() {
    c->params.n_p = parse_window(c->np);
    c->params.n_f = parse_window(c->nf);
    c->params.lambda = parse_lambda(c->lambda);
    const Model model = checkpoint::load_model(c->ckpt);
    const Corpus corpus = load_corpus(c->data, /*load_train=*/false);
    if (corpus.eval.empty()) throw std::runtime_error("stream: eval split empty");
    const FrameSeq& enr =
        corpus.eval[static_cast<size_t>(c->enrollment_record) % corpus.eval.size()].enrollment;
    run_stream_io(model, corpus, c->params, enr, std::cin, std::cout, c->pace);
  });
  return 0;
}

struct AblateCli {
  std::string ckpt = "model.ckpt";
  std::string data = "data";
  std::string grid_file;
  std::string out;
  int records = 0;
  uint64_t seed = 0;
};

int cmd_ablate(CLI::App& app) {
  auto c = std::make_shared<AblateCli>();
  app.add_option("--ckpt", c->ckpt, "checkpoint path");
  app.add_option("--data", c->data, "dataset directory");
  app.add_option("--grid", c->grid_file, "grid JSON file");
  app.add_option("--out", c->out, "TSV output path");
  app.add_option("--records", c->records, "limit eval records");
  app.add_option("--seed", c->seed, "rng seed");
  app.callback([c]() {
    json grid;
    if (!c->grid_file.empty()) {
      grid = load_json_file(c->grid_file);
    } else {
      grid = json::parse(R"({"chunk": [[2,4]], "window": [[4,0],[4,1],[4,2]],
                            "lambda": [0,1], "k": [5]})");
    }
    std::vector<AblateCell> cells;
    for (const auto& ch : grid.at("chunk")) {
      for (const auto& w : grid.at("window")) {
        for (const auto& l : grid.at("lambda")) {
          for (const auto& k : grid.at("k")) {
            AblateCell cell;
            cell.l_min = ch.at(0).get<int>();
            cell.l_max = ch.at(1).get<int>();
            cell.n_p = w.at(0).is_string() ? parse_window(w.at(0).get<std::string>())
                                           : w.at(0).get<int>();
            cell.n_f = w.at(1).get<int>();
            cell.lambda = l.is_string() ? parse_lambda(l.get<std::string>()) : l.get<double>();
            cell.k = k.get<int>();
            cells.push_back(cell);
          }
        }
      }
    }
    const Model model = checkpoint::load_model(c->ckpt);
    const Corpus corpus = load_corpus(c->data, /*load_train=*/false);
    DecodeRunConfig base;
    base.mode = DecodeMode::kStream;
    base.max_records = c->records;
    base.params.seed = c->seed;
    const auto rows = run_ablate(model, corpus, cells, base);
    const std::string table = ablate_table(rows);
    std::cout << table;
    if (!c->out.empty()) {
      std::ofstream os(c->out);
      os << table;
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streamdec: chunk-synchronized streaming sequence generation"};
  app.require_subcommand(1);

  cmd_synth_data(*app.add_subcommand("synth-data", "generate the synthetic corpus"));
  cmd_train(*app.add_subcommand("train", "train a model"));
  cmd_decode(*app.add_subcommand("decode", "decode the eval split and report metrics"));
  cmd_eval(*app.add_subcommand("eval", "metrics summary only"));
  cmd_stream(*app.add_subcommand("stream", "ndjson chunk events in, frame events out"));
  cmd_ablate(*app.add_subcommand("ablate", "run a decode grid and print a table"));

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
