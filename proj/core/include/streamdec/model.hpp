#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "streamdec/attention.hpp"
#include "streamdec/graph.hpp"
#include "streamdec/rope.hpp"
#include "streamdec/ssm.hpp"
#include "streamdec/synth.hpp"
#include "streamdec/text_stream.hpp"

namespace streamdec {

struct ModelConfig {
  int d = 128;
  int shared_layers = 2;
  int group_layers = 2;
  std::vector<int> groups = {3, 2};  // partition of 1+Q codebooks, grapheme first
  int heads = 4;
  int dk = 64;
  int n_state = 8;
  int n_graphemes = 13;
  int n_codebooks = 4;
  int codebook_size = 64;
  int word_vocab = 201;
  int enr_slots = 64;
  int enr_layers = 2;
  int enr_ff_mult = 2;
  int phase_cap = 8;  // rows in the run-phase embedding
  int frame_rate = 25;
  double rope_base = 10000.0;
  double lambda_cb = 0.1;
  double cb_ema_decay = 0.9;

  void validate() const;
  int n_outputs() const { return 1 + n_codebooks; }
  int n_groups() const { return static_cast<int>(groups.size()); }
  int group_of_codebook(int cb) const;
  int head_dim() const { return dk / heads; }
  int grapheme_bos() const { return n_graphemes; }
  int code_bos() const { return codebook_size; }
  int vocab_of(int cb) const { return cb == 0 ? n_graphemes : codebook_size; }
};

struct CrossAttnParams {
  Param wq, wk, wv;  // [dk, d]
  Param wo;          // [d, dk]
  void init(int d, int dk, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensorRef>& out);
};

struct BlockParams {
  Param norm_gain;            // [d]
  Param w_in, w_gate, w_out;  // [d, d]
  SsmLayerParams ssm;
  CrossAttnParams attn;
  void init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensorRef>& out);
};

struct EncoderLayerParams {
  Param norm1, norm2;    // [d]
  CrossAttnParams attn;  // self-attention projections
  Param ff1, ff1_b;      // [ff, d], [ff]
  Param ff2, ff2_b;      // [d, ff], [d]
  void init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensorRef>& out);
};

// Output head tied to the codebook's input embedding table:
// logits[c] = emb[c] . (w_tie h) + b[c].
struct HeadParams {
  Param w_tie;  // [d, d]
  Param b;      // [vocab]
};

// Position of each frame within its grapheme run, capped.
std::vector<int> run_phases(std::span<const int> graphemes, int cap);

struct MaskSettings {
  bool enabled = false;
  int64_t r1 = 12;
  int64_t r2 = 6;
};

// Decoder stack: frame embeddings, enrollment encoder, shared + grouped
// SSM/cross-attention blocks, per-codebook output heads.
class Model {
 public:
  Model() = default;
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const RopeConfig& rope() const { return rope_; }
  std::vector<NamedTensorRef> named_params();
  int64_t param_count();

  // ---- training ----
  struct RecordLoss {
    Var loss;                   // scalar: sum_cb w_cb * meanCE_cb
    std::vector<double> cb_ce;  // unweighted mean CE per codebook
  };
  // Teacher-forced full-sequence loss for one record; full-context cross
  // attention, optionally with the dynamic text-dropout masks.
  RecordLoss build_record_loss(Graph& g, const DatasetRecord& rec,
                               std::span<const double> cb_weights,
                               const MaskSettings& masks, GraphemeAlphabet alphabet,
                               Rng& rng);

  // ---- inference ----
  Tensor encode_enrollment(const FrameSeq& enrollment) const;

  // Per-block projected memories. Text rows are appended as chunks arrive;
  // keys are stored pre-rotated by their position index.
  struct MemoryCaches {
    Tensor enr_memory;                       // [slots, d]
    std::vector<Tensor> enr_k, enr_v;        // per block [slots, dk]
    std::vector<std::vector<double>> txt_k;  // per block, [n_tok * dk]
    std::vector<std::vector<double>> txt_v;
    std::vector<int64_t> pos_ids;
    int64_t n_tokens() const { return static_cast<int64_t>(pos_ids.size()); }
  };
  void init_memory(MemoryCaches& mem, const FrameSeq& enrollment) const;
  void append_tokens(MemoryCaches& mem, std::span<const PositionedToken> tokens) const;

  struct StepStates {
    std::vector<SsmState> ssm;  // per block
    std::vector<double> x, u, s_in, s_out, z, gated, m, q, ctx, a, xg, hg, ht;
    AttnScratch attn;
    void reset(const ModelConfig& cfg);
  };

  struct StepOutput {
    std::vector<std::vector<double>> logits;  // [1+Q][vocab]
    void reset(const ModelConfig& cfg);
  };

  // One decode step. prev_phase is the previous frame's position within
  // its grapheme run (0 for the BOS sentinel). Text window is rows
  // [tok_begin, tok_end) of the caches; an empty window throws unless
  // ablate_text is set. Cost is independent of t. attn_dump, when
  // non-null, receives per-block per-head attention rows.
  void forward_step(StepStates& st, const MemoryCaches& mem, int prev_grapheme,
                    std::span<const int> prev_codes, int prev_phase, int64_t t,
                    int64_t tok_begin, int64_t tok_end, StepOutput& out,
                    std::vector<double>* attn_dump = nullptr,
                    bool ablate_text = false) const;

  size_t n_param_tensors() { return named_params().size(); }

 private:
  struct BlockVars {
    Var norm_gain, w_in, w_gate, w_out, wq, wk, wv, wo;
    SsmLayerVars ssm;
  };
  struct EncLayerVars {
    Var norm1, norm2, wq, wk, wv, wo, ff1, ff1_b, ff2, ff2_b;
  };
  struct ModelVars {
    Var emb_grapheme, emb_word, emb_phase;
    std::vector<Var> emb_acoustic;
    std::vector<EncLayerVars> enc;
    Var enc_norm_out;
    std::vector<BlockVars> blocks;
    std::vector<Var> group_norms;
    std::vector<std::pair<Var, Var>> heads;
  };
  ModelVars register_vars(Graph& g, bool with_grads) const;
  Var build_encoder(Graph& g, const ModelVars& mv, const FrameSeq& enrollment) const;
  Var embed_frame_rows(Graph& g, const ModelVars& mv, std::span<const int> graphemes,
                       const std::vector<std::vector<int>>& codes_per_cb,
                       const std::vector<int>& phases) const;

  int block_count() const { return cfg_.shared_layers + cfg_.group_layers * cfg_.n_groups(); }
  int group_block_begin(int g) const { return cfg_.shared_layers + g * cfg_.group_layers; }

  Tensor sinusoidal_posenc(int64_t rows) const;

  ModelConfig cfg_;
  RopeConfig rope_{2};

  Param emb_grapheme_;               // [n_graphemes+1, d] (+BOS row)
  std::vector<Param> emb_acoustic_;  // Q x [codebook_size+1, d]
  Param emb_word_;                   // [word_vocab, d]
  Param emb_phase_;                  // [phase_cap, d]
  std::vector<EncoderLayerParams> enc_layers_;
  Param enc_norm_out_;
  std::vector<BlockParams> blocks_;
  std::vector<Param> group_norms_;  // per group [d]
  std::vector<HeadParams> heads_;   // 1+Q
};

}  // namespace streamdec
