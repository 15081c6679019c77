#include "streamdec/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "streamdec/guidance.hpp"
#include "streamdec/util.hpp"

namespace streamdec {

void ModelConfig::validate() const {
  if (d < 2 || heads < 1 || dk < heads) throw std::invalid_argument("ModelConfig: bad dims");
  if (dk % heads != 0) throw std::invalid_argument("ModelConfig: dk must divide into heads");
  if ((dk / heads) % 2 != 0) throw std::invalid_argument("ModelConfig: head_dim must be even");
  int total = 0;
  for (int g : groups) {
    if (g < 1) throw std::invalid_argument("ModelConfig: empty codebook group");
    total += g;
  }
  if (total != 1 + n_codebooks) {
    throw std::invalid_argument("ModelConfig: groups must partition 1+Q codebooks");
  }
  if (shared_layers < 0 || group_layers < 0 || n_state < 1 || enr_slots < 1) {
    throw std::invalid_argument("ModelConfig: bad layer counts");
  }
}

int ModelConfig::group_of_codebook(int cb) const {
  int acc = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    acc += groups[g];
    if (cb < acc) return static_cast<int>(g);
  }
  throw std::out_of_range("group_of_codebook");
}

void CrossAttnParams::init(int d, int dk, Rng& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_out = 1.0 / std::sqrt(static_cast<double>(dk));
  wq.init({dk, d}, s_in, rng);
  wk.init({dk, d}, s_in, rng);
  wv.init({dk, d}, s_in, rng);
  wo.init({d, dk}, s_out, rng);
}

void CrossAttnParams::collect(const std::string& prefix, std::vector<NamedTensorRef>& out) {
  out.push_back({prefix + ".wq", &wq.value, &wq.grad});
  out.push_back({prefix + ".wk", &wk.value, &wk.grad});
  out.push_back({prefix + ".wv", &wv.value, &wv.grad});
  out.push_back({prefix + ".wo", &wo.value, &wo.grad});
}

void BlockParams::init(const ModelConfig& cfg, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  norm_gain.value = Tensor({cfg.d}, 1.0);
  norm_gain.grad = Tensor({cfg.d});
  w_in.init({cfg.d, cfg.d}, s, rng);
  w_gate.init({cfg.d, cfg.d}, s, rng);
  w_out.init({cfg.d, cfg.d}, s, rng);
  ssm.init(cfg.d, cfg.n_state, rng);
  attn.init(cfg.d, cfg.dk, rng);
}

void BlockParams::collect(const std::string& prefix, std::vector<NamedTensorRef>& out) {
  out.push_back({prefix + ".norm", &norm_gain.value, &norm_gain.grad});
  out.push_back({prefix + ".w_in", &w_in.value, &w_in.grad});
  out.push_back({prefix + ".w_gate", &w_gate.value, &w_gate.grad});
  out.push_back({prefix + ".w_out", &w_out.value, &w_out.grad});
  ssm.collect(prefix + ".ssm", out);
  attn.collect(prefix + ".attn", out);
}

void EncoderLayerParams::init(const ModelConfig& cfg, Rng& rng) {
  const int ff = cfg.d * cfg.enr_ff_mult;
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(ff));
  norm1.value = Tensor({cfg.d}, 1.0);
  norm1.grad = Tensor({cfg.d});
  norm2.value = Tensor({cfg.d}, 1.0);
  norm2.grad = Tensor({cfg.d});
  attn.init(cfg.d, cfg.dk, rng);
  ff1.init({ff, cfg.d}, s, rng);
  ff1_b.init({ff}, 0.0, rng);
  ff2.init({cfg.d, ff}, s_ff, rng);
  ff2_b.init({cfg.d}, 0.0, rng);
}

void EncoderLayerParams::collect(const std::string& prefix, std::vector<NamedTensorRef>& out) {
  out.push_back({prefix + ".norm1", &norm1.value, &norm1.grad});
  out.push_back({prefix + ".norm2", &norm2.value, &norm2.grad});
  attn.collect(prefix + ".attn", out);
  out.push_back({prefix + ".ff1", &ff1.value, &ff1.grad});
  out.push_back({prefix + ".ff1_b", &ff1_b.value, &ff1_b.grad});
  out.push_back({prefix + ".ff2", &ff2.value, &ff2.grad});
  out.push_back({prefix + ".ff2_b", &ff2_b.value, &ff2_b.grad});
}

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), rope_(2) {
  cfg_.validate();
  rope_ = RopeConfig(cfg_.head_dim(), cfg_.rope_base);
  Rng rng(mix64(seed));
  const double emb_std = 0.05;
  emb_grapheme_.init({cfg_.n_graphemes + 1, cfg_.d}, emb_std, rng);
  emb_acoustic_.resize(static_cast<size_t>(cfg_.n_codebooks));
  for (auto& e : emb_acoustic_) e.init({cfg_.codebook_size + 1, cfg_.d}, emb_std, rng);
  emb_word_.init({cfg_.word_vocab, cfg_.d}, emb_std, rng);
  emb_phase_.init({cfg_.phase_cap, cfg_.d}, emb_std, rng);
  enc_layers_.resize(static_cast<size_t>(cfg_.enr_layers));
  for (auto& l : enc_layers_) l.init(cfg_, rng);
  enc_norm_out_.value = Tensor({cfg_.d}, 1.0);
  enc_norm_out_.grad = Tensor({cfg_.d});
  blocks_.resize(static_cast<size_t>(block_count()));
  for (auto& b : blocks_) b.init(cfg_, rng);
  group_norms_.resize(static_cast<size_t>(cfg_.n_groups()));
  for (auto& gn : group_norms_) {
    gn.value = Tensor({cfg_.d}, 1.0);
    gn.grad = Tensor({cfg_.d});
  }
  const double head_std = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
  heads_.resize(static_cast<size_t>(cfg_.n_outputs()));
  for (int cb = 0; cb < cfg_.n_outputs(); ++cb) {
    heads_[static_cast<size_t>(cb)].w_tie.init({cfg_.d, cfg_.d}, head_std, rng);
    heads_[static_cast<size_t>(cb)].b.init({cfg_.vocab_of(cb)}, 0.0, rng);
  }
}

std::vector<NamedTensorRef> Model::named_params() {
  std::vector<NamedTensorRef> out;
  auto put = [&](const std::string& name, Param& p) {
    out.push_back({name, &p.value, &p.grad});
  };
  put("emb.grapheme", emb_grapheme_);
  for (size_t q = 0; q < emb_acoustic_.size(); ++q) {
    put("emb.acoustic" + std::to_string(q), emb_acoustic_[q]);
  }
  put("emb.word", emb_word_);
  put("emb.phase", emb_phase_);
  for (size_t l = 0; l < enc_layers_.size(); ++l) {
    const std::string p = "enc." + std::to_string(l);
    auto& el = enc_layers_[l];
    put(p + ".norm1", el.norm1);
    put(p + ".norm2", el.norm2);
    put(p + ".attn.wq", el.attn.wq);
    put(p + ".attn.wk", el.attn.wk);
    put(p + ".attn.wv", el.attn.wv);
    put(p + ".attn.wo", el.attn.wo);
    put(p + ".ff1", el.ff1);
    put(p + ".ff1_b", el.ff1_b);
    put(p + ".ff2", el.ff2);
    put(p + ".ff2_b", el.ff2_b);
  }
  put("enc.norm_out", enc_norm_out_);
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block." + std::to_string(b);
    auto& bl = blocks_[b];
    put(p + ".norm", bl.norm_gain);
    put(p + ".w_in", bl.w_in);
    put(p + ".w_gate", bl.w_gate);
    put(p + ".w_out", bl.w_out);
    put(p + ".ssm.a_log", bl.ssm.a_log);
    put(p + ".ssm.w_delta", bl.ssm.w_delta);
    put(p + ".ssm.b_delta", bl.ssm.b_delta);
    put(p + ".ssm.w_b", bl.ssm.w_b);
    put(p + ".ssm.b_b", bl.ssm.b_b);
    put(p + ".ssm.w_c", bl.ssm.w_c);
    put(p + ".ssm.b_c", bl.ssm.b_c);
    put(p + ".ssm.skip", bl.ssm.skip);
    put(p + ".attn.wq", bl.attn.wq);
    put(p + ".attn.wk", bl.attn.wk);
    put(p + ".attn.wv", bl.attn.wv);
    put(p + ".attn.wo", bl.attn.wo);
  }
  for (size_t gn = 0; gn < group_norms_.size(); ++gn) {
    put("group_norm." + std::to_string(gn), group_norms_[gn]);
  }
  for (size_t cb = 0; cb < heads_.size(); ++cb) {
    put("head." + std::to_string(cb) + ".w_tie", heads_[cb].w_tie);
    put("head." + std::to_string(cb) + ".b", heads_[cb].b);
  }
  return out;
}

int64_t Model::param_count() {
  int64_t n = 0;
  for (const auto& r : named_params()) n += r.value->numel();
  return n;
}

Model::ModelVars Model::register_vars(Graph& g, bool with_grads) const {
  auto reg = [&](const Param& p) {
    return with_grads ? g.leaf(p.value, &p.grad) : g.constant_ref(p.value);
  };
  ModelVars mv;
  mv.emb_grapheme = reg(emb_grapheme_);
  for (const auto& e : emb_acoustic_) mv.emb_acoustic.push_back(reg(e));
  mv.emb_word = reg(emb_word_);
  mv.emb_phase = reg(emb_phase_);
  for (const auto& el : enc_layers_) {
    EncLayerVars ev;
    ev.norm1 = reg(el.norm1);
    ev.norm2 = reg(el.norm2);
    ev.wq = reg(el.attn.wq);
    ev.wk = reg(el.attn.wk);
    ev.wv = reg(el.attn.wv);
    ev.wo = reg(el.attn.wo);
    ev.ff1 = reg(el.ff1);
    ev.ff1_b = reg(el.ff1_b);
    ev.ff2 = reg(el.ff2);
    ev.ff2_b = reg(el.ff2_b);
    mv.enc.push_back(ev);
  }
  mv.enc_norm_out = reg(enc_norm_out_);
  for (const auto& bl : blocks_) {
    BlockVars bv;
    bv.norm_gain = reg(bl.norm_gain);
    bv.w_in = reg(bl.w_in);
    bv.w_gate = reg(bl.w_gate);
    bv.w_out = reg(bl.w_out);
    bv.ssm.a_log = reg(bl.ssm.a_log);
    bv.ssm.w_delta = reg(bl.ssm.w_delta);
    bv.ssm.b_delta = reg(bl.ssm.b_delta);
    bv.ssm.w_b = reg(bl.ssm.w_b);
    bv.ssm.b_b = reg(bl.ssm.b_b);
    bv.ssm.w_c = reg(bl.ssm.w_c);
    bv.ssm.b_c = reg(bl.ssm.b_c);
    bv.ssm.skip = reg(bl.ssm.skip);
    bv.wq = reg(bl.attn.wq);
    bv.wk = reg(bl.attn.wk);
    bv.wv = reg(bl.attn.wv);
    bv.wo = reg(bl.attn.wo);
    mv.blocks.push_back(bv);
  }
  for (const auto& gn : group_norms_) mv.group_norms.push_back(reg(gn));
  for (const auto& h : heads_) mv.heads.push_back({reg(h.w_tie), reg(h.b)});
  return mv;
}

Tensor Model::sinusoidal_posenc(int64_t rows) const {
  Tensor pe({rows, cfg_.d});
  for (int64_t p = 0; p < rows; ++p) {
    for (int i = 0; i < cfg_.d / 2; ++i) {
      const double w = std::pow(10000.0, -2.0 * i / static_cast<double>(cfg_.d));
      pe.at(p, 2 * i) = std::sin(static_cast<double>(p) * w);
      if (2 * i + 1 < cfg_.d) pe.at(p, 2 * i + 1) = std::cos(static_cast<double>(p) * w);
    }
  }
  return pe;
}

Var Model::embed_frame_rows(Graph& g, const ModelVars& mv, std::span<const int> graphemes,
                            const std::vector<std::vector<int>>& codes_per_cb,
                            const std::vector<int>& phases) const {
  Var x = g.embed_rows(mv.emb_grapheme, std::vector<int>(graphemes.begin(), graphemes.end()));
  for (int q = 0; q < cfg_.n_codebooks; ++q) {
    x = g.add(x, g.embed_rows(mv.emb_acoustic[static_cast<size_t>(q)],
                              codes_per_cb[static_cast<size_t>(q)]));
  }
  return g.add(x, g.embed_rows(mv.emb_phase, phases));
}

std::vector<int> run_phases(std::span<const int> graphemes, int cap) {
  std::vector<int> out(graphemes.size(), 0);
  for (size_t i = 1; i < graphemes.size(); ++i) {
    if (graphemes[i] == graphemes[i - 1]) {
      out[i] = std::min(out[i - 1] + 1, cap - 1);
    }
  }
  return out;
}

namespace {
std::vector<std::vector<int>> split_codes(const FrameSeq& fs) {
  std::vector<std::vector<int>> out(static_cast<size_t>(fs.n_codebooks));
  for (auto& v : out) v.reserve(static_cast<size_t>(fs.size()));
  for (int64_t t = 0; t < fs.size(); ++t) {
    const auto fc = fs.frame_codes(t);
    for (int q = 0; q < fs.n_codebooks; ++q) out[static_cast<size_t>(q)].push_back(fc[q]);
  }
  return out;
}
}  // namespace

Var Model::build_encoder(Graph& g, const ModelVars& mv, const FrameSeq& enrollment) const {
  if (enrollment.size() < 1) throw std::invalid_argument("encode_enrollment: empty enrollment");
  const int64_t slots = cfg_.enr_slots;
  Var empty = g.constant(Tensor({slots, cfg_.d}));  // prepended empty features
  Var femb = embed_frame_rows(g, mv, enrollment.graphemes, split_codes(enrollment),
                              run_phases(enrollment.graphemes, cfg_.phase_cap));
  Var x = g.concat_rows(empty, femb);
  x = g.add(x, g.constant(sinusoidal_posenc(slots + enrollment.size())));
  for (const EncLayerVars& ev : mv.enc) {
    Var u = g.rmsnorm(x, ev.norm1);
    Var q = g.linear_nobias(u, ev.wq);
    Var k = g.linear_nobias(u, ev.wk);
    Var v = g.linear_nobias(u, ev.wv);
    Var ctx = g.mha(q, k, v, cfg_.heads, nullptr);
    x = g.add(x, g.linear_nobias(ctx, ev.wo));
    Var u2 = g.rmsnorm(x, ev.norm2);
    Var h = g.linear(g.silu(g.linear(u2, ev.ff1, ev.ff1_b)), ev.ff2, ev.ff2_b);
    x = g.add(x, h);
  }
  return g.rmsnorm(g.slice_rows(x, 0, slots), mv.enc_norm_out);
}

Tensor Model::encode_enrollment(const FrameSeq& enrollment) const {
  Graph g(false);
  ModelVars mv = register_vars(g, false);
  Var e = build_encoder(g, mv, enrollment);
  return g.value(e);
}

Model::RecordLoss Model::build_record_loss(Graph& g, const DatasetRecord& rec,
                                           std::span<const double> cb_weights,
                                           const MaskSettings& masks,
                                           GraphemeAlphabet alphabet, Rng& rng) {
  if (static_cast<int>(cb_weights.size()) != cfg_.n_outputs()) {
    throw std::invalid_argument("build_record_loss: cb_weights size");
  }
  const int64_t frames = rec.target.size();
  if (frames < 1) throw std::invalid_argument("build_record_loss: empty target");
  if (static_cast<int64_t>(rec.aligned.size()) != frames) {
    throw std::invalid_argument("build_record_loss: aligned/target length mismatch");
  }
  const int64_t steps = frames + 1;  // final step predicts EOS in the grapheme stream

  ModelVars mv = register_vars(g, true);
  Var enr = build_encoder(g, mv, rec.enrollment);

  const std::vector<PositionedToken> ptoks = assign_positions(rec.chunks);
  std::vector<int> tok_ids;
  std::vector<int64_t> tok_pos;
  for (const PositionedToken& pt : ptoks) {
    tok_ids.push_back(pt.token);
    tok_pos.push_back(pt.pos);
  }
  Var tok_emb = g.embed_rows(mv.emb_word, tok_ids);

  // teacher-forced inputs: BOS sentinel, then the previous target frame
  std::vector<int> in_g(static_cast<size_t>(steps));
  std::vector<std::vector<int>> in_codes(static_cast<size_t>(cfg_.n_codebooks),
                                         std::vector<int>(static_cast<size_t>(steps)));
  in_g[0] = cfg_.grapheme_bos();
  for (int q = 0; q < cfg_.n_codebooks; ++q) in_codes[static_cast<size_t>(q)][0] = cfg_.code_bos();
  for (int64_t t = 1; t < steps; ++t) {
    in_g[static_cast<size_t>(t)] = rec.target.graphemes[static_cast<size_t>(t - 1)];
    const auto fc = rec.target.frame_codes(t - 1);
    for (int q = 0; q < cfg_.n_codebooks; ++q) {
      in_codes[static_cast<size_t>(q)][static_cast<size_t>(t)] = fc[q];
    }
  }
  const std::vector<int> target_phases = run_phases(rec.target.graphemes, cfg_.phase_cap);
  std::vector<int> in_phase(static_cast<size_t>(steps), 0);
  for (int64_t t = 1; t < steps; ++t) {
    in_phase[static_cast<size_t>(t)] = target_phases[static_cast<size_t>(t - 1)];
  }
  Var x = embed_frame_rows(g, mv, in_g, in_codes, in_phase);

  // grapheme targets: blank-filled, upsampled to the decoding length
  const std::vector<int> filled = blank_fill(rec.aligned, alphabet.blank_id());
  const std::vector<int> gt = upsample(filled, frames);

  std::vector<int64_t> step_pos(static_cast<size_t>(steps));
  std::iota(step_pos.begin(), step_pos.end(), 0);

  const int64_t slots = cfg_.enr_slots;
  const int64_t n_tok = static_cast<int64_t>(tok_ids.size());
  const std::vector<uint8_t> kv_all_valid(static_cast<size_t>(n_tok), 1);

  auto run_block = [&](Var xin, const BlockVars& bv) -> Var {
    Var u = g.rmsnorm(xin, bv.norm_gain);
    Var s = ssm_scan_train(g, g.linear_nobias(u, bv.w_in), bv.ssm);
    Var z = g.silu(g.linear_nobias(u, bv.w_gate));
    Var m = g.linear_nobias(g.mul(s, z), bv.w_out);

    Var q_raw = g.linear_nobias(u, bv.wq);
    Var q_rot = rope_rows_train(g, q_raw, step_pos, cfg_.heads, rope_);
    Var k_enr = g.linear_nobias(enr, bv.wk);
    Var v_enr = g.linear_nobias(enr, bv.wv);
    Var k_txt = rope_rows_train(g, g.linear_nobias(tok_emb, bv.wk), tok_pos, cfg_.heads, rope_);
    Var v_txt = g.linear_nobias(tok_emb, bv.wv);
    Var k_all = g.concat_rows(k_enr, k_txt);
    Var v_all = g.concat_rows(v_enr, v_txt);

    Tensor mask_store;
    const Tensor* mask = nullptr;
    if (masks.enabled) {
      const std::vector<uint8_t> txt_mask = dropout_window_mask(
          kv_all_valid, tok_pos, steps, masks.r1, masks.r2, rng);
      mask_store = Tensor({steps, slots + n_tok}, 1.0);
      for (int64_t i = 0; i < steps; ++i) {
        for (int64_t j = 0; j < n_tok; ++j) {
          mask_store.at(i, slots + j) =
              txt_mask[static_cast<size_t>(i * n_tok + j)] != 0 ? 1.0 : 0.0;
        }
      }
      mask = &mask_store;
    }
    Var ctx = g.mha_split(q_raw, q_rot, k_all, v_all, cfg_.heads, slots, mask);
    Var a = g.linear_nobias(ctx, bv.wo);
    return g.add(xin, g.add(m, a));
  };

  for (int b = 0; b < cfg_.shared_layers; ++b) {
    x = run_block(x, mv.blocks[static_cast<size_t>(b)]);
  }

  std::vector<Var> group_hidden(static_cast<size_t>(cfg_.n_groups()));
  for (int grp = 0; grp < cfg_.n_groups(); ++grp) {
    Var xg = x;
    for (int l = 0; l < cfg_.group_layers; ++l) {
      xg = run_block(xg, mv.blocks[static_cast<size_t>(group_block_begin(grp) + l)]);
    }
    group_hidden[static_cast<size_t>(grp)] =
        g.rmsnorm(xg, mv.group_norms[static_cast<size_t>(grp)]);
  }

  RecordLoss result;
  std::vector<Var> losses;
  for (int cb = 0; cb < cfg_.n_outputs(); ++cb) {
    const Var hidden = group_hidden[static_cast<size_t>(cfg_.group_of_codebook(cb))];
    // tied head: project the hidden state, read logits against the
    // codebook's embedding table (BOS row excluded)
    const Var table = cb == 0 ? mv.emb_grapheme : mv.emb_acoustic[static_cast<size_t>(cb - 1)];
    Var ht = g.linear_nobias(hidden, mv.heads[static_cast<size_t>(cb)].first);
    Var emb_rows = g.slice_rows(table, 0, cfg_.vocab_of(cb));
    Var logits = g.linear_nobias(ht, emb_rows);
    logits = g.add_row_bias(logits, mv.heads[static_cast<size_t>(cb)].second);
    std::vector<int> targets(static_cast<size_t>(steps), 0);
    std::vector<double> weights(static_cast<size_t>(steps), 0.0);
    if (cb == 0) {
      for (int64_t t = 0; t < frames; ++t) targets[static_cast<size_t>(t)] = gt[static_cast<size_t>(t)];
      targets[static_cast<size_t>(frames)] = alphabet.eos_id();
      const double w = cb_weights[0] / static_cast<double>(steps);
      std::fill(weights.begin(), weights.end(), w);
    } else {
      const double w = cb_weights[static_cast<size_t>(cb)] / static_cast<double>(frames);
      for (int64_t t = 0; t < frames; ++t) {
        targets[static_cast<size_t>(t)] = rec.target.frame_codes(t)[cb - 1];
        weights[static_cast<size_t>(t)] = w;
      }
    }
    Var li = g.softmax_xent_rows(logits, std::move(targets), std::move(weights));
    result.cb_ce.push_back(g.value(li).at(0) / cb_weights[static_cast<size_t>(cb)]);
    losses.push_back(li);
  }
  result.loss = g.sum_scalars(losses);
  return result;
}

// ---- inference ----

void Model::init_memory(MemoryCaches& mem, const FrameSeq& enrollment) const {
  mem.enr_memory = encode_enrollment(enrollment);
  const int nb = block_count();
  mem.enr_k.assign(static_cast<size_t>(nb), Tensor());
  mem.enr_v.assign(static_cast<size_t>(nb), Tensor());
  mem.txt_k.assign(static_cast<size_t>(nb), {});
  mem.txt_v.assign(static_cast<size_t>(nb), {});
  mem.pos_ids.clear();
  for (int b = 0; b < nb; ++b) {
    const BlockParams& bl = blocks_[static_cast<size_t>(b)];
    Tensor k({cfg_.enr_slots, cfg_.dk}), v({cfg_.enr_slots, cfg_.dk});
    matmul_bt_acc(mem.enr_memory, bl.attn.wk.value, k);
    matmul_bt_acc(mem.enr_memory, bl.attn.wv.value, v);
    mem.enr_k[static_cast<size_t>(b)] = std::move(k);
    mem.enr_v[static_cast<size_t>(b)] = std::move(v);
  }
}

void Model::append_tokens(MemoryCaches& mem, std::span<const PositionedToken> tokens) const {
  const int nb = block_count();
  std::vector<double> krow(static_cast<size_t>(cfg_.dk));
  std::vector<double> vrow(static_cast<size_t>(cfg_.dk));
  for (const PositionedToken& pt : tokens) {
    if (pt.token < 0 || pt.token >= cfg_.word_vocab) {
      throw std::out_of_range("append_tokens: bad word token");
    }
    const auto emb = emb_word_.value.row(pt.token);
    for (int b = 0; b < nb; ++b) {
      const BlockParams& bl = blocks_[static_cast<size_t>(b)];
      linear_row(emb, bl.attn.wk.value, Tensor(), krow);
      rope_rotate_heads_inplace(krow, pt.pos, cfg_.heads, rope_);
      linear_row(emb, bl.attn.wv.value, Tensor(), vrow);
      auto& tk = mem.txt_k[static_cast<size_t>(b)];
      auto& tv = mem.txt_v[static_cast<size_t>(b)];
      tk.insert(tk.end(), krow.begin(), krow.end());
      tv.insert(tv.end(), vrow.begin(), vrow.end());
    }
    mem.pos_ids.push_back(pt.pos);
  }
}

void Model::StepStates::reset(const ModelConfig& cfg) {
  const int nb = cfg.shared_layers + cfg.group_layers * cfg.n_groups();
  ssm.resize(static_cast<size_t>(nb));
  for (auto& s : ssm) s.reset(cfg.d, cfg.n_state);
  const size_t d = static_cast<size_t>(cfg.d);
  const size_t dk = static_cast<size_t>(cfg.dk);
  x.assign(d, 0.0);
  u.assign(d, 0.0);
  ht.assign(d, 0.0);
  s_in.assign(d, 0.0);
  s_out.assign(d, 0.0);
  z.assign(d, 0.0);
  gated.assign(d, 0.0);
  m.assign(d, 0.0);
  q.assign(dk, 0.0);
  ctx.assign(dk, 0.0);
  a.assign(d, 0.0);
  xg.assign(d, 0.0);
  hg.assign(d, 0.0);
}

void Model::StepOutput::reset(const ModelConfig& cfg) {
  logits.resize(static_cast<size_t>(cfg.n_outputs()));
  for (int cb = 0; cb < cfg.n_outputs(); ++cb) {
    logits[static_cast<size_t>(cb)].assign(static_cast<size_t>(cfg.vocab_of(cb)), 0.0);
  }
}

namespace {
void rmsnorm_row(std::span<const double> x, const Tensor& gain, std::span<double> out) {
  constexpr double kEps = 1e-6;
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double r = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kEps);
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * r * gain.at(static_cast<int64_t>(i));
}
}  // namespace

void Model::forward_step(StepStates& st, const MemoryCaches& mem, int prev_grapheme,
                         std::span<const int> prev_codes, int prev_phase, int64_t t,
                         int64_t tok_begin, int64_t tok_end, StepOutput& out,
                         std::vector<double>* attn_dump, bool ablate_text) const {
  if (tok_begin >= tok_end && !ablate_text) {
    throw std::runtime_error("forward_step: empty text window");
  }
  if (static_cast<int>(prev_codes.size()) != cfg_.n_codebooks) {
    throw std::invalid_argument("forward_step: prev_codes size");
  }
  // frame embedding: sum of per-codebook embeddings plus the run phase
  {
    const auto ge = emb_grapheme_.value.row(prev_grapheme);
    std::copy(ge.begin(), ge.end(), st.x.begin());
    for (int q = 0; q < cfg_.n_codebooks; ++q) {
      axpy(1.0, emb_acoustic_[static_cast<size_t>(q)].value.row(prev_codes[q]), st.x);
    }
    axpy(1.0, emb_phase_.value.row(std::min(prev_phase, cfg_.phase_cap - 1)), st.x);
  }

  const int64_t dk = cfg_.dk;
  auto block_step = [&](std::vector<double>& xv, int b) {
    const BlockParams& bl = blocks_[static_cast<size_t>(b)];
    rmsnorm_row(xv, bl.norm_gain.value, st.u);
    linear_row(st.u, bl.w_in.value, Tensor(), st.s_in);
    ssm_step(st.ssm[static_cast<size_t>(b)], st.s_in, bl.ssm, st.s_out);
    linear_row(st.u, bl.w_gate.value, Tensor(), st.z);
    for (size_t i = 0; i < st.z.size(); ++i) st.gated[i] = st.s_out[i] * silu(st.z[i]);
    linear_row(st.gated, bl.w_out.value, Tensor(), st.m);

    linear_row(st.u, bl.attn.wq.value, Tensor(), st.q);
    AttnMemory view;
    view.dk = dk;
    view.n_enr = cfg_.enr_slots;
    view.k_enr = std::span<const double>(mem.enr_k[static_cast<size_t>(b)].data);
    view.v_enr = std::span<const double>(mem.enr_v[static_cast<size_t>(b)].data);
    view.n_txt = ablate_text ? 0 : tok_end - tok_begin;
    if (view.n_txt > 0) {
      const auto& tk = mem.txt_k[static_cast<size_t>(b)];
      const auto& tv = mem.txt_v[static_cast<size_t>(b)];
      view.k_txt = std::span<const double>(tk.data() + tok_begin * dk,
                                           static_cast<size_t>((tok_end - tok_begin) * dk));
      view.v_txt = std::span<const double>(tv.data() + tok_begin * dk,
                                           static_cast<size_t>((tok_end - tok_begin) * dk));
      view.keys_prerotated = true;
    }
    cross_attention(st.q, t, view, cfg_.heads, rope_, st.ctx, st.attn, attn_dump);
    linear_row(st.ctx, bl.attn.wo.value, Tensor(), st.a);
    for (size_t i = 0; i < xv.size(); ++i) xv[i] += st.m[i] + st.a[i];
  };

  for (int b = 0; b < cfg_.shared_layers; ++b) block_step(st.x, b);

  for (int grp = 0; grp < cfg_.n_groups(); ++grp) {
    st.xg = st.x;
    for (int l = 0; l < cfg_.group_layers; ++l) {
      block_step(st.xg, group_block_begin(grp) + l);
    }
    rmsnorm_row(st.xg, group_norms_[static_cast<size_t>(grp)].value, st.hg);
    int cb0 = 0;
    for (int gg = 0; gg < grp; ++gg) cb0 += cfg_.groups[static_cast<size_t>(gg)];
    for (int cb = cb0; cb < cb0 + cfg_.groups[static_cast<size_t>(grp)]; ++cb) {
      // tied head: logits[c] = emb[c] . (w_tie h) + b[c]
      linear_row(st.hg, heads_[static_cast<size_t>(cb)].w_tie.value, Tensor(), st.ht);
      const Tensor& table =
          cb == 0 ? emb_grapheme_.value : emb_acoustic_[static_cast<size_t>(cb - 1)].value;
      auto& lg = out.logits[static_cast<size_t>(cb)];
      const Tensor& bias = heads_[static_cast<size_t>(cb)].b.value;
      const int64_t vocab = cfg_.vocab_of(cb);
      for (int64_t c = 0; c < vocab; ++c) {
        lg[static_cast<size_t>(c)] = dot(table.row(c), st.ht) + bias.at(c);
      }
    }
  }
}

}  // namespace streamdec
