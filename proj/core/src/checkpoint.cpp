#include "streamdec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace streamdec {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'S', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
int64_t read_i64(std::istream& is) {
  int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}
}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  json j;
  j["d"] = c.d;
  j["shared_layers"] = c.shared_layers;
  j["group_layers"] = c.group_layers;
  j["groups"] = c.groups;
  j["heads"] = c.heads;
  j["dk"] = c.dk;
  j["n_state"] = c.n_state;
  j["n_graphemes"] = c.n_graphemes;
  j["n_codebooks"] = c.n_codebooks;
  j["codebook_size"] = c.codebook_size;
  j["word_vocab"] = c.word_vocab;
  j["enr_slots"] = c.enr_slots;
  j["enr_layers"] = c.enr_layers;
  j["enr_ff_mult"] = c.enr_ff_mult;
  j["frame_rate"] = c.frame_rate;
  j["rope_base"] = c.rope_base;
  j["lambda_cb"] = c.lambda_cb;
  j["cb_ema_decay"] = c.cb_ema_decay;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.shared_layers = j.at("shared_layers").get<int>();
  c.group_layers = j.at("group_layers").get<int>();
  c.groups = j.at("groups").get<std::vector<int>>();
  c.heads = j.at("heads").get<int>();
  c.dk = j.at("dk").get<int>();
  c.n_state = j.at("n_state").get<int>();
  c.n_graphemes = j.at("n_graphemes").get<int>();
  c.n_codebooks = j.at("n_codebooks").get<int>();
  c.codebook_size = j.at("codebook_size").get<int>();
  c.word_vocab = j.at("word_vocab").get<int>();
  c.enr_slots = j.at("enr_slots").get<int>();
  c.enr_layers = j.at("enr_layers").get<int>();
  c.enr_ff_mult = j.at("enr_ff_mult").get<int>();
  c.frame_rate = j.at("frame_rate").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  c.lambda_cb = j.at("lambda_cb").get<double>();
  c.cb_ema_decay = j.at("cb_ema_decay").get<double>();
  return c;
}

namespace checkpoint {

void save(const std::string& path, Model& model, const AdamOptimizer* opt,
          const TrainerState* trainer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));

  json header;
  header["model_config"] = json::parse(model_config_to_json(model.config()));
  header["n_tensors"] = model.n_param_tensors();
  header["has_optimizer"] = opt != nullptr;
  header["has_trainer"] = trainer != nullptr;
  write_str(os, header.dump());

  auto refs = model.named_params();
  for (const auto& r : refs) {
    write_str(os, r.name);
    write_u32(os, static_cast<uint32_t>(r.value->shape.size()));
    for (int64_t d : r.value->shape) write_i64(os, d);
    os.write(reinterpret_cast<const char*>(r.value->data.data()),
             static_cast<std::streamsize>(r.value->data.size() * 8));
  }
  if (opt != nullptr) {
    std::ostringstream blob;
    opt->save_state(blob);
    write_str(os, blob.str());
  }
  if (trainer != nullptr) {
    json t;
    t["cb_ema"] = trainer->cb_ema;
    t["global_step"] = trainer->global_step;
    t["rng_state"] = trainer->rng_state;
    write_str(os, t.dump());
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

namespace {
Full load_impl(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const json header = json::parse(read_str(is));
  Full full;
  const ModelConfig cfg = model_config_from_json(header.at("model_config").dump());
  full.model = Model(cfg, 0);
  auto refs = full.model.named_params();
  const size_t n = header.at("n_tensors").get<size_t>();
  if (n != refs.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  for (size_t i = 0; i < n; ++i) {
    const std::string name = read_str(is);
    if (name != refs[i].name) {
      throw std::runtime_error("checkpoint: tensor order mismatch at " + name);
    }
    const uint32_t ndim = read_u32(is);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = read_i64(is);
    if (dims != refs[i].value->shape) {
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    }
    is.read(reinterpret_cast<char*>(refs[i].value->data.data()),
            static_cast<std::streamsize>(refs[i].value->data.size() * 8));
  }
  full.has_optimizer = header.at("has_optimizer").get<bool>();
  if (full.has_optimizer) full.optimizer_blob = read_str(is);
  full.has_trainer = header.at("has_trainer").get<bool>();
  if (full.has_trainer) {
    const json t = json::parse(read_str(is));
    full.trainer.cb_ema = t.at("cb_ema").get<std::vector<double>>();
    full.trainer.global_step = t.at("global_step").get<int64_t>();
    full.trainer.rng_state = t.at("rng_state").get<std::string>();
  }
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
  return full;
}
}  // namespace

Model load_model(const std::string& path) { return load_impl(path).model; }

Full load_full(const std::string& path) { return load_impl(path); }

}  // namespace checkpoint

}  // namespace streamdec
