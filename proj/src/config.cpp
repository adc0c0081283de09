#include "moma/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace moma {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Every hyperparameter has a key; defaults follow the reference training
// setup (HumanML3D-scale). Toy presets in configs/ override.
const KeyDefault kRegistry[] = {
    {"seed", "0"},
    {"threads", "1"},

    // toy corpus
    {"toy.classes", "8"},
    {"toy.per_class", "250"},
    {"toy.joints", "8"},
    {"toy.t_min", "32"},
    {"toy.t_max", "64"},
    {"toy.fps", "20"},

    // motion VAE
    {"vae.latent_dim", "512"},
    {"vae.res_layers", "3"},
    {"vae.down_layers", "2"},
    {"vae.widths", "512,512"},
    {"vae.kl_weight", "1e-6"},
    {"vae.vel_weight", "0.5"},
    {"vae.lr", "0.00005"},
    {"vae.batch_size", "256"},
    {"vae.iterations", "300000"},
    {"vae.epochs", "0"},
    {"vae.warmup_iters", "0"},
    {"vae.decay_epoch", "0"},
    {"vae.decay_factor", "0.1"},

    // masked autoregressive diffusion stage
    {"mad.layers", "16"},
    {"mad.heads", "8"},
    {"mad.hidden", "1024"},
    {"mad.cond_dim", "512"},
    {"mad.max_positions", "50"},
    {"mad.text_dim", "64"},
    {"mad.ffn_mult", "4"},
    {"mad.lr", "0.0001"},
    {"mad.batch_size", "64"},
    {"mad.iterations", "0"},
    {"mad.epochs", "600"},
    {"mad.warmup_iters", "2000"},
    {"mad.decay_epoch", "400"},
    {"mad.decay_factor", "0.1"},
    {"mad.ema_decay", "0.999"},
    {"mad.cond_dropout", "0.1"},

    // diffusion head
    {"head.blocks", "4"},
    {"head.width", "0"},
    {"head.timestep_embed_dim", "64"},
    {"head.squared_loss", "true"},

    // noise process
    {"diffusion.t_diff", "50"},
    {"diffusion.schedule", "cosine"},
    {"diffusion.sampler", "ddpm"},
    {"diffusion.inference_steps", "0"},
    {"diffusion.eta", "0"},

    // inference
    {"infer.steps", "9"},
    {"infer.cfg", "3.0"},
    {"infer.mode", "keyframe"},
    {"infer.target_frames", "196"},
    {"infer.context_frames", "8"},

    // evaluator and metric protocol
    {"eval.feature_dim", "64"},
    {"eval.hidden", "64"},
    {"eval.layers", "2"},
    {"eval.heads", "4"},
    {"eval.text_dim", "48"},
    {"eval.max_len", "200"},
    {"eval.ffn_mult", "2"},
    {"eval.lr", "0.001"},
    {"eval.iterations", "1500"},
    {"eval.reps", "20"},
    {"eval.rp_pool", "32"},
    {"eval.div_pairs", "300"},
    {"eval.n_generate", "0"},

    // ablation harness
    {"ablate.steps_pairs", "50:50,1000:100"},
    {"ablate.cfg_list", "1,2,3,4,5"},
    {"ablate.r_list", "1,3,5,9,15"},
    {"ablate.head_depths", "3,4,6"},
    {"ablate.variant_iter_scale", "0.5"},
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& kd : kRegistry) c.entries_.emplace_back(kd.key, kd.value);
  return c;
}

bool RunConfig::known(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return true;
  return false;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  throw Error("config: unknown key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  MOMA_CHECK(is.good(), "config: cannot open " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    MOMA_CHECK(eq != std::string::npos,
               "config: missing '=' at " + path + ":" + std::to_string(line_no));
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw Error("config: unknown key '" + key + "'");
}

double RunConfig::get_double(const std::string& key) const {
  return std::stod(get(key));
}
long RunConfig::get_long(const std::string& key) const {
  return std::stol(get(key));
}
int RunConfig::get_int(const std::string& key) const {
  return std::stoi(get(key));
}
bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config: bad boolean for '" + key + "': " + v);
}

std::string RunConfig::render() const {
  std::vector<std::pair<std::string, std::string>> sorted = entries_;
  std::sort(sorted.begin(), sorted.end());
  std::ostringstream os;
  for (const auto& [k, v] : sorted) os << k << " = " << v << '\n';
  return os.str();
}

std::string hash_file_hex(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MOMA_CHECK(is.good(), "hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof(buf));
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void write_run_manifest(
    const std::string& path, const std::string& subcommand,
    const RunConfig& config,
    const std::vector<std::pair<std::string, std::string>>& artifacts) {
  std::ofstream os(path);
  MOMA_CHECK(os.good(), "manifest: cannot open " + path);
  os << "subcommand = " << subcommand << '\n';
  os << config.render();
  for (const auto& [name, file] : artifacts)
    os << "artifact." << name << ".fnv1a64 = " << hash_file_hex(file) << '\n';
}

}  // namespace moma
