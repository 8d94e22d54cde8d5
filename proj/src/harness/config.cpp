#include "lt2m/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lt2m {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw std::invalid_argument("config: bad value '" + value + "' for " + key);
  }
  return out;
}

std::string format(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
std::string format_int(T v) {
  return std::to_string(v);
}

// one entry per key: getter and setter over a RunConfig
struct Field {
  std::string (*get)(const RunConfig&);
  void (*set)(RunConfig&, const std::string& key, const std::string& value);
};

#define INDEX_FIELD(member)                                                          \
  Field {                                                                            \
    [](const RunConfig& c) { return format_int(c.member); },                         \
        [](RunConfig& c, const std::string& k, const std::string& v) {               \
          c.member = parse_number<Index>(k, v);                                      \
        }                                                                            \
  }
#define REAL_FIELD(member)                                                           \
  Field {                                                                            \
    [](const RunConfig& c) { return format(c.member); },                             \
        [](RunConfig& c, const std::string& k, const std::string& v) {               \
          c.member = parse_number<double>(k, v);                                     \
        }                                                                            \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"motion_dim", INDEX_FIELD(model.motion_dim)},
      {"dim", INDEX_FIELD(model.dim)},
      {"blocks", INDEX_FIELD(model.blocks)},
      {"downsample", INDEX_FIELD(model.downsample)},
      {"norm_groups", INDEX_FIELD(model.norm_groups)},
      {"vocab", INDEX_FIELD(model.vocab)},
      {"d_state", INDEX_FIELD(model.d_state)},
      {"d_conv", INDEX_FIELD(model.d_conv)},
      {"expand", INDEX_FIELD(model.expand)},
      {"scan",
       {[](const RunConfig& c) { return std::string(to_string(c.model.scan)); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.model.scan = parse_scan_mode(v);
        }}},
      {"diffusion_steps", INDEX_FIELD(diffusion_steps)},
      {"beta_start", REAL_FIELD(beta_start)},
      {"beta_end", REAL_FIELD(beta_end)},
      {"guidance", REAL_FIELD(guidance.scale)},
      {"cond_dropout", REAL_FIELD(guidance.cond_dropout)},
      {"lr", REAL_FIELD(lr)},
      {"beta1", REAL_FIELD(beta1)},
      {"beta2", REAL_FIELD(beta2)},
      {"weight_decay", REAL_FIELD(weight_decay)},
      {"adam_eps", REAL_FIELD(adam_eps)},
      {"batch", INDEX_FIELD(batch)},
      {"epochs", INDEX_FIELD(epochs)},
      {"seed",
       {[](const RunConfig& c) { return format_int(c.seed); },
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.seed = parse_number<std::uint64_t>(k, v);
          c.corpus.seed = c.seed;
        }}},
      {"train_count", INDEX_FIELD(corpus.train)},
      {"valid_count", INDEX_FIELD(corpus.valid)},
      {"test_count", INDEX_FIELD(corpus.test)},
      {"min_length", INDEX_FIELD(corpus.min_length)},
      {"max_length", INDEX_FIELD(corpus.max_length)},
      {"sample_steps", INDEX_FIELD(sample_steps)},
      {"sampler",
       {[](const RunConfig& c) { return to_string(c.sampler); },
        [](RunConfig& c, const std::string&, const std::string& v) {
          c.sampler = parse_sampler(v);
        }}},
  };
  return table;
}

#undef INDEX_FIELD
#undef REAL_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return &f;
  }
  return nullptr;
}

}  // namespace

RunConfig RunConfig::paper() {
  RunConfig c;
  c.preset = "paper";
  c.model = ModelConfig::paper();
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.preset = "desk";
  c.model = ModelConfig::desk();
  c.model.motion_dim = kMotionDim;
  c.diffusion_steps = 100;
  // betas scaled by 1000 / T so that abar_T stays near its T = 1000 value
  c.beta_start = 1e-3;
  c.beta_end = 1e-1;
  c.batch = 32;
  c.epochs = 200;
  c.lr = 1e-3;
  return c;
}

RunConfig RunConfig::tiny() {
  RunConfig c = desk();
  c.preset = "tiny";
  c.model = ModelConfig::tiny();
  c.model.motion_dim = kMotionDim;
  c.corpus.train = 64;
  c.corpus.valid = 16;
  c.corpus.test = 16;
  c.batch = 16;
  c.epochs = 3;
  return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  if (name == "tiny") return tiny();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper, desk or tiny)");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k{"preset"};
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "preset") {
    // only meaningful through parse(); here it must name the current base
    if (value != preset) {
      throw std::invalid_argument("config: preset can only be chosen before other keys");
    }
    return;
  }
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("config: unknown key '" + key + "'");
  f->set(*this, key, value);
  model.max_step = diffusion_steps;
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "preset") return preset;
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("config: unknown key '" + key + "'");
  return f->get(*this);
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k, get(k));
  return out;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  const ModelConfig& m = model;
  if (m.motion_dim < 1 || m.dim < 2 || m.dim % 2 != 0) fail("dim must be even and positive");
  if (m.blocks < 1) fail("blocks must be >= 1");
  if (m.downsample < 1) fail("downsample must be >= 1");
  if (m.norm_groups < 1 || m.dim % m.norm_groups != 0) fail("norm_groups must divide dim");
  if (m.vocab < 1 || m.d_state < 1 || m.d_conv < 1 || m.expand < 1) {
    fail("vocab, d_state, d_conv and expand must be >= 1");
  }
  if (m.max_step != diffusion_steps) fail("model max_step must equal diffusion_steps");
  if (diffusion_steps < 1) fail("diffusion_steps must be >= 1");
  if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1)) {
    fail("need 0 < beta_start < beta_end < 1");
  }
  guidance.validate();
  if (!(lr >= 0)) fail("lr must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  if (batch < 1 || epochs < 1) fail("batch and epochs must be >= 1");
  if (corpus.train < 1 || corpus.valid < 1 || corpus.test < 1) fail("split counts must be >= 1");
  if (corpus.min_length < 1 || corpus.max_length < corpus.min_length) fail("bad length bounds");
  if (sample_steps < 1 || sample_steps > diffusion_steps) {
    fail("sample_steps must lie in [1, diffusion_steps]");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::string base = "desk";
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "preset") base = value;
    else entries.emplace_back(std::move(key), std::move(value));
  }
  RunConfig c = preset_named(base);
  for (const auto& [k, v] : entries) c.set(k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : items()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace lt2m
