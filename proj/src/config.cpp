#include "kinr/config.hpp"

#include "kinr/error.hpp"
#include "kinr/io.hpp"

#include <cstdlib>
#include <set>

namespace kinr {

using nlohmann::json;

namespace {

// Reads typed fields of one JSON object and rejects keys nobody asked for.
class Section
{
public:
  Section(json const &doc, std::string name)
    : doc_{doc}
    , name_{std::move(name)}
  {
    if (!doc.is_object()) {
      throw ConfigError(name_ + ": expected an object");
    }
  }

  template <typename V>
  void read(char const *key, V &out)
  {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end() || it->is_null()) {
      return;
    }
    try {
      out = it->get<V>();
    } catch (json::exception const &) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  template <typename V>
  void read_optional(char const *key, std::optional<V> &out)
  {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end() || it->is_null()) {
      out.reset();
      return;
    }
    V v{};
    read(key, v);
    out = v;
  }

  json const *child(char const *key)
  {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const
  {
    for (auto const &[k, v] : doc_.items()) {
      if (!seen_.count(k)) {
        throw ConfigError("unknown key '" + where(k) + "'");
      }
    }
  }

  std::string where(std::string const &key) const { return name_.empty() ? key : name_ + "." + key; }

private:
  json const &doc_;
  std::string name_;
  std::set<std::string> seen_;
};

void check(bool ok, std::string const &msg)
{
  if (!ok) {
    throw ConfigError(msg);
  }
}

std::string to_string(LrDecay d) { return d == LrDecay::cosine ? "cosine" : "none"; }

LrDecay parse_decay(std::string const &s)
{
  if (s == "none") {
    return LrDecay::none;
  }
  if (s == "cosine") {
    return LrDecay::cosine;
  }
  throw ConfigError("training.lr_decay must be 'none' or 'cosine'");
}

} // namespace

void StageSchedule::validate() const
{
  check(bounds[0] >= 0, "training.schedule: E0 must be >= 0");
  for (int i = 1; i < 5; ++i) {
    check(bounds[i - 1] <= bounds[i], "training.schedule: boundaries must be non-decreasing");
  }
}

void ExperimentConfig::validate() const
{
  check(dataset.source == "synthetic" || dataset.source == "directory", "dataset.source must be 'synthetic' or 'directory'");
  if (dataset.source == "synthetic") {
    check(dataset.count >= 1, "dataset.count must be >= 1");
    check(dataset.size >= 16 && dataset.size % 2 == 0, "dataset.size must be even and >= 16");
  } else {
    check(!dataset.path.empty(), "dataset.path is required for directory datasets");
  }
  check(dataset.val_count >= 0, "dataset.val_count must be >= 0");
  check(mask.ratio > 0.0 && mask.ratio <= 1.0, "mask.ratio must lie in (0, 1]");
  check(mask.acs() >= 0.0 && mask.acs() < mask.ratio, "mask.acs_fraction must lie in [0, ratio)");
  model.validate();
  training.schedule.validate();
  check(training.learning_rate > 0.0, "training.learning_rate must be positive");
  check(training.beta1 >= 0.0 && training.beta1 < 1.0, "training.beta1 must lie in [0, 1)");
  check(training.beta2 >= 0.0 && training.beta2 < 1.0, "training.beta2 must lie in [0, 1)");
  check(training.eps > 0.0, "training.eps must be positive");
  check(training.batch_size >= 1, "training.batch_size must be >= 1");
  check(training.validate_every >= 0, "training.validate_every must be >= 0");
  check(training.threads >= 1, "training.threads must be >= 1");
  check(!output.dir.empty(), "output.dir must not be empty");
}

json model_to_json(ModelConfig const &m)
{
  return json{{"dim", m.inr.dim},
              {"heads", m.inr.heads},
              {"encoder_layers", m.inr.encoder_layers},
              {"decoder_layers", m.inr.decoder_layers},
              {"ffn_expansion", m.inr.ffn_expansion},
              {"pe_bands", m.inr.pe_bands},
              {"query_chunk", m.inr.query_chunk},
              {"image_channels", m.image.channels},
              {"hrit_token_fraction", m.hrit_token_fraction},
              {"disable", to_string(m.disable)},
              {"init_seed", m.init_seed}};
}

ModelConfig model_from_json(json const &doc)
{
  ModelConfig m;
  Section s(doc, "model");
  s.read("dim", m.inr.dim);
  s.read("heads", m.inr.heads);
  s.read("encoder_layers", m.inr.encoder_layers);
  s.read("decoder_layers", m.inr.decoder_layers);
  s.read("ffn_expansion", m.inr.ffn_expansion);
  s.read("pe_bands", m.inr.pe_bands);
  s.read("query_chunk", m.inr.query_chunk);
  s.read("image_channels", m.image.channels);
  s.read("hrit_token_fraction", m.hrit_token_fraction);
  std::string disable = "none";
  s.read("disable", disable);
  m.disable = parse_ablation(disable);
  s.read("init_seed", m.init_seed);
  s.finish();
  return m;
}

json config_to_json(ExperimentConfig const &c)
{
  json mask{{"family", to_string(c.mask.family)},
            {"ratio", c.mask.ratio},
            {"acs_fraction", c.mask.acs_fraction ? json(*c.mask.acs_fraction) : json(nullptr)},
            {"seed", c.mask.seed},
            {"resample", c.mask.resample}};
  json training{{"schedule", c.training.schedule.bounds},
                {"learning_rate", c.training.learning_rate},
                {"beta1", c.training.beta1},
                {"beta2", c.training.beta2},
                {"eps", c.training.eps},
                {"lr_decay", to_string(c.training.lr_decay)},
                {"batch_size", c.training.batch_size},
                {"seed", c.training.seed},
                {"validate_every", c.training.validate_every},
                {"threads", c.training.threads}};
  return json{{"dataset",
               {{"source", c.dataset.source},
                {"path", c.dataset.path},
                {"count", c.dataset.count},
                {"size", c.dataset.size},
                {"seed", c.dataset.seed},
                {"val_count", c.dataset.val_count},
                {"val_path", c.dataset.val_path}}},
              {"mask", mask},
              {"model", model_to_json(c.model)},
              {"training", training},
              {"output", {{"dir", c.output.dir}}}};
}

ExperimentConfig config_from_json(json const &doc)
{
  ExperimentConfig c;
  Section root(doc, "");
  if (auto const *d = root.child("dataset")) {
    Section s(*d, "dataset");
    s.read("source", c.dataset.source);
    s.read("path", c.dataset.path);
    s.read("count", c.dataset.count);
    s.read("size", c.dataset.size);
    s.read("seed", c.dataset.seed);
    s.read("val_count", c.dataset.val_count);
    s.read("val_path", c.dataset.val_path);
    s.finish();
  }
  if (auto const *d = root.child("mask")) {
    Section s(*d, "mask");
    std::string family = to_string(c.mask.family);
    s.read("family", family);
    c.mask.family = parse_mask_family(family);
    s.read("ratio", c.mask.ratio);
    s.read_optional("acs_fraction", c.mask.acs_fraction);
    s.read("seed", c.mask.seed);
    s.read("resample", c.mask.resample);
    s.finish();
  }
  if (auto const *d = root.child("model")) {
    c.model = model_from_json(*d);
  }
  if (auto const *d = root.child("training")) {
    Section s(*d, "training");
    s.read("schedule", c.training.schedule.bounds);
    s.read("learning_rate", c.training.learning_rate);
    s.read("beta1", c.training.beta1);
    s.read("beta2", c.training.beta2);
    s.read("eps", c.training.eps);
    std::string decay = "none";
    s.read("lr_decay", decay);
    c.training.lr_decay = parse_decay(decay);
    s.read("batch_size", c.training.batch_size);
    s.read("seed", c.training.seed);
    s.read("validate_every", c.training.validate_every);
    s.read("threads", c.training.threads);
    s.finish();
  }
  if (auto const *d = root.child("output")) {
    Section s(*d, "output");
    s.read("dir", c.output.dir);
    s.finish();
  }
  root.finish();
  return c;
}

void apply_environment(ExperimentConfig &cfg)
{
  if (char const *root = std::getenv("KINR_OUTPUT_ROOT"); root && *root) {
    std::filesystem::path dir(cfg.output.dir);
    if (dir.is_relative()) {
      cfg.output.dir = (std::filesystem::path(root) / dir).string();
    }
  }
  if (char const *threads = std::getenv("KINR_THREADS"); threads && *threads) {
    char *end = nullptr;
    long const n = std::strtol(threads, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) {
      throw ConfigError("KINR_THREADS must be a positive integer");
    }
    cfg.training.threads = static_cast<int>(n);
  }
}

ExperimentConfig load_config(std::filesystem::path const &path)
{
  json doc;
  try {
    doc = io::read_json(path);
  } catch (Error const &e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  auto cfg = config_from_json(doc);
  apply_environment(cfg);
  cfg.validate();
  return cfg;
}

std::filesystem::path output_dir(ExperimentConfig const &cfg) { return cfg.output.dir; }

} // namespace kinr
