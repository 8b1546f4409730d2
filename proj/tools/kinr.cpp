#include "kinr/checkpoint.hpp"
#include "kinr/config.hpp"
#include "kinr/datasets.hpp"
#include "kinr/error.hpp"
#include "kinr/io.hpp"
#include "kinr/metrics.hpp"
#include "kinr/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kinr;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Thrown for anything wrong with the request itself; maps to the validation exit code.
struct Invalid : ConfigError
{
  using ConfigError::ConfigError;
};

void require(bool ok, std::string const &msg)
{
  if (!ok) {
    throw Invalid(msg);
  }
}

std::pair<int, int> parse_size(std::string const &s)
{
  auto const x = s.find('x');
  try {
    if (x == std::string::npos) {
      int const n = std::stoi(s);
      return {n, n};
    }
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (std::exception const &) {
    throw Invalid("size must look like 64 or 64x100, got '" + s + "'");
  }
}

int env_threads(int fallback)
{
  if (char const *t = std::getenv("KINR_THREADS")) {
    try {
      return std::max(1, std::stoi(t));
    } catch (std::exception const &) {
      throw Invalid(std::string("KINR_THREADS must be an integer, got '") + t + "'");
    }
  }
  return fallback;
}

void print_epoch(EpochRecord const &r)
{
  std::cerr << "epoch " << r.epoch << " stage " << r.stage;
  if (r.skipped) {
    std::cerr << " (skipped)\n";
    return;
  }
  std::cerr << " loss " << r.loss.total;
  if (r.val_psnr) {
    std::cerr << " val_psnr " << *r.val_psnr;
  }
  std::cerr << " [" << r.wall_s << " s]\n";
}

json report_json(MetricReport const &m)
{
  return {{"psnr", m.psnr_db}, {"psnr_capped", m.psnr_capped}, {"ssim", m.ssim}, {"nmse", m.nmse}};
}

json aggregate(std::vector<MetricReport> const &rows)
{
  std::vector<double> p, s, n;
  for (auto const &r : rows) {
    p.push_back(r.psnr_db);
    s.push_back(r.ssim);
    n.push_back(r.nmse);
  }
  auto ms = [](std::vector<double> const &v) {
    auto const a = mean_std(v);
    return json{{"mean", a.mean}, {"std", a.std}};
  };
  return {{"psnr", ms(p)}, {"ssim", ms(s)}, {"nmse", ms(n)}, {"count", rows.size()}};
}

// Magnitudes are shown relative to the reference peak so every image of one sample shares a scale.
std::vector<double> display(RealImage const &img, double peak)
{
  std::vector<double> v(img.data().begin(), img.data().end());
  for (auto &x : v) {
    x = std::clamp(peak > 0 ? x / peak : 0.0, 0.0, 1.0);
  }
  return v;
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs
{
  int count = 10;
  int size = 64;
  std::int64_t seed = 0;
  std::string out;
};

int cmd_synth(SynthArgs const &a)
{
  require(a.count >= 1, "--count must be at least 1");
  require(a.size >= 16 && a.size % 2 == 0, "--size must be even and at least 16");
  io::StagedDirectory staged(a.out);
  std::vector<std::string> ids;
  for (int i = 0; i < a.count; ++i) {
    auto s = synth_phantom(a.size, a.seed + i);
    save_sample(s, staged.path());
    ids.push_back(s.id);
  }
  write_index(staged.path(), ids);
  staged.commit();
  std::cout << json{{"written", a.count}, {"dir", a.out}}.dump() << "\n";
  return 0;
}

struct MaskArgs
{
  std::string family = "cartesian1d";
  double ratio = 0.2;
  std::optional<double> acs;
  std::string size = "64";
  std::int64_t seed = 0;
  std::string out;
  bool check = false;
};

json check_mask(SamplingMask const &m)
{
  json j{{"family", to_string(m.family())},
         {"height", m.height()},
         {"width", m.width()},
         {"count", m.count()},
         {"achieved_ratio", m.achieved_ratio()}};
  if (m.family() == MaskFamily::cartesian1d) {
    int const expected = acs_line_count(m.width(), m.acs_fraction());
    int const first = acs_first_column(m.width(), expected);
    bool central = true;
    for (int c = first; c < first + expected; ++c) {
      for (int r = 0; r < m.height(); ++r) {
        central = central && m(r, c);
      }
    }
    int full_columns = 0;
    for (int c = 0; c < m.width(); ++c) {
      bool all = true;
      for (int r = 0; r < m.height(); ++r) {
        all = all && m(r, c);
      }
      full_columns += all;
    }
    j["acs_columns_expected"] = expected;
    j["acs_first_column"] = first;
    j["acs_central_block_sampled"] = central;
    j["fully_sampled_columns"] = full_columns;
    j["ok"] = central;
  } else {
    auto const idx = acs_point_indices(m.height(), m.width(),
                                       static_cast<std::size_t>(std::llround(m.acs_fraction() * m.height() * m.width())));
    bool all = true;
    for (auto i : idx) {
      all = all && m.grid()[i] != 0;
    }
    j["acs_points_expected"] = idx.size();
    j["ok"] = all;
  }
  return j;
}

int cmd_mask(MaskArgs const &a)
{
  MaskFamily family;
  try {
    family = parse_mask_family(a.family);
  } catch (Error const &e) {
    throw Invalid(e.what());
  }
  auto const [h, w] = parse_size(a.size);
  double const acs = a.acs ? *a.acs : default_acs_fraction(family);
  SamplingMask m;
  try {
    m = make_mask(family, h, w, a.ratio, acs, a.seed);
  } catch (DomainError const &e) {
    throw Invalid(e.what());
  }
  save_mask(m, a.out);
  if (a.check) {
    auto const j = check_mask(m);
    std::cout << j.dump() << "\n";
    return j.at("ok").get<bool>() ? 0 : kExitRuntime;
  }
  std::cout << json{{"count", m.count()}, {"achieved_ratio", m.achieved_ratio()}}.dump() << "\n";
  return 0;
}

ExperimentConfig read_config(std::string const &path)
{
  ExperimentConfig cfg;
  try {
    cfg = load_config(path);
    apply_environment(cfg);
    cfg.validate();
  } catch (IoError const &e) {
    throw Invalid(e.what());
  }
  return cfg;
}

int cmd_train(std::string const &config, std::optional<std::string> const &resume)
{
  auto const cfg = read_config(config);
  if (resume) {
    require(fs::exists(*resume), "checkpoint not found: " + *resume);
  }
  auto const s = run_training(cfg, resume ? std::optional<fs::path>(*resume) : std::nullopt, print_epoch);
  std::cout << json{{"epochs_run", s.epochs_run}, {"final_checkpoint", s.final_checkpoint.string()}}.dump() << "\n";
  return 0;
}

struct EvalArgs
{
  std::string checkpoint;
  std::string data;
  std::string mask;
  std::string out;
  bool zero_filling = false;
  bool ground_truth = false;
  int stage = 4;
  int threads = 1;
};

int cmd_eval(EvalArgs const &a)
{
  require(a.ground_truth || !a.checkpoint.empty(), "--checkpoint is required unless --ground-truth is given");
  require(a.stage >= 1 && a.stage <= 4, "--stage must be in 1..4");
  auto const samples = load_sample_directory(a.data);
  require(!samples.empty(), "no samples in " + a.data);
  auto const mask = load_mask(a.mask);
  std::vector<TrainingExample> examples;
  for (auto const &s : samples) {
    require(s.k_full.height() == mask.height() && s.k_full.width() == mask.width(),
            "mask shape does not match sample " + s.id);
    examples.push_back(build_example(s, mask));
  }

  std::vector<MetricReport> model, zf, lr;
  json per_sample = json::array();
  if (a.ground_truth) {
    for (auto const &ex : examples) {
      auto const ref = magnitude(ex.sample.image_full);
      model.push_back(evaluate(ref, ref));
      zf.push_back(evaluate(magnitude(ex.i_s), ref));
    }
  } else {
    auto const net = network_from_checkpoint(load_checkpoint(a.checkpoint));
    for (auto const &row : evaluate_examples(net, examples, a.stage, env_threads(a.threads))) {
      model.push_back(row.model);
      zf.push_back(row.zero_filled);
      if (row.lr_upsampled) {
        lr.push_back(*row.lr_upsampled);
      }
    }
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    json r{{"id", examples[i].sample.id}, {"model", report_json(model[i])}};
    if (a.zero_filling) {
      r["zero_filled"] = report_json(zf[i]);
    }
    if (lr.size() == examples.size()) {
      r["lr_upsampled"] = report_json(lr[i]);
    }
    per_sample.push_back(r);
  }
  json doc{{"checkpoint", a.checkpoint}, {"stage", a.stage}, {"per_sample", per_sample}, {"aggregate", {{"model", aggregate(model)}}}};
  if (a.zero_filling) {
    doc["aggregate"]["zero_filled"] = aggregate(zf);
  }
  if (!lr.empty() && lr.size() == examples.size()) {
    doc["aggregate"]["lr_upsampled"] = aggregate(lr);
  }
  fs::create_directories(a.out);
  io::write_json_atomic(fs::path(a.out) / "eval.json", doc);
  auto const &agg = doc["aggregate"]["model"];
  std::cout << "PSNR " << agg["psnr"]["mean"].get<double>() << " ± " << agg["psnr"]["std"].get<double>() << "  SSIM "
            << agg["ssim"]["mean"].get<double>() << " ± " << agg["ssim"]["std"].get<double>() << "  NMSE "
            << agg["nmse"]["mean"].get<double>() << " ± " << agg["nmse"]["std"].get<double>() << "\n";
  return 0;
}

struct ReconArgs
{
  std::string checkpoint;
  std::string input;
  std::string mask;
  std::string out;
  double gain = 10.0;
};

int cmd_recon(ReconArgs const &a)
{
  require(a.gain > 0, "--gain must be positive");
  auto const sample = load_sample(a.input);
  auto const mask = load_mask(a.mask);
  require(sample.k_full.height() == mask.height() && sample.k_full.width() == mask.width(),
          "mask shape does not match the input sample");
  auto const net = network_from_checkpoint(load_checkpoint(a.checkpoint));
  auto const ex = build_example(sample, mask);
  auto const r = reconstruct(net, ex);

  KSpace k_ref = sample.k_full;
  for (auto &v : k_ref.data()) {
    v *= sample.k_full.scale();
  }
  auto const err = abs_error_map(r.magnitude, r.reference);
  auto const kerr = kspace_error_map(r.kspace, k_ref, a.gain);
  double const peak = r.reference.max();
  int const h = r.reference.height();
  int const w = r.reference.width();

  io::StagedDirectory staged(a.out);
  auto const d = staged.path();
  io::write_pgm16(d / "recon.pgm", h, w, display(r.magnitude, peak));
  io::write_pgm16(d / "reference.pgm", h, w, display(r.reference, peak));
  io::write_pgm16(d / "zero_filled.pgm", h, w, display(r.zero_filled, peak));
  io::write_pgm16(d / "abs_error.pgm", h, w, display(err, peak));
  io::write_pgm16(d / "kspace_error.pgm", h, w, {kerr.data().begin(), kerr.data().end()});
  save_real_grid(r.magnitude, d / "recon_magnitude", sample.id);
  save_complex_grid(r.image, d / "recon_image", sample.id);
  save_complex_grid(r.kspace, d / "recon_kspace", sample.id);
  save_real_grid(err, d / "abs_error", sample.id);
  save_real_grid(kerr, d / "kspace_error", sample.id);
  io::write_json_atomic(d / "recon.json", json{{"id", sample.id},
                                               {"model", report_json(evaluate(r.magnitude, r.reference))},
                                               {"zero_filled", report_json(evaluate(r.zero_filled, r.reference))},
                                               {"kspace_error_gain", a.gain},
                                               {"display_peak", peak}});
  staged.commit();
  std::cout << json{{"dir", a.out}}.dump() << "\n";
  return 0;
}

struct AblateArgs
{
  std::string config;
  std::string disable;
  bool compare = false;
};

double validation_psnr(ExperimentConfig const &cfg, fs::path const &ckpt)
{
  auto [train, val] = load_datasets(cfg);
  Trainer t(cfg, std::move(train), std::move(val));
  t.restore(load_checkpoint(ckpt));
  std::vector<double> p;
  for (auto const &row : evaluate_examples(t.network(), t.validation_examples(), 4, cfg.training.threads)) {
    p.push_back(row.model.psnr_db);
  }
  return mean_std(p).mean;
}

int cmd_ablate(AblateArgs const &a)
{
  auto base = read_config(a.config);
  require(base.dataset.val_count > 0 || !base.dataset.val_path.empty(), "ablation needs a held-out set (dataset.val_count)");
  try {
    base.model.disable = parse_ablation(a.disable);
  } catch (Error const &e) {
    throw Invalid(e.what());
  }
  require(base.model.disable != Ablation::none, "--disable must name a module");
  auto ablated = base;
  ablated.output.dir = (fs::path(base.output.dir) / ("ablate-" + a.disable)).string();
  auto const s = run_training(ablated, std::nullopt, print_epoch);
  double const psnr = validation_psnr(ablated, s.final_checkpoint);
  json doc{{"disabled", a.disable}, {"val_psnr", psnr}};
  if (a.compare) {
    auto full = base;
    full.model.disable = Ablation::none;
    full.output.dir = (fs::path(base.output.dir) / "full").string();
    auto const fs_ = run_training(full, std::nullopt, print_epoch);
    double const full_psnr = validation_psnr(full, fs_.final_checkpoint);
    doc["full_val_psnr"] = full_psnr;
    if (full_psnr < psnr) {
      std::cerr << "warning: full model (" << full_psnr << " dB) is below the " << a.disable << " ablation (" << psnr
                << " dB)\n";
    }
  }
  io::write_json_atomic(output_dir(ablated) / "ablation.json", doc);
  std::cout << doc.dump() << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Image-guided continuous k-space recovery"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto *s = app.add_subcommand("synth", "Write synthetic phantom samples");
  s->add_option("--count", synth.count, "Number of samples")->capture_default_str();
  s->add_option("--size", synth.size, "Square grid size (even, >= 16)")->capture_default_str();
  s->add_option("--seed", synth.seed, "Seed of the first phantom")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();

  MaskArgs mask;
  auto *m = app.add_subcommand("mask", "Generate a sampling mask");
  m->add_option("--family", mask.family, "cartesian1d | gaussian2d | random2d")->capture_default_str();
  m->add_option("--ratio", mask.ratio, "Sampling ratio")->capture_default_str();
  m->add_option("--acs", mask.acs, "Fully sampled center fraction (family default if absent)");
  m->add_option("--size", mask.size, "HxW or N")->capture_default_str();
  m->add_option("--seed", mask.seed, "Mask seed")->capture_default_str();
  m->add_option("--out", mask.out, "Output stem (writes .bin and .json)")->required();
  m->add_flag("--check", mask.check, "Verify the ACS region and print a report");

  std::string train_config;
  std::optional<std::string> resume;
  auto *t = app.add_subcommand("train", "Train from a configuration file");
  t->add_option("--config", train_config, "Configuration JSON")->required();
  t->add_option("--resume", resume, "Checkpoint directory to continue from");

  EvalArgs eval;
  auto *e = app.add_subcommand("eval", "Evaluate a checkpoint on a sample directory");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory");
  e->add_option("--data", eval.data, "Sample directory")->required();
  e->add_option("--mask", eval.mask, "Mask file")->required();
  e->add_option("--out", eval.out, "Output directory")->required();
  e->add_flag("--zero-filling", eval.zero_filling, "Add the zero-filling baseline");
  e->add_flag("--ground-truth", eval.ground_truth, "Score the references against themselves");
  e->add_option("--stage", eval.stage, "Evaluate the output after this stage")->capture_default_str();
  e->add_option("--threads", eval.threads, "Worker threads (KINR_THREADS overrides)")->capture_default_str();

  ReconArgs recon;
  auto *r = app.add_subcommand("recon", "Reconstruct one sample and write images and error maps");
  r->add_option("--checkpoint", recon.checkpoint, "Checkpoint directory")->required();
  r->add_option("--input", recon.input, "Sample path")->required();
  r->add_option("--mask", recon.mask, "Mask file")->required();
  r->add_option("--out", recon.out, "Output directory")->required();
  r->add_option("--gain", recon.gain, "k-space error map gain")->capture_default_str();

  AblateArgs ablate;
  auto *a = app.add_subcommand("ablate", "Train and evaluate with one module disabled");
  a->add_option("--config", ablate.config, "Configuration JSON")->required();
  a->add_option("--disable", ablate.disable, "lrit-lr | hrit | idgm | tarm")->required();
  a->add_flag("--compare", ablate.compare, "Also train the full model and warn if it scores lower");

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &err) {
    int const code = app.exit(err);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*s) {
      return cmd_synth(synth);
    }
    if (*m) {
      return cmd_mask(mask);
    }
    if (*t) {
      return cmd_train(train_config, resume);
    }
    if (*e) {
      return cmd_eval(eval);
    }
    if (*r) {
      return cmd_recon(recon);
    }
    return cmd_ablate(ablate);
  } catch (ConfigError const &err) {
    std::cerr << "invalid: " << err.what() << "\n";
    return kExitValidation;
  } catch (std::exception const &err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
}
