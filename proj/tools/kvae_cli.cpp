// kvae: train, sample, run experiments and the acceptance checks.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kvae/bytes.hpp"
#include "kvae/config.hpp"
#include "kvae/cvae.hpp"
#include "kvae/error.hpp"
#include "kvae/experiments.hpp"
#include "kvae/report.hpp"
#include "kvae/sampler.hpp"
#include "kvae/verification.hpp"

namespace fs = std::filesystem;
using namespace kvae;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out = "out";
  bool smoke = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value config file");
  app->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
  app->add_flag("--smoke", c.smoke, "start from the small smoke-scale preset");
}

Config build_config(const Common& c) {
  Config cfg = c.smoke ? smoke_config() : Config{};
  if (!c.config_path.empty()) {
    for (const auto& [k, v] : Config::load(c.config_path).entries()) cfg.set(k, v);
  }
  for (const auto& o : c.overrides) cfg.apply_override(o);
  return cfg;
}

int run_sample(const Common& common, const std::string& from, std::size_t count) {
  const Config cfg = build_config(common);
  const CVaeModel model = load_checkpoint((fs::path(from) / "model.cvae").string());
  const LatentAtlas atlas = load_atlas((fs::path(from) / "atlas.katl").string(), decoder_map(model));
  const ExperimentData data = load_experiment_data(cfg, common.seed);
  const SamplerConfig sc = sampler_config_from(cfg);
  const SampleBatch batch = metric_sample(model, atlas, data.eval.items, sc, count, common.seed);

  std::string body = "index";
  const Eigen::Index d = model.dims().latent_dim;
  for (Eigen::Index a = 0; a < d; ++a) body += ",re" + std::to_string(a) + ",im" + std::to_string(a);
  body += ",logdet,prob\n";
  for (std::size_t j = 0; j < batch.selected.size(); ++j) {
    const std::size_t c = batch.selected[j];
    body += std::to_string(j);
    for (Eigen::Index a = 0; a < d; ++a) {
      body += "," + format_double(batch.candidates[c](a).real()) + "," + format_double(batch.candidates[c](a).imag());
    }
    body += "," + format_double(batch.logdets(static_cast<Eigen::Index>(c))) + "," +
            format_double(batch.probs(static_cast<Eigen::Index>(c))) + "\n";
  }
  fs::create_directories(common.out);
  write_csv((fs::path(common.out) / "samples.csv").string(), common.seed, cfg.hash(), body);
  std::printf("%zu samples from %zu candidates (%zu clamped) -> %s\n", batch.selected.size(), batch.candidates.size(),
              batch.clamped, (fs::path(common.out) / "samples.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kahler-geometry complex VAE toolkit"};
  app.require_subcommand(1);

  Common train_opt, sample_opt, exp_opt;
  auto* train_cmd = app.add_subcommand("train", "gradient gate, then train and write model, atlas and metrics");
  add_common(train_cmd, train_opt);

  auto* sample_cmd = app.add_subcommand("sample", "metric-guided sampling from a trained run");
  add_common(sample_cmd, sample_opt);
  std::string from = "out";
  std::size_t count = 100;
  sample_cmd->add_option("--from", from, "directory holding model.cvae and atlas.katl");
  sample_cmd->add_option("--count", count, "number of samples to keep");
  // Sampler knobs are plain config keys; these flags are shorthands for --set.
  for (const char* key : {"alpha", "lambda", "temperature", "jitter", "overdraw"}) {
    sample_cmd->add_option_function<std::string>(
        std::string("--") + key, [&sample_opt, key](const std::string& v) {
          sample_opt.overrides.push_back(std::string(key) + "=" + v);
        },
        std::string("sampler ") + key);
  }
  sample_cmd
      ->add_option_function<std::string>(
          "--normalize", [&sample_opt](const std::string& v) { sample_opt.overrides.push_back("normalize=" + v); },
          "log det normalization")
      ->check(CLI::IsMember({"none", "mean"}));
  sample_cmd
      ->add_option_function<std::string>(
          "--logdet", [&sample_opt](const std::string& v) { sample_opt.overrides.push_back("sampler_logdet=" + v); },
          "log det of the full metric or of its diagonal")
      ->check(CLI::IsMember({"full", "diag"}));

  auto* exp_cmd = app.add_subcommand("experiment", "run one experiment");
  add_common(exp_cmd, exp_opt);
  std::string exp_id;
  exp_cmd->add_option("id", exp_id, "experiment id")->required()->check(CLI::IsMember(kExperimentIds));

  auto* verify_cmd = app.add_subcommand("verify", "run the acceptance criteria");
  AcceptanceOptions vopt;
  std::vector<int> only;
  verify_cmd->add_option("--seed", vopt.seed, "master seed");
  verify_cmd->add_option("--work-dir", vopt.work_dir, "scratch directory for experiment outputs");
  verify_cmd->add_option("--only", only, "criterion ids to run")->delimiter(',');
  verify_cmd->add_flag("--quick-outliers", vopt.quick_outliers, "run the outlier criterion at smoke scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; malformed arguments are input errors.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd || *exp_cmd) {
      const Common& c = *train_cmd ? train_opt : exp_opt;
      ExperimentSpec spec{*train_cmd ? "train" : exp_id, build_config(c), c.out, c.seed};
      std::printf("%s: %s\n", spec.id.c_str(), run_experiment(spec).c_str());
      return 0;
    }
    if (*sample_cmd) return run_sample(sample_opt, from, count);
    if (*verify_cmd) {
      bool all = true;
      for (const CriterionResult& r : run_acceptance(vopt, only)) {
        std::printf("%s\n", format_result(r).c_str());
        std::fflush(stdout);
        all = all && r.passed;
      }
      return all ? 0 : 1;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return is_input_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
