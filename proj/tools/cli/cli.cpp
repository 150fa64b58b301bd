#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "plot.hpp"
#include "viva/binclass.hpp"
#include "viva/dataset.hpp"
#include "viva/errors.hpp"
#include "viva/evaluation.hpp"
#include "viva/hash.hpp"
#include "viva/sampler.hpp"
#include "viva/sim.hpp"
#include "viva/trainer.hpp"

namespace viva::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

LatentGeometry parse_latent(const std::string& text) {
  const auto parts = split(text, 'x');
  if (parts.size() != 3) throw ValidationError("--latent expects HxWxC, got '" + text + "'");
  try {
    return {std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2])};
  } catch (const std::exception&) {
    throw ValidationError("--latent expects integers, got '" + text + "'");
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

// Every option of a subcommand with its effective value, in a form --config accepts.
json run_config(const CLI::App& app) {
  json j;
  j["command"] = app.get_name();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      if (opt->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll) {
        j[name] = results;
      } else if (opt->get_type_size() == 0) {
        j[name] = true;
      } else {
        j[name] = results.back();
      }
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

std::string magic_of(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  std::string magic(4, '\0');
  in.read(magic.data(), 4);
  if (!in) throw FormatError("truncated checkpoint " + path.string());
  return magic;
}

struct LoadedModel {
  std::unique_ptr<ValueEstimator> estimator;
  std::vector<std::string> train_shapes;
  std::string sha256;
  fs::path path;
};

LoadedModel load_model(const fs::path& path, const SamplerConfig& sampler) {
  LoadedModel m;
  m.path = path;
  m.sha256 = file_sha256(path);
  const std::string magic = magic_of(path);
  if (magic == "VIVA") {
    auto model = std::make_unique<VivaModel>(VivaModel::load(path, sampler));
    m.train_shapes = model->train_shapes();
    m.estimator = std::move(model);
  } else if (magic == "VBCL") {
    auto model = std::make_unique<BaselineModel>(BaselineModel::load(path));
    m.train_shapes = model->train_shapes();
    m.estimator = std::move(model);
  } else {
    throw FormatError("unknown checkpoint magic in " + path.string());
  }
  return m;
}

// ---- gen-data ----

struct GenDataArgs {
  int n_success = 100;
  int n_failure = 100;
  std::uint64_t seed = 7;
  std::string out;
  std::string object_shape = "square";
  int min_length = 60;
  int max_length = 140;
  double noise = 0.01;
  std::string failure_kinds = "drop,misplace,stall";
};

void register_gen_data(CLI::App& app, GenDataArgs& a) {
  app.add_option("--n-success", a.n_success, "successful episodes")->capture_default_str();
  app.add_option("--n-failure", a.n_failure, "failed episodes")->capture_default_str();
  app.add_option("--seed", a.seed, "corpus seed")->capture_default_str();
  app.add_option("--out", a.out, "dataset directory")->required();
  app.add_option("--object-shape", a.object_shape, "square (training variant) or triangle (held-out variant)")
      ->check(CLI::IsMember({"square", "triangle"}))
      ->capture_default_str();
  app.add_option("--min-length", a.min_length, "shortest episode T")->capture_default_str();
  app.add_option("--max-length", a.max_length, "longest episode T")->capture_default_str();
  app.add_option("--noise", a.noise, "joint tracking noise scale")->capture_default_str();
  app.add_option("--failure-kinds", a.failure_kinds, "comma-separated subset of drop,misplace,stall")
      ->capture_default_str();
}

int cmd_gen_data(const CLI::App& app, const GenDataArgs& a) {
  if (a.n_success < 0 || a.n_failure < 0) throw ValidationError("episode counts must be non-negative");
  if (a.n_success + a.n_failure == 0) throw ValidationError("--n-success and --n-failure are both 0");
  sim::CorpusOptions options;
  options.min_length = a.min_length;
  options.max_length = a.max_length;
  options.noise_scale = a.noise;
  options.variant = a.object_shape == "triangle" ? sim::held_out_variant() : sim::default_variant();
  options.failure_kinds.clear();
  for (const auto& k : split(a.failure_kinds, ',')) options.failure_kinds.push_back(failure_kind_from_string(k));
  const auto corpus = sim::generate_corpus(a.n_success, a.n_failure, a.seed, options);
  const ManifestSummary s = write_dataset(corpus, a.out);
  write_json(fs::path(a.out) / "runconfig.json", run_config(app));
  std::printf("dataset %s\n", a.out.c_str());
  std::printf("  episodes %d (success %d, failure %d)\n", s.episodes, s.successes, s.episodes - s.successes);
  std::printf("  steps %lld, proprio dim %d, views 3x%dx%d\n", s.steps, s.proprio_dim, s.height, s.width);
  std::string shapes;
  for (const auto& shape : s.object_shapes) shapes += (shapes.empty() ? "" : ",") + shape;
  std::printf("  object shapes %s\n", shapes.c_str());
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string model = "viva";
  std::string data;
  int steps = 20000;
  int batch = 32;
  double lr = 1e-4;
  int warmup = 0;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  int horizon = 50;
  double lambda_prop = 1.0;
  double lambda_val = 0.5;
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 4;
  int token_patch = 2;
  std::string latent = "8x8x4";
  std::uint64_t encoder_seed = 0x1DEA;
  int hidden = 0;
  std::string out = "runs";
  std::string run_name;
};

void register_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--model", a.model, "viva, viva-noprop (lambda_prop forced to 0) or binclass")
      ->check(CLI::IsMember({"viva", "viva-noprop", "binclass"}))
      ->capture_default_str();
  app.add_option("--data", a.data, "training dataset directory")->required();
  app.add_option("--steps", a.steps)->capture_default_str();
  app.add_option("--batch", a.batch)->capture_default_str();
  app.add_option("--lr", a.lr, "peak step size (cosine decay)")->capture_default_str();
  app.add_option("--warmup", a.warmup, "linear warmup steps")->capture_default_str();
  app.add_option("--seed", a.seed)->capture_default_str();
  app.add_option("--grad-clip", a.grad_clip, "global gradient-norm clip, <= 0 disables")->capture_default_str();
  app.add_option("--horizon", a.horizon, "prediction horizon K")->capture_default_str();
  app.add_option("--lambda-prop", a.lambda_prop)->capture_default_str();
  app.add_option("--lambda-val", a.lambda_val)->capture_default_str();
  app.add_option("--layers", a.layers)->capture_default_str();
  app.add_option("--width", a.width)->capture_default_str();
  app.add_option("--heads", a.heads)->capture_default_str();
  app.add_option("--mlp-ratio", a.mlp_ratio)->capture_default_str();
  app.add_option("--token-patch", a.token_patch, "latent cells per token side")->capture_default_str();
  app.add_option("--latent", a.latent, "latent geometry HxWxC")->capture_default_str();
  app.add_option("--encoder-seed", a.encoder_seed, "fixed image encoder seed")->capture_default_str();
  app.add_option("--hidden", a.hidden, "binclass hidden width; 0 matches the ViVa parameter count")
      ->capture_default_str();
  app.add_option("--out", a.out, "base directory for run outputs")->capture_default_str();
  app.add_option("--run-name", a.run_name, "run directory name (default: timestamped)");
}

ModelConfig model_config_from(const TrainArgs& a) {
  ModelConfig c;
  c.layers = a.layers;
  c.width = a.width;
  c.heads = a.heads;
  c.mlp_ratio = a.mlp_ratio;
  c.token_patch = a.token_patch;
  c.latent = parse_latent(a.latent);
  c.horizon = a.horizon;
  return c;
}

int cmd_train(const CLI::App& app, const TrainArgs& a) {
  TrainSchedule schedule;
  schedule.steps = a.steps;
  schedule.batch = a.batch;
  schedule.lr = a.lr;
  schedule.warmup = a.warmup;
  schedule.seed = a.seed;
  schedule.grad_clip = a.grad_clip;
  schedule.validate();
  ModelConfig config = model_config_from(a);
  const auto corpus = read_dataset(a.data);
  if (corpus.empty()) throw ValidationError("empty dataset " + a.data);
  config.proprio_dim = static_cast<int>(corpus.front().steps.front().proprio.dim());
  config.validate();

  const fs::path dir = make_run_dir(a.out, "train", a.run_name.empty() ? std::nullopt : std::optional(a.run_name));
  json rc = run_config(app);
  const fs::path ckpt = dir / "model.ckpt";
  const fs::path csv = dir / "metrics.csv";

  if (a.model == "binclass") {
    BaselineOptions options;
    options.config.latent = config.latent;
    options.schedule = schedule;
    options.encoder_seed = a.encoder_seed;
    if (a.hidden > 0) {
      options.config.hidden = a.hidden;
    } else {
      options.match_params = count_params(config);
    }
    const auto ck = train_baseline(corpus, options, csv);
    save_baseline(ck, ckpt);
    rc["resolved_hidden"] = ck.config.hidden;
    rc["parameter_count"] = ck.params.size();
  } else {
    TrainOptions options;
    options.model = config;
    options.schedule = schedule;
    options.encoder_seed = a.encoder_seed;
    options.weights = {a.lambda_prop, a.lambda_val};
    if (a.model == "viva-noprop") {
      if (app.count("--lambda-prop") > 0 && a.lambda_prop != 0.0) {
        spdlog::warn("viva-noprop: ignoring --lambda-prop {}", a.lambda_prop);
      }
      options.weights.prop = 0.0;
      spdlog::info("viva-noprop: lambda_prop forced to 0 (no future proprioception loss)");
    }
    options.weights.validate();
    Checkpoint ck = train(corpus, options, csv);
    ck.model_kind = a.model;
    save_checkpoint(ck, ckpt);
    rc["effective_lambda_prop"] = options.weights.prop;
    rc["parameter_count"] = ck.params.size();
  }
  write_json(dir / "runconfig.json", rc);
  std::printf("checkpoint %s\nmetrics %s\n", ckpt.c_str(), csv.c_str());
  return 0;
}

// ---- eval / ood ----

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  int stride = 1;
  std::uint64_t seed = 0;
  int n_steps = 1;
  int n_seeds = 1;
  int max_plots = -1;
  std::string out = "runs";
  std::string run_name;
};

void register_eval(CLI::App& app, EvalArgs& a) {
  app.add_option("--checkpoint", a.checkpoints, "model checkpoint (repeatable)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app.add_option("--data", a.data, "evaluation dataset directory")->required();
  app.add_option("--stride", a.stride, "trace stride in steps")->capture_default_str();
  app.add_option("--seed", a.seed, "sampler noise seed")->capture_default_str();
  app.add_option("--n-steps", a.n_steps, "Euler steps for ViVa inference")->capture_default_str();
  app.add_option("--n-seeds", a.n_seeds, "noise draws averaged per ViVa estimate")->capture_default_str();
  app.add_option("--max-plots", a.max_plots, "plot at most this many episodes (-1: all)")->capture_default_str();
  app.add_option("--out", a.out, "base directory for run outputs")->capture_default_str();
  app.add_option("--run-name", a.run_name, "run directory name (default: timestamped)");
}

json metrics_row(const ModelMetrics& m, const LoadedModel& model) {
  json row = {{"model", m.model},
              {"checkpoint_sha256", model.sha256},
              {"episodes", m.episodes},
              {"spearman_mean", m.spearman_mean},
              {"spearman_all", m.spearman_all},
              {"auc_mid_episode", m.auc_mid_episode},
              {"trace_variance", m.trace_variance}};
  row["failure_sensitivity"] = m.failure_sensitivity ? json(*m.failure_sensitivity) : json(nullptr);
  row["failure_sensitivity_positive_fraction"] =
      m.failure_sensitivity_positive_fraction ? json(*m.failure_sensitivity_positive_fraction) : json(nullptr);
  row["failure_sensitivity_by_kind"] = m.failure_sensitivity_by_kind;
  return row;
}

int cmd_eval(const CLI::App& app, const EvalArgs& a, bool ood) {
  if (a.stride < 1) throw ValidationError("--stride must be >= 1");
  SamplerConfig sampler{a.n_steps, a.seed, a.n_seeds};
  sampler.validate();
  std::vector<LoadedModel> models;
  for (const auto& path : a.checkpoints) models.push_back(load_model(path, sampler));

  const ManifestSummary summary = read_manifest_summary(a.data);
  if (ood) {
    for (const auto& m : models) {
      for (const auto& shape : summary.object_shapes) {
        if (std::find(m.train_shapes.begin(), m.train_shapes.end(), shape) != m.train_shapes.end()) {
          throw OverlapError("object shape '" + shape + "' of the OOD corpus was seen in training by " +
                             m.path.string());
        }
      }
    }
  }
  const auto episodes = read_dataset(a.data);

  const fs::path dir = make_run_dir(a.out, ood ? "ood" : "eval", a.run_name.empty() ? std::nullopt : std::optional(a.run_name));
  write_json(dir / "runconfig.json", run_config(app));

  std::vector<ModelMetrics> results;
  json rows = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    spdlog::info("evaluating {} ({}) on {} episodes", models[i].estimator->name(), models[i].path.string(),
                 episodes.size());
    results.push_back(evaluate(*models[i].estimator, episodes, a.stride, a.seed));
    rows.push_back(metrics_row(results.back(), models[i]));
    const fs::path trace_dir = dir / "traces" / (std::to_string(i) + "_" + results.back().model);
    fs::create_directories(trace_dir);
    for (const auto& t : results.back().traces) {
      char name[32];
      std::snprintf(name, sizeof name, "ep_%05zu.csv", t.episode);
      write_trace_csv(trace_dir / name, t.points);
    }
  }

  const json metrics = {{"dataset", {{"episodes", summary.episodes},
                                     {"successes", summary.successes},
                                     {"object_shapes", summary.object_shapes}}},
                        {"stride", a.stride},
                        {"seed", a.seed},
                        {"n_steps", a.n_steps},
                        {"n_seeds", a.n_seeds},
                        {"models", rows}};
  write_json(dir / "metrics.json", metrics);

  const fs::path plot_dir = dir / "plots";
  fs::create_directories(plot_dir);
  const std::size_t n_plots =
      a.max_plots < 0 ? episodes.size() : std::min(episodes.size(), static_cast<std::size_t>(a.max_plots));
  for (std::size_t e = 0; e < n_plots; ++e) {
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < results.size(); ++i) series.push_back({results[i].traces[e].points, series_color(i)});
    std::optional<int> failure;
    if (!episodes[e].success && episodes[e].meta.failure_step >= 0) failure = episodes[e].meta.failure_step;
    char name[32];
    std::snprintf(name, sizeof name, "ep_%05zu.png", e);
    write_trace_plot(plot_dir / name, episodes[e].horizon(), failure, series);
  }

  std::ostringstream report;
  report << "metric definitions\n" << metric_definitions() << "\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& m = results[i];
    const Rgb c = series_color(i);
    report << "[" << i << "] " << m.model << " (" << models[i].path.string() << ", plot colour rgb(" << int(c[0])
           << "," << int(c[1]) << "," << int(c[2]) << "))\n";
    report << std::fixed << std::setprecision(4) << "  spearman_mean " << m.spearman_mean << "\n  spearman_all "
           << m.spearman_all << "\n  auc_mid_episode " << m.auc_mid_episode << "\n  trace_variance "
           << m.trace_variance << "\n";
    if (m.failure_sensitivity) {
      report << "  failure_sensitivity " << *m.failure_sensitivity << " (positive on "
             << *m.failure_sensitivity_positive_fraction * 100.0 << "% of failure episodes)\n";
      for (const auto& [kind, v] : m.failure_sensitivity_by_kind) report << "    " << kind << " " << v << "\n";
    } else {
      report << "  failure_sensitivity n/a\n";
    }
  }
  report << "plots " << n_plots << " in " << plot_dir.string() << "\n";
  std::ofstream(dir / "report.txt") << report.str();
  std::fputs(report.str().c_str(), stdout);
  std::printf("metrics %s\n", (dir / "metrics.json").c_str());
  return 0;
}

}  // namespace

std::vector<std::string> merge_config_args(const json& config, const std::vector<std::string>& cli_args) {
  if (!config.is_object()) throw ValidationError("--config must hold a JSON object");
  std::set<std::string> given;
  for (const auto& arg : cli_args) {
    if (arg.rfind("--", 0) == 0) given.insert(arg.substr(2, arg.find('=') == std::string::npos ? std::string::npos
                                                                                              : arg.find('=') - 2));
  }
  const auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> out;
  for (const auto& [key, value] : config.items()) {
    if (key == "command" || key == "config" || given.count(key) > 0) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back("--" + key);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back("--" + key);
        out.push_back(scalar(v));
      }
    } else if (value.is_null()) {
      continue;
    } else {
      out.push_back("--" + key);
      out.push_back(scalar(value));
    }
  }
  out.insert(out.end(), cli_args.begin(), cli_args.end());
  return out;
}

fs::path make_run_dir(const fs::path& base, const std::string& command, const std::optional<std::string>& run_name) {
  fs::path dir;
  if (run_name) {
    dir = base / *run_name;
  } else {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream stamp;
    stamp << command << "-" << std::put_time(&utc, "%Y%m%d-%H%M%S");
    dir = base / stamp.str();
    for (int i = 1; fs::exists(dir); ++i) dir = base / (stamp.str() + "-" + std::to_string(i));
  }
  fs::create_directories(dir);
  return dir;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"ViVa: video-generation value model, simulator and baselines"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenDataArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  EvalArgs od;
  std::string config_path;
  auto* gen_cmd = app.add_subcommand("gen-data", "simulate a labelled corpus and write it as a dataset");
  auto* train_cmd = app.add_subcommand("train", "train viva, viva-noprop or the binclass baseline");
  auto* eval_cmd = app.add_subcommand("eval", "value traces, plots and metrics for one or more checkpoints");
  auto* ood_cmd = app.add_subcommand("ood", "eval on a held-out task variant, refusing shapes seen in training");
  register_gen_data(*gen_cmd, gen);
  register_train(*train_cmd, tr);
  register_eval(*eval_cmd, ev);
  register_eval(*ood_cmd, od);
  for (auto* sub : {gen_cmd, train_cmd, eval_cmd, ood_cmd}) {
    sub->add_option("--config", config_path, "JSON file of flag values; explicit flags take precedence");
  }

  try {
    // --config is expanded before parsing so its values go through the same
    // validation as flags.
    std::vector<std::string> argv(args.begin() + std::min<std::size_t>(1, args.size()), args.end());
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
      if (argv[i] == "--config" || argv[i].rfind("--config=", 0) == 0) {
        const std::string path = argv[i] == "--config" ? argv[i + 1] : argv[i].substr(9);
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot read config " + path);
        json config;
        try {
          config = json::parse(in);
        } catch (const json::exception& e) {
          throw ValidationError("config " + path + " is not valid JSON: " + e.what());
        }
        if (argv.empty()) break;
        const std::vector<std::string> rest(argv.begin() + 1, argv.end());
        std::vector<std::string> merged = merge_config_args(config, rest);
        merged.insert(merged.begin(), argv.front());
        argv = std::move(merged);
        break;
      }
    }
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);

    if (*gen_cmd) return cmd_gen_data(*gen_cmd, gen);
    if (*train_cmd) return cmd_train(*train_cmd, tr);
    if (*eval_cmd) return cmd_eval(*eval_cmd, ev, false);
    if (*ood_cmd) return cmd_eval(*ood_cmd, od, true);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}

}  // namespace viva::cli
