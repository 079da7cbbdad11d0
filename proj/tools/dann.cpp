// Copyright 2026 The dann-emotion Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: corpus generation, training, evaluation,
// experiments, lambda sweeps and gradient checks.
//
// Exit codes: 0 success, 1 invalid input (flags, configs, corpora), 2 any
// other failure. Progress goes to stderr; artifacts go to files only.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dann/config.hpp"
#include "dann/data.hpp"
#include "dann/gradcheck.hpp"
#include "dann/model.hpp"
#include "dann/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFailure = 2;

struct Options {
  std::string config;
  std::string out;
  std::string corpus;  // overrides the config's corpus
  std::string model;   // eval: checkpoint path
  std::uint64_t seed = 0;
  int verbosity = 0;
  int trials = 100;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw dann::ConfigError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw dann::ConfigError(std::string(what) + " not found: " + path);
}

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw dann::ConfigError("missing --out directory");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
  return fs::path(dir);
}

// A corpus named by path (relative to the config file) or generated from
// an inline synthetic block.
dann::Corpus corpus_from(const json& config, const Options& opt, const std::string& where,
                         const dann::CorpusSchema& schema = {}) {
  std::string path = opt.corpus;
  if (path.empty() && config.contains("corpus")) {
    if (!config.at("corpus").is_string()) throw dann::ConfigError(where + ": \"corpus\" must be a path");
    path = (fs::path(opt.config).parent_path() / config.at("corpus").get<std::string>()).string();
  }
  if (!path.empty()) {
    require_file(path, "corpus");
    try {
      return dann::load_corpus(path, schema);
    } catch (const dann::CorpusError& e) {
      throw dann::ConfigError(path + ": " + e.what());
    }
  }
  if (config.contains("synthetic")) {
    return dann::generate_synthetic_corpus(dann::synth_config_from_json(config.at("synthetic"), opt.seed));
  }
  throw dann::ConfigError(where + ": needs \"corpus\" or \"synthetic\"");
}

std::string to_csv(const auto& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

int run_gen(const Options& opt) {
  require_file(opt.config, "--config");
  if (opt.out.empty()) throw dann::ConfigError("missing --out file");
  const dann::Corpus corpus =
      dann::generate_synthetic_corpus(dann::synth_config_from_json(dann::read_json_file(opt.config), opt.seed));
  std::ostringstream text;
  dann::write_corpus(text, corpus);
  dann::write_file_atomic(opt.out, text.str());
  std::cerr << "wrote " << corpus.size() << " conversations (" << corpus.utterance_count()
            << " utterances) to " << opt.out << "\n";
  return kOk;
}

int run_train(const Options& opt) {
  require_file(opt.config, "--config");
  const json cfg = dann::read_json_file(opt.config);
  const std::string where = "train config file";
  dann::detail::require_keys(cfg, where, {"corpus", "synthetic", "setting", "eval_session", "train", "model"});
  const dann::Corpus corpus = corpus_from(cfg, opt, where);
  std::string setting = "TS_1234";
  dann::detail::read_key(cfg, where, "setting", setting);
  dann::ExperimentSpec spec;
  spec.train = dann::train_config_from_json(cfg.value("train", json::object()), opt.seed);
  spec.model = dann::model_config_from_json(cfg.value("model", json::object()));
  dann::detail::read_key(cfg, where, "eval_session", spec.eval_session);
  const fs::path out = prepare_out_dir(opt.out);

  const auto sessions = corpus.sessions();
  const dann::SplitSpec split_spec = dann::parse_setting(setting, sessions);
  const int eval_session = spec.eval_session > 0 ? spec.eval_session : *sessions.rbegin();
  if (!split_spec.test_sessions.contains(eval_session)) {
    throw dann::ConfigError("evaluation session " + std::to_string(eval_session) + " is a training session");
  }
  const dann::CorpusSplit split = dann::split_by_sessions(corpus, split_spec);
  const dann::Corpus unlabeled = dann::strip_emotions(split.test);
  const dann::Corpus eval = dann::select_sessions(split.test, {eval_session});
  dann::DannModel model(dann::model_config_for(spec, corpus, spec.train.lambda), opt.seed);
  if (opt.verbosity > 0) {
    std::cerr << setting << ": " << split.train.size() << " labelled / " << unlabeled.size()
              << " unlabelled conversations, " << model.parameter_count() << " parameters\n";
  }
  const dann::TrainResult result = dann::train(model, split.train, unlabeled, spec.train, &eval, setting);
  dann::write_file_atomic(out / "model.json", dann::checkpoint_string(model));
  dann::write_file_atomic(out / "metrics.csv",
                          to_csv([&](std::ostream& o) { dann::write_results_csv(o, result.history); }));
  const auto& last = result.history.back();
  std::cerr << "epoch " << last.epoch << ": L_y " << last.emotion_loss << ", L_d " << last.domain_loss
            << ", train WA " << last.train_wa << ", eval WA " << last.eval_wa << "\n";
  return kOk;
}

int run_eval(const Options& opt) {
  require_file(opt.config, "--config");
  const json cfg = dann::read_json_file(opt.config);
  const std::string where = "eval config file";
  dann::detail::require_keys(cfg, where, {"corpus", "synthetic", "model", "sessions"});
  std::string model_path = opt.model;
  if (model_path.empty() && cfg.contains("model")) {
    model_path = (fs::path(opt.config).parent_path() / cfg.at("model").get<std::string>()).string();
  }
  require_file(model_path, "model checkpoint");
  const dann::DannModel model = dann::load_checkpoint(model_path);
  dann::CorpusSchema schema;
  schema.emotion_classes = model.config().emotion_classes;
  schema.acoustic_dim = model.config().acoustic_dim;
  schema.lexical_dim = model.config().lexical_dim;
  const dann::Corpus corpus = corpus_from(cfg, opt, where, schema);
  std::vector<int> sessions;
  dann::detail::read_key(cfg, where, "sessions", sessions);
  if (sessions.empty()) sessions.push_back(*corpus.sessions().rbegin());
  const dann::Corpus test = dann::select_sessions(corpus, std::set<int>(sessions.begin(), sessions.end()));
  if (test.empty()) throw dann::ConfigError("no conversations in the requested sessions");
  const dann::EvalResult r = dann::evaluate(model, test);
  const fs::path out = prepare_out_dir(opt.out);
  json per_class = json::array();
  for (double v : r.per_class_accuracy) per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  const json report{{"wa", r.wa},
                    {"utterances", r.count},
                    {"sessions", sessions},
                    {"per_class_accuracy", per_class},
                    {"confusion", r.confusion}};
  dann::write_file_atomic(out / "eval.json", report.dump(2) + "\n");
  std::cerr << "WA " << r.wa << " over " << r.count << " utterances\n";
  return kOk;
}

int run_experiment_cmd(const Options& opt) {
  require_file(opt.config, "--config");
  const json cfg = dann::read_json_file(opt.config);
  const std::string where = "experiment config file";
  dann::detail::require_keys(cfg, where, {"corpus", "synthetic", "settings", "lambdas", "seeds",
                                          "train", "model", "eval_session", "threads"});
  const dann::ExperimentSpec spec = dann::experiment_spec_from_json(cfg, opt.seed, where);
  const dann::Corpus corpus = corpus_from(cfg, opt, where);
  const fs::path out = prepare_out_dir(opt.out);
  const std::size_t total = spec.settings.size() * spec.lambdas.size() * spec.seeds.size();
  std::size_t done = 0;
  const dann::ExperimentResult result = dann::run_experiment(spec, corpus, [&](const dann::RunPlan& p, double wa) {
    ++done;
    if (opt.verbosity > 0) {
      std::cerr << "[" << done << "/" << total << "] " << p.setting << " " << dann::system_name(p.lambda)
                << " seed " << p.seed << ": WA " << dann::format_fixed(wa, 2) << "\n";
    }
  });
  dann::write_file_atomic(out / "results.csv",
                          to_csv([&](std::ostream& o) { dann::write_results_csv(o, result.records); }));
  dann::write_file_atomic(out / "summary.csv",
                          to_csv([&](std::ostream& o) { dann::write_summary_csv(o, spec, result); }));
  dann::write_file_atomic(out / "summary_std.csv",
                          to_csv([&](std::ostream& o) { dann::write_summary_std_csv(o, spec, result); }));
  const std::string table = dann::format_summary_table(spec, result);
  dann::write_file_atomic(out / "summary.txt", table);
  std::cerr << table;
  return kOk;
}

int run_sweep(const Options& opt) {
  require_file(opt.config, "--config");
  const json cfg = dann::read_json_file(opt.config);
  const std::string where = "sweep config file";
  dann::detail::require_keys(cfg, where, {"corpus", "synthetic", "setting", "lambdas", "seeds", "train",
                                          "model", "eval_session", "threads"});
  std::string setting = "TS_23";
  dann::detail::read_key(cfg, where, "setting", setting);
  json base = cfg;
  base.erase("setting");
  base["settings"] = {setting};
  if (!cfg.contains("lambdas")) base["lambdas"] = {0.0, 0.25, 0.5, 1.0, 2.0};
  const dann::ExperimentSpec spec = dann::experiment_spec_from_json(base, opt.seed, where);
  const dann::Corpus corpus = corpus_from(cfg, opt, where);
  const fs::path out = prepare_out_dir(opt.out);
  const auto points = dann::lambda_sweep(spec.lambdas, corpus, setting, spec);
  dann::write_file_atomic(out / "sweep.csv",
                          to_csv([&](std::ostream& o) { dann::write_sweep_csv(o, setting, points); }));
  for (const auto& p : points) {
    std::cerr << "lambda " << dann::format_number(p.lambda) << ": WA " << dann::format_fixed(p.mean_wa, 2)
              << " +- " << dann::format_fixed(p.std_wa, 2) << "\n";
  }
  return kOk;
}

int run_gradcheck(const Options& opt) {
  if (opt.trials < 1) throw dann::ConfigError("--trials must be positive");
  const auto checks = dann::gradient_suite(opt.seed, opt.trials);
  bool ok = true;
  std::ostringstream report;
  report << "layer,max_relative_error,entries\n";
  for (const auto& c : checks) {
    const bool pass = c.report.max_relative_error <= 1e-5;
    ok = ok && pass;
    std::printf("%-16s %.3e  %s\n", c.name.c_str(), c.report.max_relative_error, pass ? "ok" : "FAIL");
    report << c.name << ',' << dann::format_number(c.report.max_relative_error) << ',' << c.report.entries << '\n';
  }
  if (!opt.out.empty()) dann::write_file_atomic(prepare_out_dir(opt.out) / "gradcheck.csv", report.str());
  return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial multimodal emotion recognition"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--seed", opt.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("-v,--verbose", opt.verbosity, "Progress detail on stderr");

  auto with_config = [&opt](CLI::App* sub, const char* out_help) {
    sub->add_option("-c,--config", opt.config, "JSON config file")->required();
    sub->add_option("-o,--out", opt.out, out_help)->required();
    sub->add_option("--seed", opt.seed, "Seed for every random choice");
    sub->add_flag("-v,--verbose", opt.verbosity, "Progress detail on stderr");
  };
  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic corpus (JSONL)");
  with_config(gen, "Output corpus file");
  CLI::App* train = app.add_subcommand("train", "Train one model on a TS_* split");
  with_config(train, "Output directory (model.json, metrics.csv)");
  train->add_option("--corpus", opt.corpus, "Corpus JSONL, overrides the config");
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on held-out sessions");
  with_config(eval, "Output directory (eval.json)");
  eval->add_option("--corpus", opt.corpus, "Corpus JSONL, overrides the config");
  eval->add_option("--model", opt.model, "Checkpoint, overrides the config");
  CLI::App* experiment = app.add_subcommand("experiment", "C1 vs adversarial across TS_* settings");
  with_config(experiment, "Output directory (summary.csv, results.csv, ...)");
  experiment->add_option("--corpus", opt.corpus, "Corpus JSONL, overrides the config");
  CLI::App* sweep = app.add_subcommand("sweep", "Eval WA per lambda on one setting");
  with_config(sweep, "Output directory (sweep.csv)");
  sweep->add_option("--corpus", opt.corpus, "Corpus JSONL, overrides the config");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check per layer");
  gradcheck->add_option("--trials", opt.trials, "Random trials per layer")->capture_default_str();
  gradcheck->add_option("-o,--out", opt.out, "Optional output directory (gradcheck.csv)");
  gradcheck->add_option("--seed", opt.seed, "Seed for every random choice");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return e.get_exit_code() == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) return run_gen(opt);
    if (*train) return run_train(opt);
    if (*eval) return run_eval(opt);
    if (*experiment) return run_experiment_cmd(opt);
    if (*sweep) return run_sweep(opt);
    if (*gradcheck) return run_gradcheck(opt);
  } catch (const dann::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const dann::CorpusError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kFailure;
  }
  return kInvalid;
}
