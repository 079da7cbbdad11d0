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

// Training loop, evaluation, and the C1-vs-adversarial experiment harness.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dann/data.hpp"
#include "dann/model.hpp"
#include "dann/random.hpp"
#include "dann/tensor.hpp"

namespace dann {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 20;  // labelled conversations per optimizer step
  double learning_rate = 1e-4;
  double l2_weight = 1e-5;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  int log_interval = 10;  // epochs between metric records; the last epoch is always logged

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("TrainConfig: " + what); };
    if (epochs < 1) fail("epochs must be positive");
    if (batch_size < 1) fail("batch_size must be positive");
    if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
    if (!(l2_weight >= 0.0)) fail("l2_weight must be non-negative");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    if (log_interval < 1) fail("log_interval must be positive");
  }
};

struct MetricsRecord {
  std::string setting;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  int epoch = 0;
  double emotion_loss = 0.0;  // mean L_y over the epoch's steps
  double domain_loss = 0.0;   // mean L_d over the epoch's steps
  double train_wa = 0.0;
  double eval_wa = std::numeric_limits<double>::quiet_NaN();  // NaN without an eval corpus
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  std::vector<LossBreakdown> steps;
};

struct EvalResult {
  double wa = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the gold labels
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::size_t count = 0;
};

inline EvalResult evaluate(const DannModel& model, const Corpus& test) {
  const std::size_t classes = model.config().emotion_classes;
  EvalResult r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::vector<int> predictions, golds;
  for (const Conversation& conv : test.conversations) {
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      if (!conv.utterances[i].emotion) {
        throw std::invalid_argument("evaluate: utterance " + std::to_string(i) + " of " + conv.id +
                                    " has no emotion label");
      }
    }
    const std::vector<int> predicted = predict(model, conv);
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      const int gold = *conv.utterances[i].emotion;
      if (gold < 0 || gold >= static_cast<int>(classes)) {
        throw std::invalid_argument("evaluate: label " + std::to_string(gold) + " out of range");
      }
      predictions.push_back(predicted[i]);
      golds.push_back(gold);
      r.confusion[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted[i])] += 1;
    }
  }
  r.wa = weighted_accuracy(predictions, golds);
  r.count = golds.size();
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t total =
        std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    r.per_class_accuracy.push_back(total == 0 ? std::numeric_limits<double>::quiet_NaN()
                                              : 100.0 * static_cast<double>(r.confusion[k][k]) /
                                                    static_cast<double>(total));
  }
  return r;
}

// Domain labels cover every speaker the model may see during training.
inline SpeakerIndex training_speakers(const Corpus& labeled, const Corpus& unlabeled) {
  std::set<std::string> all = labeled.speakers();
  const auto extra = unlabeled.speakers();
  all.insert(extra.begin(), extra.end());
  return SpeakerIndex(all);
}

inline std::size_t steps_per_epoch(std::size_t labeled_conversations, int batch_size) {
  return (labeled_conversations + static_cast<std::size_t>(batch_size) - 1) /
         static_cast<std::size_t>(batch_size);
}

// Each epoch shuffles both corpora with seeds derived from (seed, epoch).
// Step j takes the next `batch_size` labelled conversations and the slice of
// the unlabeled order proportional to it, so every unlabeled conversation is
// seen once per epoch and m / (n + m) tracks the corpus-wide ratio.
inline TrainResult train(DannModel& model, const Corpus& labeled, const Corpus& unlabeled,
                         const TrainConfig& cfg, const Corpus* eval = nullptr,
                         const std::string& setting = "") {
  cfg.validate();
  if (labeled.empty()) throw std::invalid_argument("train: labelled corpus is empty");
  model.set_lambda(cfg.lambda);
  const SpeakerIndex speakers = training_speakers(labeled, unlabeled);
  if (model.has_domain_branch() && speakers.size() > model.config().domain_classes) {
    throw std::invalid_argument("train: " + std::to_string(speakers.size()) +
                                " speakers exceed the model's " +
                                std::to_string(model.config().domain_classes) + " domain classes");
  }

  std::vector<const Conversation*> labeled_order, unlabeled_order;
  for (const auto& c : labeled.conversations) labeled_order.push_back(&c);
  for (const auto& c : unlabeled.conversations) unlabeled_order.push_back(&c);
  const std::size_t n_labeled = labeled_order.size();
  const std::size_t n_unlabeled = unlabeled_order.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  AdamState adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<Tensor*> params = model.parameters();
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng labeled_rng(mix_seed(cfg.seed + static_cast<std::uint64_t>(epoch), 0));
    Rng unlabeled_rng(mix_seed(cfg.seed + static_cast<std::uint64_t>(epoch), 1));
    labeled_rng.shuffle(std::span<const Conversation*>(labeled_order));
    unlabeled_rng.shuffle(std::span<const Conversation*>(unlabeled_order));

    double emotion_sum = 0.0, domain_sum = 0.0;
    std::size_t step_count = 0;
    for (std::size_t begin = 0; begin < n_labeled; begin += batch) {
      const std::size_t end = std::min(begin + batch, n_labeled);
      const std::size_t u_begin = begin * n_unlabeled / n_labeled;
      const std::size_t u_end = end * n_unlabeled / n_labeled;
      const std::span<const Conversation* const> labeled_batch(labeled_order.data() + begin,
                                                               end - begin);
      const std::span<const Conversation* const> unlabeled_batch(
          unlabeled_order.data() + u_begin, u_end - u_begin);

      Tape tape;
      const BoundModel bound = bind(tape, model);
      const LossGraph loss =
          combined_loss(tape, bound, model, labeled_batch, unlabeled_batch, speakers, cfg.l2_weight);
      tape.backward(loss.objective);
      std::vector<Tensor> grads;
      grads.reserve(bound.flat.size());
      for (const Var& v : bound.flat) grads.push_back(tape.grad(v));
      adam_step(params, grads, adam);

      result.steps.push_back(loss.breakdown);
      emotion_sum += loss.breakdown.emotion_loss;
      domain_sum += loss.breakdown.domain_loss;
      ++step_count;
    }

    if (epoch % cfg.log_interval == 0 || epoch == cfg.epochs) {
      MetricsRecord rec;
      rec.setting = setting;
      rec.lambda = cfg.lambda;
      rec.seed = cfg.seed;
      rec.epoch = epoch;
      rec.emotion_loss = emotion_sum / static_cast<double>(step_count);
      rec.domain_loss = domain_sum / static_cast<double>(step_count);
      rec.train_wa = evaluate(model, labeled).wa;
      if (eval != nullptr) rec.eval_wa = evaluate(model, *eval).wa;
      result.history.push_back(rec);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSpec {
  std::vector<std::string> settings{"TS_1234", "TS_123", "TS_134", "TS_234", "TS_23"};
  std::vector<double> lambdas{0.0, 1.0};
  std::vector<std::uint64_t> seeds = default_seeds(20);
  TrainConfig train;
  // Feature dims and domain classes are filled in from the corpus.
  ModelConfig model;
  // Evaluation session; 0 means the highest session number in the corpus.
  int eval_session = 0;
  int threads = 1;

  static std::vector<std::uint64_t> default_seeds(std::size_t count) {
    std::vector<std::uint64_t> seeds(count);
    std::iota(seeds.begin(), seeds.end(), std::uint64_t{1});
    return seeds;
  }

  void validate() const {
    if (settings.empty()) throw std::invalid_argument("ExperimentSpec: no settings");
    if (lambdas.empty()) throw std::invalid_argument("ExperimentSpec: no lambda values");
    if (seeds.empty()) throw std::invalid_argument("ExperimentSpec: no seeds");
    for (double l : lambdas) {
      if (!(l >= 0.0)) throw std::invalid_argument("ExperimentSpec: negative lambda");
    }
    if (threads < 1) throw std::invalid_argument("ExperimentSpec: threads must be positive");
    train.validate();
  }
};

struct ExperimentCell {
  std::string setting;
  double lambda = 0.0;
  double mean_wa = 0.0;
  double std_wa = 0.0;  // sample standard deviation, 0 for a single seed
  std::vector<double> wa;  // per seed, in spec order
};

struct ExperimentResult {
  std::vector<MetricsRecord> records;  // every logged epoch of every run
  std::vector<ExperimentCell> cells;   // setting-major, then lambda

  const ExperimentCell& cell(const std::string& setting, double lambda) const {
    for (const auto& c : cells) {
      if (c.setting == setting && c.lambda == lambda) return c;
    }
    throw std::out_of_range("no cell for " + setting);
  }
};

struct RunOutcome {
  std::vector<MetricsRecord> history;
  double eval_wa = 0.0;
};

struct RunPlan {
  std::string setting;
  double lambda;
  std::uint64_t seed;
};

inline ModelConfig model_config_for(const ExperimentSpec& spec, const Corpus& corpus, double lambda) {
  ModelConfig mc = spec.model;
  mc.acoustic_dim = corpus.acoustic_dim();
  mc.lexical_dim = corpus.lexical_dim();
  mc.domain_classes = std::max<std::size_t>(1, corpus.speakers().size());
  mc.domain_branch = true;
  mc.lambda = lambda;
  return mc;
}

// Trains on the named sessions; every other session is the unlabeled pool,
// and the evaluation session (always outside the training sessions) is scored.
inline RunOutcome run_single(const ExperimentSpec& spec, const Corpus& corpus, const RunPlan& plan) {
  const std::set<int> sessions = corpus.sessions();
  const int eval_session = spec.eval_session > 0 ? spec.eval_session : *sessions.rbegin();
  const SplitSpec split_spec = parse_setting(plan.setting, sessions);
  if (!split_spec.test_sessions.contains(eval_session)) {
    throw std::invalid_argument(plan.setting + ": evaluation session " +
                                std::to_string(eval_session) + " is a training session");
  }
  const CorpusSplit split = split_by_sessions(corpus, split_spec);
  const Corpus unlabeled = strip_emotions(split.test);
  const Corpus eval = select_sessions(split.test, {eval_session});

  TrainConfig tc = spec.train;
  tc.lambda = plan.lambda;
  tc.seed = plan.seed;
  DannModel model(model_config_for(spec, corpus, plan.lambda), plan.seed);
  RunOutcome out;
  out.history = train(model, split.train, unlabeled, tc, &eval, plan.setting).history;
  out.eval_wa = out.history.back().eval_wa;
  return out;
}

inline double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// Runs every (setting, lambda, seed) triple. Runs are independent; with
// threads > 1 they are spread over workers and collected in plan order.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const Corpus& corpus,
                                       const std::function<void(const RunPlan&, double)>& progress = {}) {
  spec.validate();
  if (corpus.empty()) throw std::invalid_argument("run_experiment: empty corpus");
  std::vector<RunPlan> plans;
  for (const auto& setting : spec.settings)
    for (double lambda : spec.lambdas)
      for (std::uint64_t seed : spec.seeds) plans.push_back({setting, lambda, seed});
  // Fail fast on malformed settings before any training.
  for (const auto& setting : spec.settings) (void)parse_setting(setting, corpus.sessions());

  std::vector<RunOutcome> outcomes(plans.size());
  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        outcomes[i] = run_single(spec, corpus, plans[i]);
        if (progress) {
          std::lock_guard<std::mutex> lock(mutex);
          progress(plans[i], outcomes[i].eval_wa);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mutex);
        if (!failure) failure = std::current_exception();
        next = plans.size();
      }
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(spec.threads), plans.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentResult result;
  std::size_t i = 0;
  for (const auto& setting : spec.settings) {
    for (double lambda : spec.lambdas) {
      ExperimentCell cell{setting, lambda, 0.0, 0.0, {}};
      for (std::size_t s = 0; s < spec.seeds.size(); ++s, ++i) {
        cell.wa.push_back(outcomes[i].eval_wa);
        result.records.insert(result.records.end(), outcomes[i].history.begin(),
                              outcomes[i].history.end());
      }
      cell.mean_wa = mean_of(cell.wa);
      cell.std_wa = sample_std(cell.wa);
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

struct SweepPoint {
  double lambda = 0.0;
  double mean_wa = 0.0;
  double std_wa = 0.0;
  std::vector<double> wa;
};

inline std::vector<SweepPoint> lambda_sweep(std::span<const double> values, const Corpus& corpus,
                                            const std::string& setting, ExperimentSpec base) {
  if (values.empty()) throw std::invalid_argument("lambda_sweep: no lambda values");
  base.settings = {setting};
  base.lambdas.assign(values.begin(), values.end());
  const ExperimentResult r = run_experiment(base, corpus);
  std::vector<SweepPoint> out;
  for (const auto& c : r.cells) out.push_back({c.lambda, c.mean_wa, c.std_wa, c.wa});
  return out;
}

// ---------------------------------------------------------------------------
// Output formats

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void write_results_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << "setting,lambda,seed,epoch,L_y,L_d,train_wa,eval_wa\n";
  for (const auto& r : records) {
    out << r.setting << ',' << format_number(r.lambda) << ',' << r.seed << ',' << r.epoch << ','
        << format_number(r.emotion_loss) << ',' << format_number(r.domain_loss) << ','
        << format_number(r.train_wa) << ',' << format_number(r.eval_wa) << '\n';
  }
}

inline std::string system_name(double lambda) {
  return lambda == 0.0 ? "C1" : "DANN(lambda=" + format_number(lambda) + ")";
}

// Rows are lambda variants, columns are settings; cells hold mean eval WA.
inline void write_summary_csv(std::ostream& out, const ExperimentSpec& spec,
                              const ExperimentResult& result) {
  out << "system,lambda";
  for (const auto& s : spec.settings) out << ',' << s;
  out << '\n';
  for (double lambda : spec.lambdas) {
    out << system_name(lambda) << ',' << format_number(lambda);
    for (const auto& s : spec.settings) out << ',' << format_fixed(result.cell(s, lambda).mean_wa, 4);
    out << '\n';
  }
}

// Same layout as the summary, cells hold the sample std across seeds.
inline void write_summary_std_csv(std::ostream& out, const ExperimentSpec& spec,
                                  const ExperimentResult& result) {
  out << "system,lambda";
  for (const auto& s : spec.settings) out << ',' << s;
  out << '\n';
  for (double lambda : spec.lambdas) {
    out << system_name(lambda) << ',' << format_number(lambda);
    for (const auto& s : spec.settings) out << ',' << format_fixed(result.cell(s, lambda).std_wa, 4);
    out << '\n';
  }
}

inline std::string format_summary_table(const ExperimentSpec& spec, const ExperimentResult& result) {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-22s", "");
  out << buf;
  for (const auto& s : spec.settings) {
    std::snprintf(buf, sizeof buf, " %16s", s.c_str());
    out << buf;
  }
  out << '\n';
  for (double lambda : spec.lambdas) {
    std::snprintf(buf, sizeof buf, "%-22s", system_name(lambda).c_str());
    out << buf;
    for (const auto& s : spec.settings) {
      const auto& c = result.cell(s, lambda);
      std::snprintf(buf, sizeof buf, " %8.2f +- %5.2f", c.mean_wa, c.std_wa);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

inline void write_sweep_csv(std::ostream& out, const std::string& setting,
                            std::span<const SweepPoint> points) {
  out << "setting,lambda,mean_wa,std_wa,seeds\n";
  for (const auto& p : points) {
    out << setting << ',' << format_number(p.lambda) << ',' << format_fixed(p.mean_wa, 4) << ','
        << format_fixed(p.std_wa, 4) << ',' << p.wa.size() << '\n';
  }
}

}  // namespace dann
