/*
 * Copyright 2026 The StarPrompt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "starprompt/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "starprompt/errors.hpp"

namespace starprompt {

void ExperimentConfig::validate() const {
  scenario.validate();
  hyperparams.validate();
  variant.validate();
  encoder.validate();
  if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
  std::vector<std::uint64_t> sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("config: duplicate seed");
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys{
      {"scenario.kind", "separable | bimodal | feature_file"},
      {"scenario.tasks", "number of tasks T"},
      {"scenario.classes_per_task", "classes per task N"},
      {"scenario.train_per_class", "training samples per class"},
      {"scenario.test_per_class", "test samples per class"},
      {"scenario.separation", "per-coordinate scale of class centers"},
      {"scenario.noise", "per-coordinate sample noise"},
      {"scenario.mode_separation", "bimodal: scale of the offset between a class's two modes"},
      {"scenario.seed", "data generation seed"},
      {"scenario.path", "feature file for scenario.kind = feature_file"},
      {"preset", "hyperparameter preset (desk, imagenet_r, cifar100, ...)"},
      {"variant", "full | first_level_only | no_first_level | prefix_tuning | no_replay | unimodal | no_conf_mod"},
      {"seeds", "comma-separated run seeds; each permutes the class order"},
      {"out", "output directory"},
      {"checkpoint", "true to save the final trainer state per seed"},
      {"hp.epochs_main", "E1"},
      {"hp.epochs_replay", "E2"},
      {"hp.lambda_stage1", "orthogonality weight, first stage"},
      {"hp.lambda_stage2", "orthogonality weight, second stage"},
      {"hp.lr_stage1", "learning rate, first stage"},
      {"hp.lr_stage2", "learning rate, second stage"},
      {"hp.components", "mixture components M"},
      {"hp.n_replay", "synthetic samples per class"},
      {"hp.batch_size", "mini-batch size"},
      {"hp.covariance", "diagonal | full"},
      {"hp.query", "weighted | weighted_raw | unweighted"},
      {"hp.ortho", "absolute | raw"},
      {"hp.residual_target", "all_tokens | cls_only"},
      {"hp.prefix_tokens", "prefix-tuning tokens per layer for keys and for values"},
      {"encoder.d", "text/vision embedding width"},
      {"encoder.d_prime", "main transformer width"},
      {"encoder.layers", "main transformer depth"},
      {"encoder.heads", "main transformer attention heads"},
      {"encoder.seq_len", "main transformer tokens (patches + 1)"},
      {"encoder.patch_dim", "raw features per patch"},
      {"encoder.mlp_ratio", "MLP hidden width multiplier"},
      {"encoder.text_layers", "text encoder depth"},
      {"encoder.text_heads", "text encoder heads"},
      {"encoder.vision_layers", "vision encoder depth"},
      {"encoder.vision_heads", "vision encoder heads"},
      {"encoder.tau", "similarity temperature"},
      {"encoder.seed", "seed of the frozen weights"},
  };
  return keys;
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = value.data() + value.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = static_cast<T>(std::stod(value, &used));
      if (used != value.size()) throw std::invalid_argument(value);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
    }
  } else {
    res = std::from_chars(begin, end, out);
    if (res.ec != std::errc() || res.ptr != end) {
      throw ConfigError("config: " + key + " expects a non-negative integer, got '" + value + "'");
    }
    return out;
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
}

std::vector<std::uint64_t> parse_seeds(const std::string& value) {
  std::vector<std::uint64_t> out;
  std::stringstream in(value);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(parse_number<std::uint64_t>("seeds", part));
  }
  return out;
}

void flatten(const nlohmann::json& j, const std::string& prefix, ConfigEntries& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& v = it.value();
    if (v.is_object()) {
      flatten(v, key, out);
    } else if (v.is_array()) {
      std::string joined;
      for (const auto& e : v) {
        if (!joined.empty()) joined += ",";
        joined += e.is_string() ? e.get<std::string>() : e.dump();
      }
      out.emplace_back(key, joined);
    } else if (v.is_string()) {
      out.emplace_back(key, v.get<std::string>());
    } else {
      out.emplace_back(key, v.dump());
    }
  }
}

}  // namespace

void apply_config_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto& s = c.scenario;
  auto& hp = c.hyperparams;
  auto& e = c.encoder;
  using u64 = std::uint64_t;
  using sz = std::size_t;
  if (key == "scenario.kind") s.kind = parse_scenario_kind(value);
  else if (key == "scenario.tasks") s.num_tasks = parse_number<sz>(key, value);
  else if (key == "scenario.classes_per_task") s.classes_per_task = parse_number<sz>(key, value);
  else if (key == "scenario.train_per_class") s.train_per_class = parse_number<sz>(key, value);
  else if (key == "scenario.test_per_class") s.test_per_class = parse_number<sz>(key, value);
  else if (key == "scenario.separation") s.separation = parse_number<double>(key, value);
  else if (key == "scenario.noise") s.noise = parse_number<double>(key, value);
  else if (key == "scenario.mode_separation") s.mode_separation = parse_number<double>(key, value);
  else if (key == "scenario.seed") s.seed = parse_number<u64>(key, value);
  else if (key == "scenario.path") s.path = value;
  else if (key == "preset") {
    c.preset = value;
    hp = starprompt::preset(value);
  } else if (key == "variant") c.variant = VariantFlags::from_name(value);
  else if (key == "seeds") c.seeds = parse_seeds(value);
  else if (key == "out") c.out = value;
  else if (key == "checkpoint") c.save_checkpoints = parse_bool(key, value);
  else if (key == "hp.epochs_main") hp.epochs_main = parse_number<sz>(key, value);
  else if (key == "hp.epochs_replay") hp.epochs_replay = parse_number<sz>(key, value);
  else if (key == "hp.lambda_stage1") hp.lambda_stage1 = parse_number<double>(key, value);
  else if (key == "hp.lambda_stage2") hp.lambda_stage2 = parse_number<double>(key, value);
  else if (key == "hp.lr_stage1") hp.lr_stage1 = parse_number<double>(key, value);
  else if (key == "hp.lr_stage2") hp.lr_stage2 = parse_number<double>(key, value);
  else if (key == "hp.components") hp.components = parse_number<sz>(key, value);
  else if (key == "hp.n_replay") hp.n_replay = parse_number<sz>(key, value);
  else if (key == "hp.batch_size") hp.batch_size = parse_number<sz>(key, value);
  else if (key == "hp.covariance") hp.covariance = parse_covariance(value);
  else if (key == "hp.query") hp.query = parse_query_mode(value);
  else if (key == "hp.ortho") hp.ortho = parse_ortho_mode(value);
  else if (key == "hp.residual_target") hp.residual_target = parse_residual_target(value);
  else if (key == "hp.prefix_tokens") hp.prefix_tokens = parse_number<sz>(key, value);
  else if (key == "encoder.d") e.d = parse_number<sz>(key, value);
  else if (key == "encoder.d_prime") e.d_prime = parse_number<sz>(key, value);
  else if (key == "encoder.layers") e.layers = parse_number<sz>(key, value);
  else if (key == "encoder.heads") e.heads = parse_number<sz>(key, value);
  else if (key == "encoder.seq_len") e.seq_len = parse_number<sz>(key, value);
  else if (key == "encoder.patch_dim") e.patch_dim = parse_number<sz>(key, value);
  else if (key == "encoder.mlp_ratio") e.mlp_ratio = parse_number<sz>(key, value);
  else if (key == "encoder.text_layers") e.text_layers = parse_number<sz>(key, value);
  else if (key == "encoder.text_heads") e.text_heads = parse_number<sz>(key, value);
  else if (key == "encoder.vision_layers") e.vision_layers = parse_number<sz>(key, value);
  else if (key == "encoder.vision_heads") e.vision_heads = parse_number<sz>(key, value);
  else if (key == "encoder.tau") e.tau = parse_number<double>(key, value);
  else if (key == "encoder.seed") c.encoder_seed = parse_number<u64>(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text, const ConfigEntries& overrides) {
  ConfigEntries entries;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(std::string("config: invalid JSON: ") + ex.what());
    }
    flatten(j, "", entries);
  } else {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
      }
      entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  entries.insert(entries.end(), overrides.begin(), overrides.end());
  ExperimentConfig config;
  // The preset goes first so explicit hp.* keys override it regardless of order.
  for (const auto& [k, v] : entries) {
    if (k == "preset") apply_config_key(config, k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "preset") apply_config_key(config, k, v);
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ConfigEntries& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- running

SeedResult run_seed(const ExperimentConfig& config, const ClassPool& pool,
                    const std::shared_ptr<const FrozenStack>& stack, std::uint64_t seed, const ProgressFn& progress,
                    const TaskObserver& observer) {
  const TaskStream stream =
      build_stream(pool, class_order_for_seed(pool, seed), config.scenario.classes_per_task);
  stream.validate(stack->config.input_dim());
  const std::size_t tasks = stream.tasks.size();

  Trainer trainer(stack, config.hyperparams, config.variant, seed);
  SeedResult result;
  result.seed = seed;
  result.accuracy = AccuracyMatrix(tasks);
  const auto owner = stream.class_to_task();
  for (std::size_t t = 0; t < tasks; ++t) {
    const StageLog& log = trainer.train_task(stream.tasks[t], stream.class_names);
    result.stage2_train_accuracy.push_back(log.stage2_train_accuracy);
    if (observer) observer(trainer, stream.tasks[t]);
    const std::size_t before = result.records.size();
    evaluate_after_task(trainer, stream, static_cast<int>(t), result.accuracy, result.records);
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t k = before; k < result.records.size(); ++k) {
      const auto& r = result.records[k];
      if (r.task != 0) continue;
      ++total;
      if (owner.at(r.selected_class) == 0) ++hits;
    }
    result.first_task_precision.push_back(static_cast<double>(hits) / static_cast<double>(total));
    if (progress) {
      std::ostringstream msg;
      msg << "seed " << seed << " task " << t << ": mean accuracy so far "
          << format_fixed(std::accumulate(result.records.begin() + static_cast<std::ptrdiff_t>(before),
                                          result.records.end(), 0.0,
                                          [](double acc, const PredictionRecord& r) {
                                            return acc + (r.predicted == r.label ? 1.0 : 0.0);
                                          }) /
                          static_cast<double>(result.records.size() - before));
      progress(msg.str());
    }
  }
  result.final_confusion = retrieval_confusion(result.records, owner, static_cast<int>(tasks) - 1);
  result.faa = faa(result.accuracy);
  if (tasks > 1) result.final_forgetting = final_forgetting(result.accuracy);
  if (config.save_checkpoints && !config.out.empty()) {
    trainer.save(config.out / ("checkpoint_seed" + std::to_string(seed)), config.encoder_seed);
  }
  return result;
}

RunReport run(const ExperimentConfig& config, const ProgressFn& progress) {
  config.validate();
  const ClassPool pool = generate_pool(config.scenario, config.encoder.input_dim());
  auto stack = std::make_shared<const FrozenStack>(build_stack(config.encoder, config.encoder_seed));
  std::vector<std::uint64_t> seeds = config.seeds;
  std::sort(seeds.begin(), seeds.end());

  RunReport report;
  report.variant = config.variant.name();
  std::vector<double> faas;
  std::vector<double> ffs;
  for (std::uint64_t seed : seeds) {
    try {
      report.seeds.push_back(run_seed(config, pool, stack, seed, progress));
    } catch (const Error& e) {
      throw Error("run (variant " + report.variant + ", seed " + std::to_string(seed) + "): " + e.what());
    }
    faas.push_back(report.seeds.back().faa);
    if (report.seeds.back().final_forgetting) ffs.push_back(*report.seeds.back().final_forgetting);
  }
  report.faa = summarize(faas);
  if (!ffs.empty()) report.final_forgetting = summarize(ffs);
  if (!config.out.empty()) write_report(config.out, report.variant, report.seeds);
  return report;
}

std::vector<RunReport> ablate(const ExperimentConfig& config, const ProgressFn& progress) {
  std::vector<RunReport> reports;
  for (const std::string& name : VariantFlags::all_names()) {
    ExperimentConfig c = config;
    c.variant = VariantFlags::from_name(name);
    if (!config.out.empty()) c.out = config.out / name;
    if (progress) progress("variant " + name);
    reports.push_back(run(c, progress));
  }
  if (!config.out.empty()) {
    const auto path = config.out / "ablation.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out << ablation_csv(reports);
  }
  return reports;
}

std::string ablation_csv(const std::vector<RunReport>& reports) {
  std::ostringstream out;
  out << "variant,faa_mean,faa_std,ff_mean,ff_std\n";
  for (const auto& r : reports) {
    out << r.variant << "," << format_fixed(r.faa.mean) << "," << format_fixed(r.faa.std) << ",";
    if (r.final_forgetting) {
      out << format_fixed(r.final_forgetting->mean) << "," << format_fixed(r.final_forgetting->std);
    } else {
      out << ",";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace starprompt
