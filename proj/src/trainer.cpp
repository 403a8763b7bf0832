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
#include "starprompt/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <fstream>
#include <set>

#include "json.hpp"
#include "starprompt/errors.hpp"
#include "starprompt/optim.hpp"

namespace starprompt {

using json = nlohmann::json;

// ---------------------------------------------------------------- stream

void TaskStream::validate(std::size_t input_dim) const {
  if (tasks.empty()) throw ConfigError("task stream is empty");
  std::set<int> seen;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TaskData& task = tasks[t];
    const std::string where = "task " + std::to_string(t);
    if (task.index != static_cast<int>(t)) throw ConfigError(where + ": index out of order");
    if (task.classes.empty()) throw ConfigError(where + ": no classes");
    for (int c : task.classes) {
      if (!seen.insert(c).second) throw ConfigError(where + ": class " + std::to_string(c) + " repeated");
    }
    const std::set<int> own(task.classes.begin(), task.classes.end());
    auto check = [&](const Tensor& x, const std::vector<int>& y, const char* split) {
      if (y.empty()) throw ConfigError(where + ": empty " + split + " split");
      if (x.rows() != y.size() || x.cols() != input_dim) {
        throw ShapeError(where + ": " + split + " inputs " + x.shape().str() + " do not match " +
                         std::to_string(y.size()) + " labels of width " + std::to_string(input_dim));
      }
      for (int label : y) {
        if (!own.count(label)) throw LabelError(where + ": label " + std::to_string(label) + " not in task");
      }
    };
    check(task.train_x, task.train_y, "train");
    check(task.test_x, task.test_y, "test");
  }
}

std::size_t TaskStream::total_classes() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.classes.size();
  return n;
}

std::map<int, int> TaskStream::class_to_task() const {
  std::map<int, int> out;
  for (const auto& t : tasks) {
    for (int c : t.classes) out[c] = t.index;
  }
  return out;
}

// ---------------------------------------------------------------- trainer

namespace {

PromptCodebooks make_books(const FrozenStack& stack, const Hyperparams& hp, const VariantFlags& v) {
  return PromptCodebooks(stack.config, v.prefix_tuning ? ConditioningMode::prefix : ConditioningMode::residual,
                         hp.prefix_tokens);
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

Tensor rows_of(const std::vector<Tensor>& rows, std::span<const std::size_t> idx) {
  std::vector<Tensor> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(rows[i]);
  return picked.size() == 1 ? picked.front() : concat_rows(picked);
}

std::vector<int> labels_of(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

Tensor input_row(const Tensor& xs, std::size_t i) {
  return slice_rows(xs, i, 1);
}

std::vector<Tensor> trainable_prompts(const PromptCodebooks& books, std::span<const int> classes, bool first) {
  std::vector<Tensor> out;
  for (int c : classes) {
    const ClassPrompts& e = books.at(c);
    if (first) {
      out.push_back(e.prompt);
    } else {
      out.push_back(e.second);
      out.push_back(e.query_weights);
    }
  }
  return out;
}

void set_prompt_grad(PromptCodebooks& books, std::span<const int> classes, bool prompt, bool second) {
  for (int c : classes) {
    ClassPrompts& e = books.at(c);
    e.prompt.set_requires_grad(prompt);
    e.second.set_requires_grad(second);
    e.query_weights.set_requires_grad(second);
  }
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

namespace {

std::shared_ptr<const FrozenStack> require_stack(std::shared_ptr<const FrozenStack> stack) {
  if (!stack) throw ConfigError("Trainer: missing frozen stack");
  return stack;
}

}  // namespace

Trainer::Trainer(std::shared_ptr<const FrozenStack> stack, Hyperparams hp, VariantFlags variant, std::uint64_t seed)
    : stack_(require_stack(std::move(stack))),
      hp_(hp),
      variant_(variant),
      seed_(seed),
      books_(make_books(*stack_, hp, variant)),
      heads_(stack_->config.d_prime) {
  hp_.validate();
  variant_.validate();
  if (variant_.unimodal) hp_.components = 1;
}

Rng Trainer::stream(std::uint64_t tag) const {
  return Rng(seed_).fork(static_cast<std::uint64_t>(tasks_trained_) * 64 + tag);
}

EmConfig Trainer::em_config(int class_id, std::uint64_t stage) const {
  EmConfig cfg;
  cfg.components = hp_.components;
  cfg.covariance = hp_.covariance;
  cfg.seed = mix64(seed_ ^ mix64(static_cast<std::uint64_t>(class_id) * 2 + stage));
  return cfg;
}

Conditioning Trainer::conditioning_for(const Selection& sel) const {
  Conditioning cond;
  cond.target = hp_.residual_target;
  if (variant_.prefix_tuning) {
    cond.prefix = prefix_tuning_condition(books_, sel);
  } else {
    cond.residuals = build_residual(books_, sel, !variant_.no_conf_mod);
  }
  return cond;
}

Tensor Trainer::features_for(const Tensor& x, const Selection& sel) const {
  return vit_forward(*stack_, x, conditioning_for(sel));
}

PrototypeKeys Trainer::recompute_keys() const {
  if (variant_.no_first_level) {
    return compute_static_keys(books_.classes(), *stack_, names_, hand_crafted_context(stack_->config));
  }
  return compute_keys(books_, *stack_, names_);
}

void Trainer::refresh_keys() {
  keys_ = recompute_keys();
  keys_.valid_through_task = tasks_trained_;
}

const StageLog& Trainer::train_task(const TaskData& task, const std::map<int, std::string>& class_names) {
  if (task.index != tasks_trained_) {
    throw StateError("train_task: expected task " + std::to_string(tasks_trained_) + ", got " +
                     std::to_string(task.index));
  }
  if (task.classes.empty() || task.train_y.empty()) {
    throw ConfigError("train_task: task " + std::to_string(task.index) + " is empty");
  }
  if (task.train_x.rows() != task.train_y.size() || task.train_x.cols() != stack_->config.input_dim()) {
    throw ShapeError("train_task: inputs " + task.train_x.shape().str() + " do not match labels / input width");
  }
  for (int c : task.classes) {
    auto it = class_names.find(c);
    const std::string name = it != class_names.end() ? it->second : "class_" + std::to_string(c);
    class_names_[c] = name;
    names_[c] = class_name_embed(name, stack_->config, c);
    class_task_[c] = task.index;
  }

  Rng init = stream(1);
  books_.extend(task.classes, task.index, init);
  set_prompt_grad(books_, task.classes, false, false);

  std::vector<Tensor> z;
  z.reserve(task.train_y.size());
  for (std::size_t i = 0; i < task.train_y.size(); ++i) z.push_back(vision_encode(*stack_, input_row(task.train_x, i)));

  StageLog log;
  if (!variant_.no_first_level) {
    stage1(task, z, log);
    if (!variant_.no_replay) {
      for (int c : task.classes) {
        std::vector<Tensor> rows;
        for (std::size_t i = 0; i < z.size(); ++i) {
          if (task.train_y[i] == c) rows.push_back(z[i]);
        }
        first_bank_[c] = fit_em(concat_rows(rows), em_config(c, 1)).model;
      }
      stage1_replay(task, log);
    }
  }
  refresh_keys();

  if (!variant_.first_level_only) {
    heads_.add_task(task.index, task.classes);
    stage2(task, z, log);
    if (!variant_.no_replay) stage2_replay(log);
    heads_.freeze_all();
  }

  books_.freeze_all();
  ++tasks_trained_;
  keys_.valid_through_task = tasks_trained_ - 1;
  logs_.push_back(std::move(log));
  return logs_.back();
}

void Trainer::stage1(const TaskData& task, const std::vector<Tensor>& z, StageLog& log) {
  set_prompt_grad(books_, task.classes, true, false);
  Adam opt(trainable_prompts(books_, task.classes, true), AdamConfig{.lr = hp_.lr_stage1});
  const std::vector<int> past = books_.classes_before(task.index);
  Rng rng = stream(2);
  const std::size_t n = z.size();
  for (std::size_t epoch = 0; epoch < hp_.epochs_main; ++epoch) {
    const auto order = shuffled(n, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += hp_.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(hp_.batch_size, n - b));
      std::vector<Tensor> live;
      for (int c : task.classes) live.push_back(live_key(books_, *stack_, names_, c));
      const Tensor keys = concat_rows(live);
      Tensor loss = ce_stage1(keys, task.classes, rows_of(z, idx), labels_of(task.train_y, idx), stack_->config.tau);
      if (!past.empty() && hp_.lambda_stage1 > 0.0) {
        loss = add(loss, scale(ortho_first(books_, task.classes, past, hp_.ortho), hp_.lambda_stage1));
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    log.stage1_main.push_back(total / static_cast<double>(batches));
  }
  set_prompt_grad(books_, task.classes, false, false);
}

void Trainer::stage1_replay(const TaskData& task, StageLog& log) {
  set_prompt_grad(books_, task.classes, true, false);
  Adam opt(trainable_prompts(books_, task.classes, true), AdamConfig{.lr = hp_.lr_stage1});
  const std::vector<int> seen = books_.classes();
  const std::set<int> current(task.classes.begin(), task.classes.end());
  Rng rng = stream(3);
  for (std::size_t epoch = 0; epoch < hp_.epochs_replay; ++epoch) {
    const ReplaySet replay = draw_replay(first_bank_, seen, hp_.n_replay, rng);
    const auto order = shuffled(replay.labels.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += hp_.batch_size) {
      const ReplaySet batch = replay_batch(replay, order, b, std::min(hp_.batch_size, order.size() - b));
      std::vector<Tensor> rows;
      for (int c : seen) {
        rows.push_back(current.count(c) ? live_key(books_, *stack_, names_, c) : keys_.key(c));
      }
      Tensor loss = gr_loss_first(concat_rows(rows), seen, batch, stack_->config.tau);
      opt.zero_grad();
      backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    log.stage1_replay.push_back(total / static_cast<double>(batches));
  }
  set_prompt_grad(books_, task.classes, false, false);
}

void Trainer::stage2(const TaskData& task, const std::vector<Tensor>& z, StageLog& log) {
  set_prompt_grad(books_, task.classes, false, true);
  heads_.freeze_all();
  heads_.set_trainable(task.index, true);
  std::vector<Tensor> params = trainable_prompts(books_, task.classes, false);
  for (const Tensor& p : heads_.parameters(task.index)) params.push_back(p);
  Adam opt(params, AdamConfig{.lr = hp_.lr_stage2});
  const std::vector<int> past = books_.classes_before(task.index);
  Rng rng = stream(4);
  const std::size_t n = z.size();
  for (std::size_t epoch = 0; epoch < hp_.epochs_main; ++epoch) {
    const auto order = shuffled(n, rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += hp_.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(hp_.batch_size, n - b));
      std::vector<Tensor> feats;
      feats.reserve(idx.size());
      for (std::size_t i : idx) {
        const Selection sel = select(keys_, z[i], books_, hp_.query);
        feats.push_back(features_for(input_row(task.train_x, i), sel));
      }
      const Tensor features = feats.size() == 1 ? feats.front() : concat_rows(feats);
      Tensor loss = ce_stage2(heads_, features, labels_of(task.train_y, idx), task.index);
      if (!past.empty() && hp_.lambda_stage2 > 0.0) {
        loss = add(loss, scale(ortho_second(books_, task.classes, past, hp_.ortho), hp_.lambda_stage2));
      }
      opt.zero_grad();
      backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    log.stage2_main.push_back(total / static_cast<double>(batches));
  }
  set_prompt_grad(books_, task.classes, false, false);
  heads_.set_trainable(task.index, false);

  // Features of the trained prompts: fit the second-stage mixtures and
  // measure the head-t training readout.
  std::map<int, std::vector<Tensor>> per_class;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Selection sel = select(keys_, z[i], books_, hp_.query);
    const Tensor f = features_for(input_row(task.train_x, i), sel);
    per_class[task.train_y[i]].push_back(f);
    const Tensor logits = heads_.logits(task.index, f);
    if (heads_.classes(task.index)[argmax(logits.data())] == task.train_y[i]) ++correct;
  }
  log.stage2_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (!variant_.no_replay) {
    for (auto& [c, rows] : per_class) second_bank_[c] = fit_em(concat_rows(rows), em_config(c, 2)).model;
  }
}

void Trainer::stage2_replay(StageLog& log) {
  const int last = static_cast<int>(heads_.tasks()) - 1;
  for (int t = 0; t <= last; ++t) heads_.set_trainable(t, true);
  Adam opt(heads_.parameters_through(last), AdamConfig{.lr = hp_.lr_stage2});
  const std::vector<int> seen = heads_.all_classes();
  Rng rng = stream(5);
  for (std::size_t epoch = 0; epoch < hp_.epochs_replay; ++epoch) {
    const ReplaySet replay = draw_replay(second_bank_, seen, hp_.n_replay, rng);
    const auto order = shuffled(replay.labels.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += hp_.batch_size) {
      const ReplaySet batch = replay_batch(replay, order, b, std::min(hp_.batch_size, order.size() - b));
      Tensor loss = gr_loss_second(heads_, batch);
      opt.zero_grad();
      backward(loss);
      opt.step();
      total += loss.item();
      ++batches;
    }
    log.stage2_replay.push_back(total / static_cast<double>(batches));
  }
  heads_.freeze_all();
}

Selection Trainer::route(const Tensor& x) const {
  if (tasks_trained_ == 0) throw StateError("route: no task has been trained");
  return select(keys_, vision_encode(*stack_, x), books_, hp_.query);
}

Prediction Trainer::predict(const Tensor& x) const {
  if (tasks_trained_ == 0) throw StateError("predict: no task has been trained");
  const Tensor z = vision_encode(*stack_, x);
  Prediction out;
  if (variant_.first_level_only) {
    const Tensor logits = scale(matmul(z, transpose(keys_.matrix)), 1.0 / stack_->config.tau);
    out.logits = logits.to_vector();
    out.class_id = keys_.classes[argmax(out.logits)];
    out.selected_class = out.class_id;
    return out;
  }
  const Selection sel = select(keys_, z, books_, hp_.query);
  out.selected_class = sel.class_id;
  const Tensor logits = heads_.all_logits(features_for(x, sel));
  out.logits = logits.to_vector();
  out.class_id = heads_.all_classes()[argmax(out.logits)];
  return out;
}

std::vector<Prediction> Trainer::predict_all(const Tensor& xs) const {
  std::vector<Prediction> out;
  out.reserve(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) out.push_back(predict(input_row(xs, i)));
  return out;
}

// ---------------------------------------------------------------- checkpoint

namespace {

json hyperparams_json(const Hyperparams& hp) {
  return json{{"epochs_main", hp.epochs_main},
              {"epochs_replay", hp.epochs_replay},
              {"lambda_stage1", hp.lambda_stage1},
              {"lambda_stage2", hp.lambda_stage2},
              {"lr_stage1", hp.lr_stage1},
              {"lr_stage2", hp.lr_stage2},
              {"components", hp.components},
              {"n_replay", hp.n_replay},
              {"batch_size", hp.batch_size},
              {"covariance", to_string(hp.covariance)},
              {"query", to_string(hp.query)},
              {"ortho", to_string(hp.ortho)},
              {"residual_target", to_string(hp.residual_target)},
              {"prefix_tokens", hp.prefix_tokens}};
}

Hyperparams hyperparams_from(const json& j) {
  Hyperparams hp;
  hp.epochs_main = j.at("epochs_main");
  hp.epochs_replay = j.at("epochs_replay");
  hp.lambda_stage1 = j.at("lambda_stage1");
  hp.lambda_stage2 = j.at("lambda_stage2");
  hp.lr_stage1 = j.at("lr_stage1");
  hp.lr_stage2 = j.at("lr_stage2");
  hp.components = j.at("components");
  hp.n_replay = j.at("n_replay");
  hp.batch_size = j.at("batch_size");
  hp.covariance = parse_covariance(j.at("covariance").get<std::string>());
  hp.query = parse_query_mode(j.at("query").get<std::string>());
  hp.ortho = parse_ortho_mode(j.at("ortho").get<std::string>());
  hp.residual_target = parse_residual_target(j.at("residual_target").get<std::string>());
  hp.prefix_tokens = j.at("prefix_tokens");
  return hp;
}

json encoder_json(const EncoderConfig& c) {
  return json{{"d", c.d},
              {"d_prime", c.d_prime},
              {"layers", c.layers},
              {"heads", c.heads},
              {"seq_len", c.seq_len},
              {"patch_dim", c.patch_dim},
              {"mlp_ratio", c.mlp_ratio},
              {"text_layers", c.text_layers},
              {"text_heads", c.text_heads},
              {"vision_layers", c.vision_layers},
              {"vision_heads", c.vision_heads},
              {"tau", c.tau}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  c.d = j.at("d");
  c.d_prime = j.at("d_prime");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.seq_len = j.at("seq_len");
  c.patch_dim = j.at("patch_dim");
  c.mlp_ratio = j.at("mlp_ratio");
  c.text_layers = j.at("text_layers");
  c.text_heads = j.at("text_heads");
  c.vision_layers = j.at("vision_layers");
  c.vision_heads = j.at("vision_heads");
  c.tau = j.at("tau");
  return c;
}

}  // namespace

void Trainer::save(const std::filesystem::path& dir, std::uint64_t stack_seed) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": cannot create checkpoint directory: " + ec.message());
  save_codebooks(dir / "codebooks.bin", books_);
  heads_.save(dir / "heads.bin");
  save_mog_bank(dir / "mog_first.bin", first_bank_);
  save_mog_bank(dir / "mog_second.bin", second_bank_);
  json meta{{"format", "starprompt-checkpoint"},
            {"version", 1},
            {"tasks_trained", tasks_trained_},
            {"seed", seed_},
            {"stack_seed", stack_seed},
            {"stack_hash", stack_->hash()},
            {"variant", variant_.name()},
            {"hyperparams", hyperparams_json(hp_)},
            {"encoder", encoder_json(stack_->config)}};
  json classes = json::array();
  for (int c : books_.classes()) {
    classes.push_back({{"id", c}, {"task", class_task_.at(c)}, {"name", class_names_.at(c)}});
  }
  meta["classes"] = classes;
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError((dir / "meta.json").string() + ": cannot open for writing");
  out << meta.dump(2) << "\n";
}

Trainer Trainer::load(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError(meta_path.string() + ": cannot open checkpoint metadata");
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  try {
    if (meta.at("format") != "starprompt-checkpoint" || meta.at("version") != 1) {
      throw FormatError(meta_path.string() + ": not a version-1 checkpoint");
    }
    const EncoderConfig config = encoder_from(meta.at("encoder"));
    const std::uint64_t stack_seed = meta.at("stack_seed");
    auto stack = std::make_shared<const FrozenStack>(build_stack(config, stack_seed));
    if (stack->hash() != meta.at("stack_hash").get<std::uint64_t>()) {
      throw FormatError(meta_path.string() + ": rebuilt frozen stack does not match the recorded hash");
    }
    Trainer trainer(stack, hyperparams_from(meta.at("hyperparams")),
                    VariantFlags::from_name(meta.at("variant").get<std::string>()), meta.at("seed"));
    trainer.hp_ = hyperparams_from(meta.at("hyperparams"));
    trainer.books_ = load_codebooks(dir / "codebooks.bin", config);
    trainer.heads_ = ClassifierHeads::load(dir / "heads.bin");
    trainer.first_bank_ = load_mog_bank(dir / "mog_first.bin");
    trainer.second_bank_ = load_mog_bank(dir / "mog_second.bin");
    for (const auto& c : meta.at("classes")) {
      const int id = c.at("id");
      const std::string name = c.at("name");
      trainer.class_task_[id] = c.at("task");
      trainer.class_names_[id] = name;
      trainer.names_[id] = class_name_embed(name, config, id);
    }
    trainer.tasks_trained_ = meta.at("tasks_trained");
    if (trainer.tasks_trained_ > 0) {
      trainer.keys_ = trainer.recompute_keys();
      trainer.keys_.valid_through_task = trainer.tasks_trained_ - 1;
    }
    return trainer;
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
}

}  // namespace starprompt
