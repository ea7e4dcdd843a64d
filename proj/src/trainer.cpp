#include "vlaforge/trainer.hpp"

#include "vlaforge/checkpoint.hpp"
#include "vlaforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vlaforge::pipeline {

OptimizerProfile toy_profile() { return {"toy", 1e-3, 5e-4, 16, 30}; }

OptimizerProfile paper_profile() { return {"paper", 2e-5, 5e-4, 32, 15}; }

OptimizerProfile optimizer_profile(const std::string& name) {
  if (name == "toy") return toy_profile();
  if (name == "paper") return paper_profile();
  throw ValidationError("optimizer profile must be 'toy' or 'paper', got '" + name + "'");
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},        {"L_loc", r.loss.loc},     {"L_VLA", r.loss.vla},
          {"L_G", r.loss.global},    {"L_L", r.loss.local},     {"L_orth", r.loss.orth},
          {"L_final", r.loss.final_loss}, {"steps", r.steps},   {"finite", r.finite}};
}

backbone::BackboneOutput encode_frames(backbone::BackboneImpl& backbone, const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<backbone::BackboneOutput> parts;
  for (int64_t start = 0; start < images.size(0); start += chunk) {
    parts.push_back(backbone.encode_image(images.slice(0, start, std::min(start + chunk, images.size(0)))));
  }
  if (parts.size() == 1) return parts.front();

  backbone::BackboneOutput out;
  std::vector<torch::Tensor> list;
  for (auto& p : parts) list.push_back(p.patch_embeddings);
  out.patch_embeddings = torch::cat(list, 0);
  const auto levels = parts.front().class_tokens.size();
  for (size_t l = 0; l < levels; ++l) {
    std::vector<torch::Tensor> cls, patches;
    for (auto& p : parts) {
      cls.push_back(p.class_tokens[l]);
      patches.push_back(p.patch_tokens[l]);
    }
    out.class_tokens.push_back(torch::cat(cls, 0));
    out.patch_tokens.push_back(torch::cat(patches, 0));
  }
  return out;
}

Trainer::Trainer(VlaForgeModel model, const torch::Tensor& images, const torch::Tensor& masks,
                 const torch::Tensor& labels, TrainOptions options)
    : model_(std::move(model)), masks_(masks), labels_(labels.to(torch::kInt64)), options_(std::move(options)) {
  const auto n = images.size(0);
  if (masks.size(0) != n || labels.size(0) != n) {
    throw ShapeError("images, masks and labels must have the same number of frames");
  }
  if (options_.profile.batch_size < 1 || options_.profile.epochs < 0) {
    throw ValidationError("batch size must be >= 1 and epochs >= 0");
  }
  features_ = encode_frames(*model_->backbone, images);
  params_ = model_->named_trainable_parameters();
  if (!params_.empty()) {
    std::vector<torch::Tensor> tensors;
    for (auto& [name, t] : params_) tensors.push_back(t);
    optimizer_ = std::make_unique<torch::optim::Adam>(
        tensors, torch::optim::AdamOptions(options_.profile.learning_rate).weight_decay(options_.profile.weight_decay));
  }
}

EpochRecord Trainer::run_epoch() {
  EpochRecord record;
  record.epoch = ++epoch_;
  if (!optimizer_) return record;

  const auto n = labels_.size(0);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options_.seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch_));
  std::shuffle(order.begin(), order.end(), rng);

  const auto batch = options_.profile.batch_size;
  LossValues sum;
  int64_t batches = 0;
  model_->train();
  for (int64_t start = 0; start < n; start += batch) {
    if (options_.max_steps >= 0 && steps_ >= options_.max_steps) break;
    const auto stop = std::min(start + batch, n);
    auto rows = torch::from_blob(order.data() + start, {stop - start}, torch::kInt64).clone();
    auto result = model_->forward(features_.index_select(rows));
    auto losses = model_->training_losses(result, masks_.index_select(0, rows), labels_.index_select(0, rows));
    auto objective = losses.objective(options_.orth_weight);
    const auto v = values_of(losses);
    if (!std::isfinite(objective.item<double>())) {
      record.finite = false;
      break;
    }
    optimizer_->zero_grad();
    objective.backward();
    optimizer_->step();
    ++steps_;
    ++record.steps;
    ++batches;
    sum.loc += v.loc;
    sum.vla += v.vla;
    sum.global += v.global;
    sum.local += v.local;
    sum.orth += v.orth;
    sum.final_loss += v.final_loss;
  }
  if (batches > 0) {
    const auto k = static_cast<double>(batches);
    record.loss = {sum.loc / k, sum.vla / k, sum.global / k, sum.local / k, sum.orth / k, sum.final_loss / k};
  }
  return record;
}

TrainResult Trainer::train() {
  TrainResult result;
  while (epoch_ < options_.profile.epochs) {
    if (options_.max_steps >= 0 && steps_ >= options_.max_steps) break;
    auto record = run_epoch();
    result.epochs.push_back(record);
    if (options_.on_epoch) options_.on_epoch(record);
    if (!record.finite) {
      result.diverged = true;
      break;
    }
  }
  result.steps = steps_;
  return result;
}

void Trainer::save(const std::filesystem::path& path) const {
  nlohmann::json header = {{"trainer",
                            {{"epoch", epoch_},
                             {"steps", steps_},
                             {"seed", options_.seed},
                             {"profile", options_.profile.name},
                             {"orth_weight", options_.orth_weight}}}};
  std::vector<std::pair<std::string, torch::Tensor>> extra;
  if (optimizer_) {
    auto& state = optimizer_->state();
    for (const auto& [name, t] : params_) {
      auto it = state.find(t.unsafeGetTensorImpl());
      if (it == state.end()) continue;
      const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
      extra.emplace_back("optim." + name + ".step", torch::tensor({s.step()}, torch::kInt64));
      extra.emplace_back("optim." + name + ".exp_avg", s.exp_avg());
      extra.emplace_back("optim." + name + ".exp_avg_sq", s.exp_avg_sq());
    }
  }
  save_model(path, *model_, header, extra);
}

void Trainer::resume(const std::filesystem::path& path) {
  load_parameters(*model_, path);
  const auto file = read_checkpoint(path);
  if (file.header.contains("trainer")) {
    const auto& t = file.header.at("trainer");
    epoch_ = t.value("epoch", int64_t{0});
    steps_ = t.value("steps", int64_t{0});
  }
  if (!optimizer_) return;
  auto& state = optimizer_->state();
  for (const auto& [name, t] : params_) {
    const auto* step = file.find("optim." + name + ".step");
    const auto* m = file.find("optim." + name + ".exp_avg");
    const auto* v = file.find("optim." + name + ".exp_avg_sq");
    if (step == nullptr || m == nullptr || v == nullptr) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step->item<int64_t>());
    s->exp_avg(m->clone().to(t.scalar_type()));
    s->exp_avg_sq(v->clone().to(t.scalar_type()));
    state[t.unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace vlaforge::pipeline
