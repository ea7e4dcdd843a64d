#include "fixtures.hpp"

#include "vlaforge/checkpoint.hpp"
#include "vlaforge/errors.hpp"
#include "vlaforge/model.hpp"
#include "vlaforge/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace vlaforge;
using namespace vlaforge::pipeline;

namespace {

ModelConfig config_for(ModelVariant v, uint64_t seed = 1024) {
  ModelConfig c;
  c.variant = v;
  c.seed = seed;
  return c;
}

const synthgen::FrameSet& train_frames() {
  static const auto frames = synthgen::frames_of(fixtures::tiny(), "train");
  return frames;
}

std::vector<torch::Tensor> snapshot(const VlaForgeModelImpl& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

TEST(Variant, ParseAndPrint) {
  EXPECT_EQ(parse_variant("base"), ModelVariant::Base);
  EXPECT_EQ(parse_variant("+T2"), ModelVariant::T2);
  EXPECT_EQ(parse_variant("full"), ModelVariant::T4);
  EXPECT_EQ(to_string(ModelVariant::T3), "T3");
  EXPECT_THROW(parse_variant("T5"), ValidationError);
}

TEST(Variant, FeatureLadderIsMonotone) {
  EXPECT_FALSE(features_of(ModelVariant::Base).trainable);
  EXPECT_TRUE(features_of(ModelVariant::T1).trainable);
  EXPECT_FALSE(features_of(ModelVariant::T1).global_branch);
  EXPECT_TRUE(features_of(ModelVariant::T2).global_branch);
  EXPECT_FALSE(features_of(ModelVariant::T2).vla_map);
  EXPECT_TRUE(features_of(ModelVariant::T3).vla_map);
  EXPECT_FALSE(features_of(ModelVariant::T3).id_prompts);
  EXPECT_TRUE(features_of(ModelVariant::T4).id_prompts);
}

TEST(Variant, TrainableParameterCountsGrowStrictly) {
  int64_t previous = -1;
  for (auto v : {ModelVariant::Base, ModelVariant::T1, ModelVariant::T2, ModelVariant::T3, ModelVariant::T4}) {
    VlaForgeModel m(config_for(v));
    const auto n = m->trainable_parameter_count();
    EXPECT_GT(n, previous) << to_string(v);
    previous = n;
  }
  EXPECT_EQ(VlaForgeModel(config_for(ModelVariant::Base))->trainable_parameter_count(), 0);
}

TEST(Variant, FullModelTrainsExactlyTheDeclaredGroups) {
  VlaForgeModel m(config_for(ModelVariant::T4));
  EXPECT_EQ(m->trainable_groups(), declared_trainable_groups());
  for (const auto& item : m->named_parameters()) {
    if (parameter_group(item.key()) == "backbone") {
      EXPECT_FALSE(item.value().requires_grad()) << item.key();
    }
  }
  auto t1 = VlaForgeModel(config_for(ModelVariant::T1))->trainable_groups();
  EXPECT_EQ(t1.count("g1"), 0u);
  EXPECT_EQ(t1.count("eta1"), 0u);
  EXPECT_EQ(t1.count("phi"), 0u);
  EXPECT_EQ(t1.count("g2"), 1u);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = config_for(ModelVariant::T3, 5);
  c.perceiver.num_queries = 4;
  std::vector<std::string> problems;
  auto back = model_config_from_json(to_json(c), ModelConfig{}, problems);
  EXPECT_TRUE(problems.empty());
  EXPECT_EQ(to_json(back), to_json(c));

  auto j = to_json(c);
  j["perceiver"]["bogus"] = 1;
  j["fusion_dim"] = "wide";
  model_config_from_json(j, ModelConfig{}, problems);
  EXPECT_EQ(problems.size(), 2u);
}

TEST(ModelConfig, HeadCountMustMatchBackbone) {
  ModelConfig c;
  c.perceiver.backbone_heads = 2;
  EXPECT_FALSE(c.validate().empty());
  EXPECT_THROW(VlaForgeModel{c}, ValidationError);
}

TEST(FuseScores, Arithmetic) {
  EXPECT_NEAR(fuse_scores(0.8, 0.6, 0.5), 0.7, 1e-12);
  EXPECT_EQ(fuse_scores(0.8, 0.6, 1.0), 0.8);
  EXPECT_EQ(fuse_scores(0.8, 0.6, 0.0), 0.6);
  for (double a : {0.1, 0.25, 0.9}) {
    EXPECT_NEAR(fuse_scores(0.3, 0.9, a), 0.9 + a * (0.3 - 0.9), 1e-12);
  }
  EXPECT_THROW(fuse_scores(0.5, 0.5, 1.5), ValidationError);
  EXPECT_THROW(fuse_scores(0.5, 0.5, -0.1), ValidationError);
  EXPECT_THROW(fuse_scores(0.5, 0.5, std::nan("")), ValidationError);
}

TEST(Infer, ScoresAreProbabilitiesAndFuseCorrectly) {
  VlaForgeModel m(config_for(ModelVariant::T4));
  const auto& img = train_frames().images[0];
  auto s = m->infer(img, 0.3);
  for (double v : {s.global, s.local, s.fused}) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_NEAR(s.fused, 0.3 * s.global + 0.7 * s.local, 1e-12);
  EXPECT_EQ(m->infer(img, 1.0).fused, s.global);
  EXPECT_THROW(m->infer(img, 2.0), ValidationError);
}

TEST(Infer, LowerVariantsFallBack) {
  const auto& img = train_frames().images[1];
  VlaForgeModel base(config_for(ModelVariant::Base));
  auto b = base->infer(img, 0.5);
  EXPECT_EQ(b.global, b.local);
  EXPECT_NEAR(b.global, base->base_variant_score(img), 1e-7);
  VlaForgeModel t1(config_for(ModelVariant::T1));
  auto s = t1->infer(img, 0.5);
  EXPECT_EQ(s.global, s.local);
}

TEST(BaseScore, EqualPromptsGiveOneHalfAndSwapMirrors) {
  auto img = torch::randn({5, 64}, torch::kFloat64);
  auto r = torch::randn({64}, torch::kFloat64);
  auto f = torch::randn({64}, torch::kFloat64);
  r = r / r.norm();
  f = f / f.norm();
  auto same = similarity_fake_probability(img, vla::TextFeatures{r, r});
  EXPECT_LT((same - 0.5).abs().max().item<double>(), 1e-12);
  auto s = similarity_fake_probability(img, vla::TextFeatures{r, f});
  auto swapped = similarity_fake_probability(img, vla::TextFeatures{f, r});
  EXPECT_LT((s + swapped - 1).abs().max().item<double>(), 1e-12);
  auto scaled = similarity_fake_probability(img * 7.5, vla::TextFeatures{r, f});
  EXPECT_LT((s - scaled).abs().max().item<double>(), 1e-12);
}

TEST(GlobalBranch, DuplicatedReplicasLeaveScoreUnchanged) {
  VlaForgeModel m(config_for(ModelVariant::T2));
  m->to(torch::kFloat64);
  torch::NoGradGuard ng;
  auto features = m->backbone->encode_image(train_frames().images.narrow(0, 0, 2).to(torch::kFloat64));
  auto r = m->forward(features);
  auto bias = r.masks.head_masks.flatten(-2);
  auto cls = features.class_tokens.front().unsqueeze(1).expand({2, 16, 64});
  auto twice = m->backbone->observe_class_tokens(features, cls, torch::cat({bias, bias}, 2));
  auto logits = m->eta1->forward(twice.mean(1));
  EXPECT_LT((torch::softmax(logits, -1) - torch::softmax(r.global_logits, -1)).abs().max().item<double>(), 1e-9);
}

TEST(Losses, GatedByVariant) {
  const auto& fs = train_frames();
  for (auto v : {ModelVariant::Base, ModelVariant::T1, ModelVariant::T2, ModelVariant::T3, ModelVariant::T4}) {
    VlaForgeModel m(config_for(v));
    auto r = m->forward_images(fs.images);
    auto l = values_of(m->training_losses(r, fs.masks, fs.labels));
    const auto f = features_of(v);
    EXPECT_EQ(l.loc > 0, f.trainable) << to_string(v);
    EXPECT_EQ(l.local > 0, f.trainable) << to_string(v);
    EXPECT_EQ(l.global > 0, f.global_branch) << to_string(v);
    EXPECT_EQ(l.orth > 0, f.global_branch) << to_string(v);
    EXPECT_EQ(l.vla > 0, f.vla_map) << to_string(v);
    EXPECT_NEAR(l.final_loss, l.loc + l.vla + l.global + l.local, 1e-5) << to_string(v);
  }
}

TEST(Losses, ObjectiveAddsWeightedRegulariser) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T4));
  auto l = m->training_losses(m->forward_images(fs.images), fs.masks, fs.labels);
  EXPECT_NEAR(l.objective(0.0).item<double>(), l.final_loss.item<double>(), 1e-6);
  EXPECT_NEAR(l.objective(2.0).item<double>(), l.final_loss.item<double>() + 2 * l.orth.item<double>(), 1e-5);
}

TEST(Losses, MissingSupervisionIsConfigError) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T3));
  auto r = m->forward_images(fs.images.narrow(0, 0, 2));
  EXPECT_THROW(m->training_losses(r, {}, fs.labels.narrow(0, 0, 2)), ConfigError);
  EXPECT_THROW(m->training_losses(r, fs.masks.narrow(0, 0, 2), {}), ConfigError);
}

TEST(Losses, DuplicatedBatchKeepsMeans) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T4));
  auto idx = torch::tensor({int64_t{1}, int64_t{2}});
  auto one = values_of(m->training_losses(m->forward_images(fs.images.index_select(0, idx)),
                                          fs.masks.index_select(0, idx), fs.labels.index_select(0, idx)));
  auto dup = torch::tensor({int64_t{1}, int64_t{2}, int64_t{1}, int64_t{2}});
  auto two = values_of(m->training_losses(m->forward_images(fs.images.index_select(0, dup)),
                                          fs.masks.index_select(0, dup), fs.labels.index_select(0, dup)));
  EXPECT_NEAR(one.loc, two.loc, 1e-6);
  EXPECT_NEAR(one.vla, two.vla, 1e-6);
  EXPECT_NEAR(one.global, two.global, 1e-6);
  EXPECT_NEAR(one.local, two.local, 1e-6);
  EXPECT_NEAR(one.orth, two.orth, 1e-5);
}

TEST(Losses, PerfectPredictionsScoreNearZero) {
  VlaForgeModel m(config_for(ModelVariant::T4));
  auto r = m->forward_images(train_frames().images.narrow(0, 0, 2));
  // frame 0 pristine, frame 1 manipulated everywhere
  auto masks = torch::stack({torch::zeros({64, 64}), torch::ones({64, 64})});
  auto labels = torch::tensor({int64_t{0}, int64_t{1}});
  auto maps = torch::stack({torch::zeros({8, 8}), torch::ones({8, 8})});
  auto logits = torch::tensor({{20.0f, -20.0f}, {-20.0f, 20.0f}});
  r.masks.loc_map = maps;
  r.vla_map = maps;
  r.local.logits = logits;
  r.global_logits = logits;
  auto l = values_of(m->training_losses(r, masks, labels));
  EXPECT_LT(l.loc, 0.01);
  EXPECT_LT(l.vla, 0.01);
  EXPECT_LT(l.global, 0.01);
  EXPECT_LT(l.local, 0.01);
}

TEST(Trainer, UpdatesOnlyTrainableParameters) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T4));
  const auto backbone_sum = m->backbone->checksum();
  std::set<std::string> trainable;
  for (auto& [name, t] : m->named_trainable_parameters()) trainable.insert(name);
  auto before = m->named_parameters();
  std::map<std::string, torch::Tensor> initial;
  for (const auto& item : before) initial[item.key()] = item.value().detach().clone();

  TrainOptions o;
  o.profile.epochs = 1;
  o.profile.batch_size = 4;
  Trainer trainer(m, fs.images, fs.masks, fs.labels, o);
  auto result = trainer.train();
  EXPECT_EQ(result.steps, 2);
  EXPECT_FALSE(result.diverged);
  EXPECT_EQ(m->backbone->checksum(), backbone_sum);
  int changed = 0;
  for (const auto& item : m->named_parameters()) {
    const bool moved = !torch::equal(item.value(), initial[item.key()]);
    if (moved) {
      ++changed;
      EXPECT_TRUE(trainable.count(item.key())) << item.key();
    }
  }
  EXPECT_GT(changed, 0);
}

TEST(Trainer, BaseVariantHasNothingToTrain) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::Base));
  TrainOptions o;
  o.profile.epochs = 2;
  Trainer trainer(m, fs.images, fs.masks, fs.labels, o);
  auto result = trainer.train();
  EXPECT_EQ(result.steps, 0);
  EXPECT_EQ(result.epochs.size(), 2u);
}

TEST(Trainer, MaxStepsStopsEarly) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T1));
  TrainOptions o;
  o.profile.epochs = 5;
  o.profile.batch_size = 4;
  o.max_steps = 3;
  Trainer trainer(m, fs.images, fs.masks, fs.labels, o);
  auto result = trainer.train();
  EXPECT_EQ(result.steps, 3);
}

TEST(Trainer, NonFiniteObjectiveStopsTraining) {
  const auto& fs = train_frames();
  VlaForgeModel m(config_for(ModelVariant::T2));
  TrainOptions o;
  o.profile.epochs = 3;
  o.orth_weight = std::nan("");
  Trainer trainer(m, fs.images, fs.masks, fs.labels, o);
  auto result = trainer.train();
  EXPECT_TRUE(result.diverged);
  EXPECT_EQ(result.epochs.size(), 1u);
  EXPECT_FALSE(result.epochs.back().finite);
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const auto& fs = train_frames();
  const auto dir = fixtures::scratch_dir("resume");
  TrainOptions o;
  o.profile.epochs = 2;
  o.profile.batch_size = 3;
  o.seed = 77;

  VlaForgeModel straight(config_for(ModelVariant::T4, 9));
  Trainer a(straight, fs.images, fs.masks, fs.labels, o);
  auto full = a.train();

  VlaForgeModel first(config_for(ModelVariant::T4, 9));
  Trainer b(first, fs.images, fs.masks, fs.labels, o);
  auto e1 = b.run_epoch();
  b.save(dir / "epoch1.ckpt");

  VlaForgeModel second(config_for(ModelVariant::T4, 9));
  Trainer c(second, fs.images, fs.masks, fs.labels, o);
  c.resume(dir / "epoch1.ckpt");
  EXPECT_EQ(c.epochs_done(), 1);
  auto rest = c.train();

  ASSERT_EQ(full.epochs.size(), 2u);
  ASSERT_EQ(rest.epochs.size(), 1u);
  EXPECT_EQ(e1.loss.final_loss, full.epochs[0].loss.final_loss);
  EXPECT_EQ(rest.epochs[0].loss.final_loss, full.epochs[1].loss.final_loss);
  EXPECT_EQ(rest.steps, full.steps);
  auto x = snapshot(*straight);
  auto y = snapshot(*second);
  ASSERT_EQ(x.size(), y.size());
  for (size_t i = 0; i < x.size(); ++i) EXPECT_TRUE(torch::equal(x[i], y[i])) << i;

  a.save(dir / "a.ckpt");
  c.save(dir / "c.ckpt");
  EXPECT_EQ(file_checksum(dir / "a.ckpt"), file_checksum(dir / "c.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST(Trainer, EpochRecordJson) {
  EpochRecord r;
  r.epoch = 3;
  r.loss.loc = 0.5;
  r.steps = 12;
  auto j = to_json(r);
  for (const char* key : {"epoch", "L_loc", "L_VLA", "L_G", "L_L", "L_orth", "L_final", "steps", "finite"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["L_loc"], 0.5);
  EXPECT_EQ(optimizer_profile("paper").learning_rate, 2e-5);
  EXPECT_EQ(optimizer_profile("paper").batch_size, 32);
  EXPECT_THROW(optimizer_profile("fast"), ValidationError);
}

TEST(Trainer, CachedFeaturesMatchDirectEncoding) {
  const auto& fs = train_frames();
  backbone::Backbone bb{backbone::BackboneConfig{}};
  torch::NoGradGuard ng;
  auto cached = encode_frames(*bb, fs.images, 3);
  auto direct = bb->encode_image(fs.images);
  for (size_t l = 0; l < cached.class_tokens.size(); ++l) {
    EXPECT_LT((cached.class_tokens[l] - direct.class_tokens[l]).abs().max().item<double>(), 1e-5);
  }
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto dir = fixtures::scratch_dir("model_ckpt");
  VlaForgeModel m(config_for(ModelVariant::T4, 31));
  save_model(dir / "m.ckpt", *m);
  auto back = load_model(dir / "m.ckpt");
  EXPECT_EQ(back->variant(), ModelVariant::T4);
  const auto& img = train_frames().images[3];
  auto a = m->infer(img, 0.5);
  auto b = back->infer(img, 0.5);
  EXPECT_EQ(a.global, b.global);
  EXPECT_EQ(a.local, b.local);
  EXPECT_THROW(load_model(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}
