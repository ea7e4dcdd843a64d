// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   vlaforge_acceptance [work_dir]
//
// The work directory receives the generated benchmark and the checkpoints.

#include "oracles.hpp"

#include "vlaforge/checkpoint.hpp"
#include "vlaforge/evaluate.hpp"
#include "vlaforge/metrics.hpp"
#include "vlaforge/model.hpp"
#include "vlaforge/synthgen.hpp"
#include "vlaforge/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

using namespace vlaforge;
namespace fs = std::filesystem;

namespace {

// Tolerances and thresholds.
constexpr double kOracleTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kEndToEndGradTol = 1e-3;
constexpr double kZeroBiasTol = 1e-6;
constexpr double kAdditivityTol = 1e-6;
constexpr double kFrameAurocMin = 0.85;
constexpr double kVideoAurocMin = 0.90;
constexpr double kBenchmarkMinutes = 15.0;
constexpr double kAblationSlack = 0.02;
constexpr double kCosineRiseMin = 0.2;
constexpr int kOracleInstances = 100;
constexpr int kAuditSteps = 100;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << what << " | " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double max_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

// --- 1 ------------------------------------------------------------------------

void formula_oracles() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  auto pick = [&](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
  double mask_err = 0, orth_err = 0, vla_err = 0, dice_err = 0;
  int auroc_mismatch = 0;
  for (int t = 0; t < kOracleInstances; ++t) {
    const auto h = pick(1, 4), w = pick(1, 4), q = pick(1, 5), heads = pick(1, 4), d = pick(1, 6);
    auto qp = torch::randn({q, d}, torch::kFloat64);
    auto vp = torch::randn({h, w, heads * d}, torch::kFloat64);
    mask_err = std::max(mask_err, max_diff(perceiver::head_similarity(qp, vp, heads), oracle::head_masks(qp, vp, heads)));

    auto m = torch::randn({q, h, w}, torch::kFloat64);
    orth_err = std::max(orth_err, std::abs(perceiver::orthogonality_loss(m).item<double>() - oracle::orthogonality(m)));

    auto fr = torch::randn({d}, torch::kFloat64);
    auto ff = torch::randn({d}, torch::kFloat64);
    vla::TextFeatures text{fr / fr.norm(), ff / ff.norm()};
    auto p = torch::randn({h, w, d}, torch::kFloat64);
    vla_err = std::max(vla_err, max_diff(vla::vla_attention_map(p, text).map, oracle::vla_map(p, text.real, text.fake)));

    auto pred = torch::rand({h, w}, torch::kFloat64);
    auto truth = (torch::rand({h, w}, torch::kFloat64) > 0.5).to(torch::kFloat64);
    dice_err = std::max(dice_err, std::abs(vla::dice_loss(pred, truth).item<double>() - oracle::dice(pred, truth)));

    const auto n = pick(2, 200);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int64_t i = 0; i < n; ++i) {
      scores.push_back(static_cast<double>(pick(0, 20)) / 20.0);
      labels.push_back(static_cast<int>(pick(0, 1)));
    }
    labels[0] = 0;
    labels[1] = 1;
    auroc_mismatch += evalkit::auroc(scores, labels) != oracle::auroc(scores, labels);
  }
  const double secs = seconds_since(start);
  const bool pass = mask_err < kOracleTol && orth_err < kOracleTol && vla_err < kOracleTol && dice_err < kOracleTol &&
                    auroc_mismatch == 0 && secs < 30;
  report(1, pass, "formula oracles (" + std::to_string(kOracleInstances) + " instances each)",
         "mask " + sci(mask_err) + ", orth " + sci(orth_err) + ", vla " + sci(vla_err) + ", dice " + sci(dice_err) +
             ", auroc mismatches " + std::to_string(auroc_mismatch) + ", " + fmt(secs, 1) + " s");
}

// --- 2 ------------------------------------------------------------------------

double relative_gradient_error(const torch::Tensor& x, const std::function<torch::Tensor(const torch::Tensor&)>& f) {
  auto leaf = x.detach().clone().requires_grad_(true);
  f(leaf).backward();
  auto numeric = oracle::numeric_gradient(
      [&](const torch::Tensor& v) {
        torch::NoGradGuard ng;
        return f(v).item<double>();
      },
      x);
  return oracle::relative_error(leaf.grad(), numeric);
}

void gradient_suite(const synthgen::FrameSet& frames) {
  const auto start = Clock::now();
  torch::manual_seed(5);

  const double orth = relative_gradient_error(torch::randn({4, 4, 4}, torch::kFloat64),
                                              [](const torch::Tensor& m) { return perceiver::orthogonality_loss(m); });
  auto truth = frames.masks[frames.size() - 1].to(torch::kFloat64);
  const double loc = relative_gradient_error(torch::rand({8, 8}, torch::kFloat64), [&](const torch::Tensor& m) {
    return perceiver::localization_loss(m, truth);
  });
  const double dice = relative_gradient_error(torch::rand({8, 8}, torch::kFloat64) * 0.8 + 0.1,
                                              [&](const torch::Tensor& m) { return vla::vla_map_loss(m, truth); });

  // d(observer output)/d(bias)
  backbone::Backbone bb{backbone::BackboneConfig{}};
  bb->to(torch::kFloat64);
  backbone::BackboneOutput features;
  {
    torch::NoGradGuard ng;
    features = bb->encode_image(frames.images[0].to(torch::kFloat64));
  }
  auto replicas = features.class_tokens[0].unsqueeze(0).expand({2, 64}).clone();
  auto weights = torch::randn({2, 64}, torch::kFloat64);
  const double bias = relative_gradient_error(torch::randn({4, 2, 64}, torch::kFloat64), [&](const torch::Tensor& b) {
    return (bb->observe_class_tokens(features, replicas, b) * weights).sum();
  });

  // end to end: objective with respect to 32 sampled trainable scalars
  pipeline::ModelConfig mc;
  mc.variant = pipeline::ModelVariant::T4;
  pipeline::VlaForgeModel model(mc);
  model->to(torch::kFloat64);
  auto rows = torch::tensor({int64_t{0}, frames.size() - 1});
  backbone::BackboneOutput batch;
  {
    torch::NoGradGuard ng;
    batch = model->backbone->encode_image(frames.images.index_select(0, rows).to(torch::kFloat64));
  }
  auto masks = frames.masks.index_select(0, rows).to(torch::kFloat64);
  auto labels = frames.labels.index_select(0, rows);
  auto objective = [&] { return model->training_losses(model->forward(batch), masks, labels).objective(1.0); };

  auto params = model->trainable_parameters();
  for (auto& p : params) p.mutable_grad() = torch::Tensor();
  objective().backward();
  std::mt19937_64 rng(32);
  std::vector<double> analytic, numeric;
  for (int k = 0; k < 32; ++k) {
    auto& p = params[rng() % params.size()];
    const auto idx = static_cast<int64_t>(rng() % static_cast<uint64_t>(p.numel()));
    analytic.push_back(p.grad().view({-1})[idx].item<double>());
    torch::NoGradGuard ng;
    auto flat = p.view({-1});
    const double orig = flat[idx].item<double>();
    const double step = 1e-6;
    flat[idx] = orig + step;
    const double up = objective().item<double>();
    flat[idx] = orig - step;
    const double down = objective().item<double>();
    flat[idx] = orig;
    numeric.push_back((up - down) / (2 * step));
  }
  const double e2e = oracle::relative_error(torch::tensor(analytic, torch::kFloat64), torch::tensor(numeric, torch::kFloat64));

  const double secs = seconds_since(start);
  const bool pass = orth < kGradTol && loc < kGradTol && dice < kGradTol && bias < kGradTol && e2e < kEndToEndGradTol &&
                    secs < 120;
  report(2, pass, "finite-difference gradients (double precision)",
         "L_orth " + sci(orth) + ", L_loc " + sci(loc) + ", L_Dice " + sci(dice) + ", bias path " + sci(bias) +
             ", end-to-end(32) " + sci(e2e) + ", " + fmt(secs, 1) + " s");
}

// --- 3 ------------------------------------------------------------------------

void zero_bias(const synthgen::FrameSet& frames) {
  backbone::Backbone bb{backbone::BackboneConfig{}};
  bb->to(torch::kFloat64);
  torch::NoGradGuard ng;
  auto features = bb->encode_image(frames.images.narrow(0, 0, 4).to(torch::kFloat64));
  auto replicas = features.class_tokens[0].unsqueeze(1);
  auto zero = bb->observe_class_tokens(features, replicas, torch::zeros({4, 4, 1, 64}, torch::kFloat64)).squeeze(1);
  const double err = max_diff(zero, features.final_class());
  auto bias = torch::zeros({4, 4, 1, 64}, torch::kFloat64);
  bias.select(-1, 10).fill_(0.5);
  auto nudged = bb->observe_class_tokens(features, replicas, bias).squeeze(1);
  const double moved = max_diff(nudged, features.final_class());
  report(3, err < kZeroBiasTol && moved > kZeroBiasTol, "zero-bias observer equals native class token",
         "max |diff| " + sci(err) + " at bias 0, " + sci(moved) + " with one biased patch");
}

// --- 4 ------------------------------------------------------------------------

void frozen_audit(const synthgen::FrameSet& train) {
  pipeline::ModelConfig mc;
  mc.variant = pipeline::ModelVariant::T4;
  pipeline::VlaForgeModel model(mc);
  const auto before = model->backbone->checksum();
  std::map<std::string, torch::Tensor> initial;
  for (const auto& item : model->named_parameters()) initial[item.key()] = item.value().detach().clone();

  pipeline::TrainOptions o;
  o.max_steps = kAuditSteps;
  pipeline::Trainer trainer(model, train.images, train.masks, train.labels, o);
  trainer.train();
  const auto after = model->backbone->checksum();

  std::set<std::string> trainable;
  for (const auto& [name, t] : model->named_trainable_parameters()) trainable.insert(name);
  int stray = 0;
  for (const auto& item : model->named_parameters()) {
    if (!trainable.count(item.key()) && !torch::equal(item.value(), initial[item.key()])) ++stray;
  }
  const bool whitelist = model->trainable_groups() == pipeline::declared_trainable_groups();
  report(4, before == after && whitelist && stray == 0 && trainer.steps_done() == kAuditSteps,
         "frozen backbone over " + std::to_string(kAuditSteps) + " steps",
         "checksum " + to_hex(before) + " -> " + to_hex(after) + ", whitelist " + (whitelist ? "exact" : "MISMATCH") +
             ", non-trainable tensors changed " + std::to_string(stray));
}

// --- 5 ------------------------------------------------------------------------

void additivity(const synthgen::FrameSet& train) {
  auto rows = torch::arange(0, train.size(), train.size() / 8);
  auto images = train.images.index_select(0, rows);
  auto masks = train.masks.index_select(0, rows);
  auto labels = train.labels.index_select(0, rows);
  bool pass = true;
  std::ostringstream detail;
  for (auto v : {pipeline::ModelVariant::Base, pipeline::ModelVariant::T1, pipeline::ModelVariant::T2,
                 pipeline::ModelVariant::T3, pipeline::ModelVariant::T4}) {
    pipeline::ModelConfig mc;
    mc.variant = v;
    pipeline::VlaForgeModel model(mc);
    auto l = model->training_losses(model->forward_images(images), masks, labels);
    const auto f = pipeline::features_of(v);
    const double sum_err =
        std::abs((l.final_loss - (l.loc + l.vla + l.global + l.local)).item<double>());
    bool gated = true;
    if (!f.trainable) gated &= l.loc.item<double>() == 0 && l.local.item<double>() == 0;
    if (!f.global_branch) gated &= l.global.item<double>() == 0 && l.orth.item<double>() == 0;
    if (!f.vla_map) gated &= l.vla.item<double>() == 0;
    pass &= sum_err < kAdditivityTol && gated;
    detail << pipeline::to_string(v) << (gated ? " gated ok" : " GATING BROKEN") << " (sum err " << sci(sum_err)
           << ")  ";
  }
  report(5, pass, "loss additivity and gating", detail.str());
}

// --- 6, 8, 9 ------------------------------------------------------------------

struct TrainedRun {
  evalkit::EvalReport report;
  double mean_abs_cosine = 0;
  uint64_t checkpoint = 0;
  double seconds = 0;
  bool diverged = false;
};

double mean_query_cosine(pipeline::VlaForgeModelImpl& model, const synthgen::FrameSet& frames) {
  torch::NoGradGuard ng;
  double total = 0;
  for (int64_t start = 0; start < frames.size(); start += 64) {
    const auto n = std::min<int64_t>(64, frames.size() - start);
    auto r = model.forward_images(frames.images.narrow(0, start, n));
    total += perceiver::mean_pairwise_abs_cosine(r.masks.query_masks).sum().item<double>();
  }
  return total / static_cast<double>(frames.size());
}

TrainedRun train_and_eval(const synthgen::FrameSet& train, const synthgen::FrameSet& test, double orth_weight,
                          const fs::path& checkpoint) {
  const auto start = Clock::now();
  pipeline::ModelConfig mc;
  mc.variant = pipeline::ModelVariant::T4;
  mc.seed = 1024;
  pipeline::VlaForgeModel model(mc);
  pipeline::TrainOptions o;
  o.seed = 1024;
  o.orth_weight = orth_weight;
  pipeline::Trainer trainer(model, train.images, train.masks, train.labels, o);
  TrainedRun run;
  run.diverged = trainer.train().diverged;
  trainer.save(checkpoint);
  run.report = evalkit::evaluate(*model, test, 0.5);
  run.mean_abs_cosine = mean_query_cosine(*model, test);
  run.checkpoint = file_checksum(checkpoint);
  run.seconds = seconds_since(start);
  return run;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  torch::manual_seed(0);
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "vlaforge_acceptance";
  fs::create_directories(work);
  const auto total = Clock::now();

  // Default toy benchmark, written to disk and read back exactly as the CLI does.
  const synthgen::BenchmarkConfig data;
  synthgen::build_benchmark(data, work / "bench");
  const auto train = synthgen::load_benchmark(work / "bench", "train");
  const auto test = synthgen::load_benchmark(work / "bench", "test");
  std::cout << "benchmark: " << data.num_identities << " identities, seed " << data.seed << ", " << train.size()
            << " train / " << test.size() << " test frames" << std::endl;

  formula_oracles();
  gradient_suite(train);
  zero_bias(train);
  frozen_audit(train);
  additivity(train);

  auto full = train_and_eval(train, test, 1.0, work / "t4_a.ckpt");
  report(6, !full.diverged && full.report.frame_auroc >= kFrameAurocMin && full.report.video_auroc >= kVideoAurocMin &&
                full.seconds <= kBenchmarkMinutes * 60,
         "T4 on the default benchmark (frame >= " + fmt(kFrameAurocMin, 2) + ", video >= " + fmt(kVideoAurocMin, 2) + ")",
         "frame " + fmt(full.report.frame_auroc) + ", video " + fmt(full.report.video_auroc) + ", " +
             fmt(full.seconds / 60, 2) + " min");
  for (const auto& [family, value] : full.report.family_video_auroc) {
    std::cout << "    " << family << ": frame " << fmt(full.report.family_frame_auroc.at(family)) << ", video "
              << fmt(value) << std::endl;
  }

  evalkit::AblationOptions ab;
  ab.model.variant = pipeline::ModelVariant::T4;
  const std::vector<uint64_t> seeds{1024, 0, 1111};
  ab.on_row = [](const evalkit::AblationRow& row) {
    std::cout << "    " << row.variant << " seed " << row.seed << ": video " << fmt(row.video_auroc) << ", frame "
              << fmt(row.frame_auroc) << (row.diverged ? " (diverged)" : "") << std::endl;
  };
  const auto table = evalkit::run_ablation(
      train, test, {pipeline::ModelVariant::Base, pipeline::ModelVariant::T2, pipeline::ModelVariant::T4}, seeds, ab);
  std::map<std::string, double> mean;
  bool complete = true;
  for (const auto& m : table.means) {
    mean[m.variant] = m.video_auroc;
    complete &= m.runs == static_cast<int64_t>(seeds.size());
  }
  report(7, complete && mean["Base"] <= mean["T2"] + kAblationSlack && mean["T2"] <= mean["T4"] + kAblationSlack,
         "ablation ordering Base <= T2 <= T4 (slack " + fmt(kAblationSlack, 2) + ")",
         "mean video AUROC Base " + fmt(mean["Base"]) + ", T2 " + fmt(mean["T2"]) + ", T4 " + fmt(mean["T4"]));

  auto no_orth = train_and_eval(train, test, 0.0, work / "t4_no_orth.ckpt");
  const double rise = no_orth.mean_abs_cosine - full.mean_abs_cosine;
  report(8, rise >= kCosineRiseMin, "dropping L_orth collapses mask diversity (rise >= " + fmt(kCosineRiseMin, 2) + ")",
         "mean pairwise |cos| " + fmt(full.mean_abs_cosine) + " with L_orth, " + fmt(no_orth.mean_abs_cosine) +
             " without, rise " + fmt(rise));

  auto again = train_and_eval(train, test, 1.0, work / "t4_b.ckpt");
  const bool same_metrics = again.report.frame_auroc == full.report.frame_auroc &&
                            again.report.video_auroc == full.report.video_auroc &&
                            again.report.family_frame_auroc == full.report.family_frame_auroc;
  report(9, same_metrics && again.checkpoint == full.checkpoint, "determinism of train + eval",
         "frame " + fmt(full.report.frame_auroc, 6) + " / " + fmt(again.report.frame_auroc, 6) + ", checkpoint " +
             to_hex(full.checkpoint) + " / " + to_hex(again.checkpoint));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt(seconds_since(total) / 60, 1) << " min" << std::endl;
  return failures == 0 ? 0 : 1;
}
