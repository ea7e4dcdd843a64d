#include "vlaforge/run_config.hpp"

#include "json_fields.hpp"
#include "vlaforge/errors.hpp"

#include <fstream>

namespace vlaforge::cli {

pipeline::TrainOptions RunConfig::train_options() const {
  pipeline::TrainOptions o;
  o.profile = profile;
  o.orth_weight = orth_weight;
  o.seed = seed;
  o.max_steps = max_steps;
  return o;
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? output / "model.ckpt" : checkpoint;
}

RunConfig run_config_from_json(const nlohmann::json& j, const Overrides& overrides) {
  RunConfig c;
  std::vector<std::string> problems;
  {
    detail::FieldReader top(j, "", problems);
    top.known("model").known("data").known("train").known("ablate").known("viz").known("eval").known("variant")
        .known("profile").known("q").known("dataset").known("output").known("checkpoint");
    top.field("seed", c.seed).field("alpha", c.alpha).field("device", c.device);
    auto path_field = [&](const char* key, std::filesystem::path& out) {
      std::string value;
      top.field(key, value);
      if (top.has(key)) out = value;
    };
    path_field("dataset", c.dataset);
    path_field("output", c.output);
    path_field("checkpoint", c.checkpoint);

    if (top.has("model")) c.model = pipeline::model_config_from_json(top.at("model"), c.model, problems);
    if (top.has("variant")) {
      try {
        c.model.variant = pipeline::parse_variant(top.at("variant").get<std::string>());
      } catch (const std::exception&) {
        problems.push_back("variant must be one of Base, T1, T2, T3, T4");
      }
    }
    if (top.has("q")) {
      if (top.at("q").is_number_integer()) {
        c.model.perceiver.num_queries = top.at("q").get<int64_t>();
      } else {
        problems.push_back("q has the wrong type");
      }
    }
    if (top.has("data")) c.data = synthgen::benchmark_config_from_json(top.at("data"), c.data, problems);

    std::string profile_name = c.profile.name;
    top.field("profile", profile_name);
    try {
      c.profile = pipeline::optimizer_profile(profile_name);
    } catch (const ValidationError&) {
      problems.push_back("profile must be 'toy' or 'paper', got '" + profile_name + "'");
    }
    if (top.has("train")) {
      detail::FieldReader t(top.at("train"), "train", problems);
      std::string resume;
      t.field("epochs", c.profile.epochs)
          .field("batch_size", c.profile.batch_size)
          .field("learning_rate", c.profile.learning_rate)
          .field("weight_decay", c.profile.weight_decay)
          .field("orth_weight", c.orth_weight)
          .field("max_steps", c.max_steps)
          .field("resume", resume);
      if (!resume.empty()) c.resume = resume;
    }
    if (top.has("eval")) {
      detail::FieldReader e(top.at("eval"), "eval", problems);
      e.field("untrained", c.eval_untrained);
    }
    if (top.has("ablate")) {
      detail::FieldReader a(top.at("ablate"), "ablate", problems);
      std::vector<std::string> names;
      a.field("variants", names).field("seeds", c.ablate_seeds);
      if (a.has("variants")) {
        c.ablate_variants.clear();
        for (const auto& name : names) {
          try {
            c.ablate_variants.push_back(pipeline::parse_variant(name));
          } catch (const ValidationError&) {
            problems.push_back("ablate.variants names unknown variant '" + name + "'");
          }
        }
      }
    }
    if (top.has("viz")) {
      detail::FieldReader v(top.at("viz"), "viz", problems);
      v.field("video", c.viz_video).field("frame", c.viz_frame);
    }
  }

  if (overrides.seed) c.seed = *overrides.seed;
  if (overrides.alpha) c.alpha = *overrides.alpha;
  if (overrides.out) c.output = *overrides.out;
  if (overrides.device) c.device = *overrides.device;
  c.model.seed = c.seed;

  for (auto& p : c.model.validate()) problems.push_back(std::move(p));
  for (auto& p : c.data.validate()) problems.push_back(std::move(p));
  if (c.model.perceiver.num_queries < 1) problems.push_back("q must be >= 1");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) problems.push_back("alpha must lie in [0, 1]");
  if (c.profile.epochs < 0) problems.push_back("train.epochs must be >= 0");
  if (c.profile.batch_size < 1) problems.push_back("train.batch_size must be >= 1");
  if (!(c.profile.learning_rate > 0.0)) problems.push_back("train.learning_rate must be positive");
  if (c.profile.weight_decay < 0.0) problems.push_back("train.weight_decay must be >= 0");
  if (c.orth_weight < 0.0) problems.push_back("train.orth_weight must be >= 0");
  if (c.device != "cpu") problems.push_back("device must be 'cpu' (no other backend is built in)");
  if (c.ablate_seeds.empty()) problems.push_back("ablate.seeds must not be empty");
  if (c.ablate_variants.empty()) problems.push_back("ablate.variants must not be empty");
  if (c.data.options.image_size != c.model.backbone.image_size) {
    problems.push_back("data.image_size must equal model.backbone.image_size");
  }
  if (!problems.empty()) throw ValidationError(problems);
  return c;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const Overrides& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ValidationError("config file " + file->string() + " cannot be opened");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("config file " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  return run_config_from_json(j, overrides);
}

nlohmann::json to_json(const RunConfig& c) {
  std::vector<std::string> variants;
  for (auto v : c.ablate_variants) variants.push_back(pipeline::to_string(v));
  return {{"seed", c.seed},
          {"alpha", c.alpha},
          {"device", c.device},
          {"dataset", c.dataset.string()},
          {"output", c.output.string()},
          {"checkpoint", c.checkpoint_path().string()},
          {"model", pipeline::to_json(c.model)},
          {"data", synthgen::to_json(c.data)},
          {"profile", c.profile.name},
          {"train",
           {{"epochs", c.profile.epochs},
            {"batch_size", c.profile.batch_size},
            {"learning_rate", c.profile.learning_rate},
            {"weight_decay", c.profile.weight_decay},
            {"orth_weight", c.orth_weight},
            {"max_steps", c.max_steps},
            {"resume", c.resume.string()}}},
          {"eval", {{"untrained", c.eval_untrained}}},
          {"ablate", {{"variants", variants}, {"seeds", c.ablate_seeds}}},
          {"viz", {{"video", c.viz_video}, {"frame", c.viz_frame}}}};
}

}  // namespace vlaforge::cli
