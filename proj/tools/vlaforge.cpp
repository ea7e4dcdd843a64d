// vlaforge: command-line entry point.
//
//   vlaforge gen-data|train|eval|ablate|viz --config <file> [--seed N] [--alpha F] [--out DIR]
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 1 any other failure.

#include "vlaforge/checkpoint.hpp"
#include "vlaforge/errors.hpp"
#include "vlaforge/evaluate.hpp"
#include "vlaforge/run_config.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using vlaforge::ValidationError;
using vlaforge::cli::RunConfig;
namespace fs = std::filesystem;

struct Args {
  std::string config;
  uint64_t seed = 0;
  double alpha = 0.5;
  std::string out;
  std::string device;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* device_opt = nullptr;
};

void add_common(CLI::App* cmd, Args& args) {
  cmd->add_option("--config", args.config, "JSON run configuration")->check(CLI::ExistingFile);
  args.seed_opt = cmd->add_option("--seed", args.seed, "run seed (adapter init and batch order)");
  args.alpha_opt = cmd->add_option("--alpha", args.alpha, "global/local score weight in [0, 1]");
  args.out_opt = cmd->add_option("--out", args.out, "output directory");
  args.device_opt = cmd->add_option("--device", args.device, "compute device (cpu)");
}

RunConfig resolve(const Args& args) {
  vlaforge::cli::Overrides o;
  if (args.seed_opt->count()) o.seed = args.seed;
  if (args.alpha_opt->count()) o.alpha = args.alpha;
  if (args.out_opt->count()) o.out = args.out;
  if (args.device_opt->count()) o.device = args.device;
  std::optional<fs::path> file;
  if (!args.config.empty()) file = args.config;
  return vlaforge::cli::load_run_config(file, o);
}

void print_header(const std::string& command, const RunConfig& config) {
  std::cout << "# vlaforge " << command << "\n# effective config:\n";
  std::istringstream lines(vlaforge::cli::to_json(config).dump(2));
  for (std::string line; std::getline(lines, line);) std::cout << "#   " << line << '\n';
  std::cout.flush();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw vlaforge::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw vlaforge::IoError("failed writing " + path.string());
}

void write_effective_config(const RunConfig& config) {
  write_text(config.output / "effective_config.json", vlaforge::cli::to_json(config).dump(2) + "\n");
}

void require_paths(const RunConfig& config, bool dataset, bool checkpoint) {
  std::vector<std::string> problems;
  if (dataset && !fs::exists(config.dataset / "manifest.jsonl")) {
    problems.push_back("dataset " + config.dataset.string() + " has no manifest.jsonl (run gen-data first)");
  }
  if (checkpoint && !fs::exists(config.checkpoint_path())) {
    problems.push_back("checkpoint " + config.checkpoint_path().string() + " does not exist");
  }
  if (!config.resume.empty() && !fs::exists(config.resume)) {
    problems.push_back("train.resume " + config.resume.string() + " does not exist");
  }
  if (!problems.empty()) throw ValidationError(problems);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmd_gen_data(const RunConfig& config, bool out_given) {
  const fs::path dir = out_given ? config.output : config.dataset;
  const auto start = std::chrono::steady_clock::now();
  const auto manifest = vlaforge::synthgen::build_benchmark(config.data, dir);
  std::cout << "wrote " << manifest.string() << " (checksum " << vlaforge::to_hex(vlaforge::file_checksum(manifest))
            << ") in " << seconds_since(start) << " s\n";
  return 0;
}

int cmd_train(const RunConfig& config) {
  require_paths(config, true, false);
  write_effective_config(config);
  const auto frames = vlaforge::synthgen::load_benchmark(config.dataset, "train");
  vlaforge::pipeline::VlaForgeModel model(config.model);

  const auto log_path = config.output / "train_log.jsonl";
  std::ofstream log(log_path, config.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw vlaforge::IoError("cannot write " + log_path.string());

  auto options = config.train_options();
  vlaforge::pipeline::Trainer* trainer_ptr = nullptr;
  const auto ckpt = config.checkpoint_path();
  options.on_epoch = [&](const vlaforge::pipeline::EpochRecord& record) {
    const auto line = vlaforge::pipeline::to_json(record).dump();
    log << line << '\n';
    log.flush();
    std::cout << line << '\n';
    trainer_ptr->save(ckpt);
  };
  vlaforge::pipeline::Trainer trainer(model, frames.images, frames.masks, frames.labels, options);
  trainer_ptr = &trainer;
  if (!config.resume.empty()) {
    trainer.resume(config.resume);
    std::cout << "resumed at epoch " << trainer.epochs_done() << '\n';
  }
  const auto start = std::chrono::steady_clock::now();
  const auto result = trainer.train();
  trainer.save(ckpt);
  std::cout << "variant " << vlaforge::pipeline::to_string(config.model.variant) << ": " << result.steps
            << " steps, trainable parameters " << model->trainable_parameter_count() << ", "
            << seconds_since(start) << " s\n";
  std::cout << "checkpoint " << ckpt.string() << " checksum " << vlaforge::to_hex(vlaforge::file_checksum(ckpt))
            << '\n';
  if (result.diverged) {
    std::cerr << "error: training diverged (non-finite loss)\n";
    return 1;
  }
  return 0;
}

vlaforge::pipeline::VlaForgeModel model_for_eval(const RunConfig& config) {
  if (config.eval_untrained) return vlaforge::pipeline::VlaForgeModel(config.model);
  return vlaforge::pipeline::load_model(config.checkpoint_path());
}

int cmd_eval(const RunConfig& config) {
  require_paths(config, true, !config.eval_untrained);
  write_effective_config(config);
  auto model = model_for_eval(config);
  const auto frames = vlaforge::synthgen::load_benchmark(config.dataset, "test");
  const auto report = vlaforge::evalkit::evaluate(*model, frames, config.alpha);
  std::cout << vlaforge::evalkit::format_report(report);
  write_text(config.output / "eval_report.json", vlaforge::evalkit::to_json(report).dump(2) + "\n");
  return 0;
}

int cmd_ablate(const RunConfig& config) {
  require_paths(config, true, false);
  write_effective_config(config);
  const auto train = vlaforge::synthgen::load_benchmark(config.dataset, "train");
  const auto test = vlaforge::synthgen::load_benchmark(config.dataset, "test");
  vlaforge::evalkit::AblationOptions options;
  options.model = config.model;
  options.train = config.train_options();
  options.alpha = config.alpha;
  options.on_row = [](const vlaforge::evalkit::AblationRow& row) {
    std::cout << "  " << row.variant << " seed " << row.seed << ": "
              << (row.diverged ? "diverged" : "video AUROC " + std::to_string(row.video_auroc)) << '\n';
    std::cout.flush();
  };
  const auto table = vlaforge::evalkit::run_ablation(train, test, config.ablate_variants, config.ablate_seeds, options);
  const auto text = vlaforge::evalkit::format_table(table);
  std::cout << text;
  write_text(config.output / "ablation.txt", text);
  write_text(config.output / "ablation.json", vlaforge::evalkit::to_json(table).dump(2) + "\n");
  return 0;
}

int cmd_viz(const RunConfig& config) {
  require_paths(config, true, true);
  write_effective_config(config);
  auto model = vlaforge::pipeline::load_model(config.checkpoint_path());
  const auto frames = vlaforge::synthgen::load_benchmark(config.dataset, "test");
  std::string video = config.viz_video;
  if (video.empty()) {
    auto labels = frames.labels.accessor<int64_t, 1>();
    for (int64_t i = 0; i < frames.size(); ++i) {
      if (labels[i] == 1) {
        video = frames.video_ids[static_cast<size_t>(i)];
        break;
      }
    }
  }
  int64_t row = -1, k = 0;
  for (int64_t i = 0; i < frames.size(); ++i) {
    if (frames.video_ids[static_cast<size_t>(i)] != video) continue;
    if (k++ == config.viz_frame) {
      row = i;
      break;
    }
  }
  if (row < 0) {
    throw ValidationError("viz: test split has no frame " + std::to_string(config.viz_frame) + " in video '" + video + "'");
  }
  const auto dir = config.output / "heatmaps" / (video + "_" + std::to_string(config.viz_frame));
  const auto files = vlaforge::evalkit::export_heatmaps(*model, frames.images[row], dir);
  for (const auto& f : files) std::cout << f.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forgery detection with vision-language alignment on synthetic face benchmarks"};
  app.require_subcommand(0, 1);
  bool show_prompts = false;
  app.add_flag("--show-prompts", show_prompts, "print the prompt templates and their tokenization, then exit");
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  auto* train = app.add_subcommand("train", "train a model variant");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every variant for every seed");
  auto* viz = app.add_subcommand("viz", "export mask and map heatmaps for one frame");
  const std::array<CLI::App*, 5> commands{gen, train, eval, ablate, viz};
  std::array<Args, 5> args;  // one set per subcommand; options bind by reference
  for (size_t i = 0; i < commands.size(); ++i) add_common(commands[i], args[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (show_prompts) {
    vlaforge::backbone::Tokenizer tokenizer;
    for (const char* text : {vlaforge::vla::kRealTemplate, vlaforge::vla::kFakeTemplate}) {
      std::cout << text << "\n ";
      for (auto id : tokenizer.encode(text)) std::cout << ' ' << id;
      std::cout << "\n  " << tokenizer.decode(tokenizer.encode(text)) << '\n';
    }
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  try {
    const auto* cmd = app.get_subcommands().front();
    const auto& active = args[static_cast<size_t>(std::find(commands.begin(), commands.end(), cmd) - commands.begin())];
    const auto config = resolve(active);
    print_header(cmd->get_name(), config);
    torch::set_num_threads(1);
    if (cmd == gen) return cmd_gen_data(config, active.out_opt->count() > 0);
    if (cmd == train) return cmd_train(config);
    if (cmd == eval) return cmd_eval(config);
    if (cmd == ablate) return cmd_ablate(config);
    return cmd_viz(config);
  } catch (const ValidationError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
