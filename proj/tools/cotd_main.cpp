// cotd: command-line driver for the distillation pipeline.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cotd/gateway.hpp"
#include "cotd/pipeline.hpp"
#include "cotd/types.hpp"

namespace {

int report_error(std::string_view kind, std::string_view message) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chain-of-thought distillation pipeline: elicit, verify, train and evaluate."};
  app.require_subcommand(1, 1);

  cotd::RunOptions options;
  std::string run_dir;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string pool;
  std::optional<int> max_traces;
  std::optional<int> workers;
  std::string predictions;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--run-dir", run_dir, "Run directory")->required();
    sub->add_option("--config", config_path, "Config JSON");
    sub->add_option("--seed", seed, "Global seed (overrides the config)");
    sub->add_flag("--force", options.force, "Redo complete stages");
    sub->add_flag("--retry-failed", options.retry_failed, "Retry samples marked failed");
    sub->add_option("--grpo-pool", pool, "GRPO prompt pool")->check(CLI::IsMember({"reason", "fc"}));
    sub->add_option("--max-traces-per-sample", max_traces, "Cap on accepted traces per sample")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
  };

  struct Command {
    const char* name;
    const char* help;
    std::optional<cotd::Stage> stage;
  };
  const Command commands[] = {
      {"elicit", "Sample teacher traces and apply the unanimity filter", cotd::Stage::kElicit},
      {"verify", "Check each retained trace against the audio", cotd::Stage::kVerify},
      {"build-corpus", "Build the SFT corpus, GRPO prompts and validation split",
       cotd::Stage::kBuildCorpus},
      {"train-sft", "Supervised fine-tuning on verified traces", cotd::Stage::kTrainSft},
      {"train-grpo", "GRPO from the best SFT checkpoint", cotd::Stage::kTrainGrpo},
      {"eval", "Score predictions on the held-out set", cotd::Stage::kEval},
      {"run-all", "Run every stage, skipping complete ones", std::nullopt},
      {"resume", "Continue an existing run from its first incomplete stage", std::nullopt},
      {"demo", "Hermetic end-to-end run on the synthetic world", std::nullopt},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (c.stage == cotd::Stage::kEval) {
      sub->add_option("--predictions", predictions, "Score this predictions JSONL instead");
    }
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const Command* chosen = nullptr;
  for (const auto& [sub, cmd] : subs) {
    if (sub->parsed()) chosen = cmd;
  }
  const std::string name = chosen->name;

  options.run_dir = run_dir;
  if (!config_path.empty()) options.config_path = config_path;
  options.seed = seed;
  if (!pool.empty()) options.grpo_pool = cotd::grpo_pool_from_string(pool);
  options.max_traces_per_sample = max_traces;
  options.workers = workers;
  if (!predictions.empty()) options.predictions = predictions;

  try {
    if (name == "resume" && !std::filesystem::exists(options.run_dir / "config.json")) {
      return report_error("missing-artifact", options.run_dir.string() +
                                                  "/config.json not found; nothing to resume");
    }
    const std::uint64_t network_before = cotd::HttpBackend::network_operations();
    std::optional<cotd::PipelineConfig> preset;
    if (name == "demo") preset = cotd::demo_config();
    cotd::Pipeline pipeline(options, preset, {},
                            [](std::string_view m) { std::cerr << m << "\n"; });
    if (name == "demo" && (pipeline.config().teacher.endpoint != "mock://synthetic" ||
                           pipeline.config().checker.endpoint != "mock://synthetic")) {
      return report_error("config", "demo requires mock://synthetic teacher and checker endpoints");
    }

    nlohmann::json out = nlohmann::json::array();
    if (chosen->stage) {
      out.push_back(to_json(pipeline.run(*chosen->stage)));
    } else {
      for (const auto& o : pipeline.run_all()) out.push_back(to_json(o));
    }
    if (name == "demo") {
      const std::uint64_t network = cotd::HttpBackend::network_operations() - network_before;
      if (network != 0) {
        return report_error("hermeticity",
                            "demo issued " + std::to_string(network) + " network operations");
      }
    }
    std::cout << out.dump(2) << "\n";
    return 0;
  } catch (const cotd::PipelineError& e) {
    return report_error(e.kind(), e.what());
  } catch (const cotd::ValidationError& e) {
    nlohmann::json err = {{"kind", "validation"}, {"message", e.what()}};
    if (e.line()) err["line"] = e.line();
    if (!e.field().empty()) err["field"] = e.field();
    std::cerr << nlohmann::json{{"error", err}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    return report_error("runtime", e.what());
  }
}
