#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotd/config.hpp"
#include "cotd/gateway.hpp"

namespace cotd {

enum class Stage { kElicit, kVerify, kBuildCorpus, kTrainSft, kTrainGrpo, kEval };

inline constexpr Stage kAllStages[] = {Stage::kElicit,   Stage::kVerify,    Stage::kBuildCorpus,
                                       Stage::kTrainSft, Stage::kTrainGrpo, Stage::kEval};

std::string_view to_string(Stage s);
std::optional<Stage> stage_from_string(std::string_view s);

/// A pipeline failure the CLI reports as a machine-readable error record.
/// `kind` is a short stable identifier such as "missing-artifact".
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct RunOptions {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<GrpoPool> grpo_pool;
  std::optional<int> max_traces_per_sample;
  std::optional<int> workers;
  bool force = false;
  bool retry_failed = false;
  // eval only: score this predictions file instead of decoding the deliverable.
  std::optional<std::filesystem::path> predictions;
};

// Builds the backend for one role ("teacher" or "checker").
using BackendFactory =
    std::function<std::shared_ptr<Backend>(const BackendConfig& config, std::string_view role)>;

// mock://synthetic, replay://<audit.jsonl>, or an http(s) endpoint whose key
// is read from the environment variable named by `api_key_env`.
std::shared_ptr<Backend> default_backend(const BackendConfig& config, std::string_view role,
                                         const PipelineConfig& pipeline);

struct StageOutcome {
  Stage stage = Stage::kElicit;
  bool skipped = false;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::string note;
};

nlohmann::json to_json(const StageOutcome& o);

/// Owns one run directory for its lifetime (lock file). Layout:
///
///   config.json                 config snapshot, fixed at run start
///   samples.jsonl               input manifest (test_samples.jsonl optional)
///   traces.jsonl                elicit, one TraceSet per sample
///   verified.jsonl              verify, accepted and rejected traces
///   split.json, sft_corpus.jsonl, grpo_prompts.jsonl     build-corpus
///   metrics_sft.jsonl, metrics_grpo.jsonl, checkpoints/  training
///   predictions.jsonl, eval_results.jsonl, summary.json, eval_comparison.json
///   manifests/<stage>.jsonl     {sample_id, status, error}
///   audit.jsonl                 gateway audit log
class Pipeline {
 public:
  using Logger = std::function<void(std::string_view)>;

  /// Opens or creates the run directory. The effective config is --config
  /// (else the snapshot, else `preset`, else defaults) plus flag overrides;
  /// when a snapshot exists it must match, ignoring `workers`, or nothing is
  /// written and PipelineError("config-mismatch") is thrown.
  Pipeline(const RunOptions& options, std::optional<PipelineConfig> preset = {},
           BackendFactory backends = {}, Logger log = {});
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  // Runs one stage. A complete stage is skipped unless --force, which also
  // invalidates every later stage.
  StageOutcome run(Stage stage);
  // Every stage in order, skipping complete ones.
  std::vector<StageOutcome> run_all();

  bool complete(Stage stage) const;
  const PipelineConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  StageOutcome elicit();
  StageOutcome verify();
  StageOutcome build_corpus();
  StageOutcome train_sft();
  StageOutcome train_grpo();
  StageOutcome evaluate();

  std::filesystem::path path(std::string_view name) const { return dir_ / std::string(name); }
  std::filesystem::path require(std::string_view name, Stage producer) const;
  std::shared_ptr<Gateway> gateway(const BackendConfig& config, std::string_view role);
  void ensure_samples();
  void info(std::string_view message) const;

  RunOptions options_;
  PipelineConfig config_;
  std::filesystem::path dir_;
  std::filesystem::path data_base_;
  BackendFactory backends_;
  Logger log_;
  std::shared_ptr<AuditLog> audit_;
  bool locked_ = false;
};

// Toy-scale defaults for the synthetic demo: mock teacher and checker, a
// generated held-out test set and learning rates sized for the toy policy.
PipelineConfig demo_config();

}  // namespace cotd
