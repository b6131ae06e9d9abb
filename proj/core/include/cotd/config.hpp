#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace cotd {

struct BackendConfig {
  std::string endpoint = "mock://synthetic";
  std::string model_name;
  std::string api_key_env = "MODEL_API_KEY";
  int max_concurrency = 4;
  int max_tokens = 512;
  double timeout_s = 60.0;
};

struct TeacherConfig : BackendConfig {
  int n_traces = 5;
  double temperature = 1.0;
  // Empty means the built-in audio-focused instruction.
  std::string prompt_template;
};

struct CheckerConfig : BackendConfig {
  bool include_question = false;
};

struct SftConfig {
  double learning_rate = 5e-5;
  int steps = 2000;
  int batch_size = 8;
  int eval_every = 100;
  // Decoupled L2 shrinkage applied after each step: theta *= 1 - lr * wd.
  double weight_decay = 0.0;
  // Kept for schema compatibility with adapter-based runs; the toy policy
  // trains every parameter.
  int lora_rank = 8;
  int lora_alpha = 16;
};

enum class GrpoPool { kFactChecked, kReason };

struct GrpoConfig {
  int group_size = 8;
  double learning_rate = 1e-6;
  double temperature = 1.0;
  double kl_beta = 0.04;
  double clip_epsilon = 0.2;
  int steps = 1000;
  int inner_epochs = 1;
  int prompts_per_step = 4;
  int max_new_tokens = 16;
  int eval_every = 50;
  GrpoPool pool = GrpoPool::kFactChecked;
};

struct ModelConfig {
  int embed_dim = 16;
  int hidden_dim = 32;
  int window = 20;
  double init_scale = 0.1;
};

struct DataConfig {
  std::string samples;
  std::string test_samples;
  double val_fraction = 0.1;
  int max_traces_per_sample = 0;  // 0 = no cap
};

struct RetryConfig {
  int max_attempts = 5;
  double base_delay_s = 1.0;
  double factor = 2.0;
  double jitter = 0.1;
};

// Parameters of the hermetic synthetic world used by `mock://synthetic`.
struct SyntheticConfig {
  double teacher_accuracy = 0.9;
  double hallucination_rate = 0.2;
  int samples = 200;
  int test_samples = 200;
};

struct PipelineConfig {
  TeacherConfig teacher;
  CheckerConfig checker;
  SftConfig sft;
  GrpoConfig grpo;
  ModelConfig model;
  DataConfig data;
  RetryConfig retry;
  SyntheticConfig synthetic;
  int workers = 1;
  std::uint64_t seed = 0;

  PipelineConfig();

  // Throws ValidationError for out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
// Missing fields keep their defaults. Unknown fields are errors only in strict mode.
PipelineConfig config_from_json(const nlohmann::json& j, bool strict = false);
PipelineConfig load_config(const std::filesystem::path& path, bool strict = false);

std::string_view to_string(GrpoPool pool);
GrpoPool grpo_pool_from_string(std::string_view s);

}  // namespace cotd
