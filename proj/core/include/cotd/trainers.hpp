#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotd/config.hpp"
#include "cotd/policy.hpp"
#include "cotd/types.hpp"
#include "cotd/vocabulary.hpp"

namespace cotd {

// ---------------------------------------------------------------------------
// Corpus

struct SftExample {
  std::string sample_id;
  TokenSeq prompt;
  TokenSeq target;  // tag-formatted trace, EOS-terminated
};

// The student's view of a sample: audio reference tokens, option texts in
// letter order, then the question. Letters and gold answers are not rendered.
TokenSeq student_prompt(const Sample& sample, const Vocabulary& vocab);

// Re-wraps a teacher trace into "<think>...</think><answer>L</answer>".
std::string canonical_target_text(std::string_view trace_text, char answer);

/// One example per accepted trace, in file order, at most
/// `max_traces_per_sample` per sample (0 = unlimited; the first accepted win).
/// Samples in `exclude` (the validation split) contribute nothing.
/// Throws std::runtime_error("nothing to train on") for an empty result.
std::vector<SftExample> build_sft_corpus(std::span<const VerifiedTrace> verified,
                                         std::span<const Sample> samples, const Vocabulary& vocab,
                                         int max_traces_per_sample = 0,
                                         const std::set<std::string>& exclude = {});

nlohmann::json to_json(const SftExample& e);
SftExample sft_example_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// SFT

struct SftLoss {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d theta
};

// Mean over examples of -log pi(target | prompt).
SftLoss sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch);

struct SftStepResult {
  double loss = 0.0;  // before the update
  double grad_norm = 0.0;
};

/// theta <- theta - lr * grad. Throws std::runtime_error on a non-finite loss.
SftStepResult sft_step(PolicyParams& params, std::span<const SftExample> minibatch,
                       double learning_rate);

// ---------------------------------------------------------------------------
// GRPO

// k3 = r - log r - 1 with r = pi_ref / pi_theta, from log-probabilities.
double k3_estimator(double logp_theta, double logp_ref);

/// min(ratio*A, clip(ratio, 1-eps, 1+eps)*A) - beta*kl_term.
double grpo_token_objective(double ratio, double advantage, double kl_term, double epsilon,
                            double beta);

struct GrpoPrompt {
  std::string sample_id;
  TokenSeq prompt;
  char teacher_label = 'A';
};

struct FrozenRollout {
  TokenSeq prompt;
  TokenSeq tokens;
  std::vector<double> old_logprobs;  // under pi_theta_old
  std::vector<double> ref_logprobs;  // under pi_ref
  double advantage = 0.0;
};

using RolloutGroup = std::vector<FrozenRollout>;

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> grad;  // d objective / d theta
  double mean_kl = 0.0;      // same averaging as the objective
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;
  std::size_t empty_rollouts = 0;
  std::size_t skipped_groups = 0;
};

/// The clipped GRPO objective over frozen rollouts: token mean within a
/// rollout, rollout mean within a group, group mean over prompts. Empty
/// rollouts are left out of their group's mean; an all-empty group is skipped.
SurrogateResult grpo_surrogate(const PolicyParams& params, std::span<const RolloutGroup> groups,
                               double epsilon, double beta);

struct GrpoBatchReport {
  int step = 0;
  double mean_total_reward = 0.0;
  double mean_accuracy_reward = 0.0;
  double mean_format_reward = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  double grad_norm = 0.0;
  std::size_t empty_rollouts = 0;
  std::size_t skipped_prompts = 0;
};

using RolloutFn = std::function<Rollout(const PolicyParams& policy, const TokenSeq& prompt, Rng& rng)>;

// Temperature sampling with the configured length cap.
RolloutFn sampling_rollout(const GrpoConfig& config, int eos);

/// One GRPO update: snapshot pi_old, draw G rollouts per prompt (one rng
/// stream per rollout), score them against the teacher label, normalize
/// advantages per group and run `inner_epochs` ascent steps on the surrogate.
GrpoBatchReport grpo_step(PolicyParams& params, const PolicyParams& ref_params,
                          std::span<const GrpoPrompt> prompts, const RolloutFn& rollout,
                          const Vocabulary& vocab, const GrpoConfig& config,
                          std::uint64_t step_seed, int step_index = 0, int workers = 1);

nlohmann::json to_json(const GrpoPrompt& p);
GrpoPrompt grpo_prompt_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Schedule

// Validation accuracy of a policy, or nullopt when there is no validation set.
using Validator = std::function<std::optional<double>(const PolicyParams&)>;
using CheckpointSink = std::function<void(std::string_view tag, const PolicyParams&)>;
using WarningSink = std::function<void(std::string_view)>;

struct SftRun {
  PolicyParams best;
  std::optional<double> best_val;
  std::vector<nlohmann::json> metrics;
};

struct GrpoRun {
  PolicyParams final_params;
  PolicyParams deliverable;
  std::string deliverable_tag;
  std::optional<double> deliverable_val;
  std::vector<nlohmann::json> metrics;
};

PolicyParams initial_policy(const PipelineConfig& config, const Vocabulary& vocab);

/// Full-parameter SFT from `init`; keeps the checkpoint with the best
/// validation accuracy (the last one when there is no validation set).
SftRun run_sft(const PipelineConfig& config, PolicyParams init, std::span<const SftExample> corpus,
               const Validator& validate, const CheckpointSink& checkpoint = {},
               const WarningSink& warn = {});

/// GRPO from the SFT checkpoint, which is also the frozen reference policy.
/// The deliverable is the best-validation checkpoint among the starting
/// point and the periodic GRPO checkpoints.
GrpoRun run_grpo(const PipelineConfig& config, const PolicyParams& sft_best,
                 std::optional<double> sft_val, std::span<const GrpoPrompt> prompts,
                 const Vocabulary& vocab, const Validator& validate,
                 const CheckpointSink& checkpoint = {}, const WarningSink& warn = {});

struct TrainResult {
  SftRun sft;
  GrpoRun grpo;
};

TrainResult train(const PipelineConfig& config, const Vocabulary& vocab,
                  std::span<const SftExample> corpus, std::span<const GrpoPrompt> prompts,
                  const Validator& validate, const CheckpointSink& checkpoint = {},
                  const WarningSink& warn = {});

// Greedy-decodes each sample and scores it with the evaluator.
double policy_accuracy(const PolicyParams& params, const Vocabulary& vocab,
                       std::span<const Sample> samples, int max_len);

}  // namespace cotd
