#include "cotd/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "cotd/evaluator.hpp"
#include "cotd/parallel.hpp"
#include "cotd/reward.hpp"
#include "cotd/rng.hpp"
#include "cotd/serialization.hpp"

namespace cotd {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

void erase_all(std::string& s, std::string_view needle) {
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos)) {
    s.replace(pos, needle.size(), " ");
  }
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

TokenSeq student_prompt(const Sample& sample, const Vocabulary& vocab) {
  TokenSeq out;
  auto append = [&](std::string_view text) {
    const TokenSeq t = vocab.tokenize(text);
    out.insert(out.end(), t.begin(), t.end());
  };
  if (sample.media.audio_ref) append(*sample.media.audio_ref);
  for (const auto& o : sample.options) append(o.text);
  append(sample.question);
  return out;
}

std::string canonical_target_text(std::string_view trace_text, char answer) {
  std::string content;
  const auto open = trace_text.find("<think>");
  const auto close =
      open == std::string_view::npos ? std::string_view::npos : trace_text.find("</think>", open);
  if (close != std::string_view::npos) {
    content = std::string(trace_text.substr(open + 7, close - open - 7));
  } else {
    content = std::string(trace_text);
    for (auto a = content.find("<answer>"); a != std::string::npos; a = content.find("<answer>")) {
      const auto b = content.find("</answer>", a);
      content.erase(a, b == std::string::npos ? std::string::npos : b + 9 - a);
    }
  }
  for (auto tag : {"<think>", "</think>", "<answer>", "</answer>"}) erase_all(content, tag);
  return "<think>" + std::string(trim(content)) + "</think><answer>" + std::string(1, answer) +
         "</answer>";
}

std::vector<SftExample> build_sft_corpus(std::span<const VerifiedTrace> verified,
                                         std::span<const Sample> samples, const Vocabulary& vocab,
                                         int max_traces_per_sample,
                                         const std::set<std::string>& exclude) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : samples) by_id.emplace(s.id, &s);
  std::map<std::string, int> taken;
  std::vector<SftExample> corpus;
  for (const auto& v : verified) {
    auto it = by_id.find(v.sample_id);
    if (it == by_id.end()) {
      throw ValidationError("verified record references unknown sample '" + v.sample_id + "'", 0,
                            "sample_id");
    }
    if (v.verdict != Verdict::kAccept || exclude.count(v.sample_id)) continue;
    int& count = taken[v.sample_id];
    if (max_traces_per_sample > 0 && count >= max_traces_per_sample) continue;
    ++count;
    SftExample e;
    e.sample_id = v.sample_id;
    e.prompt = student_prompt(it->second->without_gold(), vocab);
    e.target = vocab.tokenize(canonical_target_text(v.trace_text, v.teacher_answer));
    e.target.push_back(vocab.eos());
    if (format_reward(vocab.detokenize(e.target)) != 1) {
      throw std::logic_error("corpus target for '" + v.sample_id + "' is not tag-well-formed");
    }
    corpus.push_back(std::move(e));
  }
  if (corpus.empty()) throw std::runtime_error("nothing to train on");
  return corpus;
}

json to_json(const SftExample& e) {
  return {{"sample_id", e.sample_id}, {"prompt", e.prompt}, {"target", e.target}};
}

SftExample sft_example_from_json(const json& j) {
  return {j.at("sample_id").get<std::string>(), j.at("prompt").get<TokenSeq>(),
          j.at("target").get<TokenSeq>()};
}

SftLoss sft_loss_and_grad(const PolicyParams& params, std::span<const SftExample> batch) {
  if (batch.empty()) throw std::invalid_argument("SFT minibatch is empty");
  SftLoss out;
  out.grad.assign(params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    // d(-log pi)/d theta, averaged over the batch.
    const auto lps = accumulate_grad_with(params, e.prompt, e.target,
                                          [&](std::size_t, double) { return -scale; }, out.grad);
    for (double lp : lps) out.loss -= scale * lp;
  }
  return out;
}

SftStepResult sft_step(PolicyParams& params, std::span<const SftExample> minibatch,
                       double learning_rate) {
  const SftLoss l = sft_loss_and_grad(params, minibatch);
  if (!std::isfinite(l.loss)) {
    throw std::runtime_error("non-finite SFT loss (" + std::to_string(l.loss) +
                             ") on a minibatch of " + std::to_string(minibatch.size()) +
                             " examples; gradient norm " + std::to_string(norm(l.grad)));
  }
  axpy(-learning_rate, l.grad, params.flat());
  return {l.loss, norm(l.grad)};
}

double k3_estimator(double logp_theta, double logp_ref) {
  const double log_ratio = logp_ref - logp_theta;
  return std::exp(log_ratio) - log_ratio - 1.0;
}

double grpo_token_objective(double ratio, double advantage, double kl_term, double epsilon,
                            double beta) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage) - beta * kl_term;
}

SurrogateResult grpo_surrogate(const PolicyParams& params, std::span<const RolloutGroup> groups,
                               double epsilon, double beta) {
  SurrogateResult out;
  out.grad.assign(params.size(), 0.0);
  std::size_t live_groups = 0;
  for (const auto& g : groups) {
    const bool any = std::any_of(g.begin(), g.end(), [](const auto& r) { return !r.tokens.empty(); });
    if (any) {
      ++live_groups;
    } else {
      ++out.skipped_groups;
    }
  }
  if (live_groups == 0) return out;

  for (const auto& group : groups) {
    const auto live = static_cast<std::size_t>(std::count_if(
        group.begin(), group.end(), [](const auto& r) { return !r.tokens.empty(); }));
    if (live == 0) continue;
    for (const auto& r : group) {
      if (r.tokens.empty()) {
        ++out.empty_rollouts;
        continue;
      }
      const double scale = 1.0 / (static_cast<double>(live_groups) * static_cast<double>(live) *
                                  static_cast<double>(r.tokens.size()));
      const double adv = r.advantage;
      accumulate_grad_with(
          params, r.prompt, r.tokens,
          [&](std::size_t t, double lp) {
            const double ratio = std::exp(lp - r.old_logprobs[t]);
            const double unclipped = ratio * adv;
            const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv;
            const bool clip_active = clipped < unclipped;
            const double kl = k3_estimator(lp, r.ref_logprobs[t]);
            out.objective += scale * (std::min(unclipped, clipped) - beta * kl);
            out.mean_kl += scale * kl;
            ++out.tokens;
            if (clip_active) ++out.clipped_tokens;
            // d/dlp of ratio*A is ratio*A; d/dlp of -beta*k3 is beta*(pi_ref/pi - 1).
            const double d_surrogate = clip_active ? 0.0 : unclipped;
            const double d_kl = beta * (std::exp(r.ref_logprobs[t] - lp) - 1.0);
            return scale * (d_surrogate + d_kl);
          },
          out.grad);
    }
  }
  return out;
}

RolloutFn sampling_rollout(const GrpoConfig& config, int eos) {
  return [temperature = config.temperature, max_len = config.max_new_tokens, eos](
             const PolicyParams& policy, const TokenSeq& prompt, Rng& rng) {
    return sample(policy, prompt, temperature, max_len, rng, eos);
  };
}

GrpoBatchReport grpo_step(PolicyParams& params, const PolicyParams& ref_params,
                          std::span<const GrpoPrompt> prompts, const RolloutFn& rollout,
                          const Vocabulary& vocab, const GrpoConfig& config,
                          std::uint64_t step_seed, int step_index, int workers) {
  const auto G = static_cast<std::size_t>(config.group_size);
  if (G < 2) throw std::invalid_argument("GRPO needs group_size >= 2");
  const PolicyParams old_params = params;

  const auto rollouts = parallel_map(prompts.size() * G, workers, [&](std::size_t k) {
    const auto& p = prompts[k / G];
    Rng rng(derive_seed(step_seed, "rollout", k));
    Rollout r = rollout(old_params, p.prompt, rng);
    if (r.logprobs.size() != r.tokens.size()) {
      r.logprobs = logprob(old_params, p.prompt, r.tokens).per_token;
    }
    r.reward = total_reward(vocab.detokenize(r.tokens), p.teacher_label);
    return r;
  });

  GrpoBatchReport report;
  report.step = step_index;
  std::vector<RolloutGroup> groups(prompts.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    std::vector<double> rewards(G);
    for (std::size_t i = 0; i < G; ++i) {
      const Rollout& r = rollouts[p * G + i];
      rewards[i] = r.reward.total;
      report.mean_total_reward += r.reward.total;
      report.mean_accuracy_reward += r.reward.accuracy;
      report.mean_format_reward += r.reward.format;
    }
    const std::vector<double> adv = normalize_advantages(rewards);
    for (std::size_t i = 0; i < G; ++i) {
      const Rollout& r = rollouts[p * G + i];
      FrozenRollout f;
      f.prompt = r.prompt;
      f.tokens = r.tokens;
      f.old_logprobs = r.logprobs;
      f.ref_logprobs = logprob(ref_params, r.prompt, r.tokens).per_token;
      f.advantage = adv[i];
      groups[p].push_back(std::move(f));
    }
  }
  const double n_rollouts = static_cast<double>(std::max<std::size_t>(1, rollouts.size()));
  report.mean_total_reward /= n_rollouts;
  report.mean_accuracy_reward /= n_rollouts;
  report.mean_format_reward /= n_rollouts;

  std::size_t tokens = 0;
  std::size_t clipped = 0;
  for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
    const SurrogateResult s = grpo_surrogate(params, groups, config.clip_epsilon, config.kl_beta);
    axpy(config.learning_rate, s.grad, params.flat());
    tokens += s.tokens;
    clipped += s.clipped_tokens;
    report.mean_kl += s.mean_kl / config.inner_epochs;
    report.grad_norm += norm(s.grad) / config.inner_epochs;
    if (epoch == 0) {
      report.empty_rollouts = s.empty_rollouts;
      report.skipped_prompts = s.skipped_groups;
    }
  }
  report.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  return report;
}

json to_json(const GrpoPrompt& p) {
  return {{"sample_id", p.sample_id},
          {"prompt", p.prompt},
          {"teacher_label", std::string(1, p.teacher_label)}};
}

GrpoPrompt grpo_prompt_from_json(const json& j) {
  const auto label = j.at("teacher_label").get<std::string>();
  if (label.size() != 1 || !is_option_letter(label[0])) {
    throw ValidationError("teacher_label must be a letter", 0, "teacher_label");
  }
  return {j.at("sample_id").get<std::string>(), j.at("prompt").get<TokenSeq>(), label[0]};
}

PolicyParams initial_policy(const PipelineConfig& config, const Vocabulary& vocab) {
  PolicyDims dims{vocab.size(), config.model.embed_dim, config.model.hidden_dim,
                  config.model.window};
  Rng rng(derive_seed(config.seed, "policy-init"));
  return PolicyParams::random(dims, config.model.init_scale, rng);
}

SftRun run_sft(const PipelineConfig& config, PolicyParams init, std::span<const SftExample> corpus,
               const Validator& validate, const CheckpointSink& checkpoint,
               const WarningSink& warn) {
  if (corpus.empty()) throw std::runtime_error("nothing to train on");
  SftRun run;
  PolicyParams params = std::move(init);
  run.best = params;

  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.sft.batch_size),
                                                  corpus.size());
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = corpus.size();
  std::uint64_t epoch = 0;
  std::vector<SftExample> mb;
  bool have_val = false;

  for (int step = 1; step <= config.sft.steps; ++step) {
    mb.clear();
    while (mb.size() < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, "sft-epoch", epoch++));
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      mb.push_back(corpus[order[cursor++]]);
    }
    const SftStepResult r = sft_step(params, mb, config.sft.learning_rate);
    if (config.sft.weight_decay > 0) {
      const double keep = 1.0 - config.sft.learning_rate * config.sft.weight_decay;
      for (double& x : params.flat()) x *= keep;
    }
    json rec = {{"step", step}, {"phase", "sft"}, {"loss", r.loss}, {"grad_norm", r.grad_norm}};
    const bool eval_point = step == config.sft.steps ||
                            (config.sft.eval_every > 0 && step % config.sft.eval_every == 0);
    if (eval_point) {
      const std::optional<double> val = validate ? validate(params) : std::nullopt;
      if (val) {
        rec["val_accuracy"] = *val;
        have_val = true;
        if (!run.best_val || *val >= *run.best_val) {
          run.best_val = val;
          run.best = params;
        }
      }
      if (checkpoint) checkpoint("sft_step_" + std::to_string(step), params);
    }
    run.metrics.push_back(std::move(rec));
  }
  if (!have_val) {
    if (warn && config.sft.steps > 0) warn("no validation set; SFT keeps its last checkpoint");
    run.best = params;
  }
  return run;
}

GrpoRun run_grpo(const PipelineConfig& config, const PolicyParams& sft_best,
                 std::optional<double> sft_val, std::span<const GrpoPrompt> prompts,
                 const Vocabulary& vocab, const Validator& validate,
                 const CheckpointSink& checkpoint, const WarningSink& warn) {
  GrpoRun run;
  const PolicyParams& ref = sft_best;
  PolicyParams params = sft_best;
  run.deliverable = sft_best;
  run.deliverable_tag = "sft_best";
  run.deliverable_val = sft_val;
  if (config.grpo.steps > 0 && prompts.empty()) {
    throw std::runtime_error("GRPO prompt set is empty");
  }

  const RolloutFn rollout = sampling_rollout(config.grpo, vocab.eos());
  const std::size_t per_step =
      std::min<std::size_t>(static_cast<std::size_t>(config.grpo.prompts_per_step), prompts.size());
  std::vector<std::size_t> order(prompts.size());
  std::size_t cursor = prompts.size();
  std::uint64_t epoch = 0;
  bool have_val = sft_val.has_value();
  std::vector<GrpoPrompt> batch;

  for (int step = 1; step <= config.grpo.steps; ++step) {
    batch.clear();
    while (batch.size() < per_step) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, "grpo-epoch", epoch++));
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(prompts[order[cursor++]]);
    }
    const GrpoBatchReport r =
        grpo_step(params, ref, batch, rollout, vocab, config.grpo,
                  derive_seed(config.seed, "grpo-step", static_cast<std::uint64_t>(step)), step,
                  config.workers);
    if (!params.all_finite()) throw std::runtime_error("GRPO produced non-finite parameters");
    json rec = {{"step", step},
                {"phase", "grpo"},
                {"mean_reward", r.mean_total_reward},
                {"mean_accuracy_reward", r.mean_accuracy_reward},
                {"mean_format_reward", r.mean_format_reward},
                {"clip_fraction", r.clip_fraction},
                {"kl", r.mean_kl},
                {"grad_norm", r.grad_norm}};
    if (r.empty_rollouts > 0) rec["empty_rollouts"] = r.empty_rollouts;
    const bool eval_point = step == config.grpo.steps ||
                            (config.grpo.eval_every > 0 && step % config.grpo.eval_every == 0);
    if (eval_point) {
      const std::string tag = "grpo_step_" + std::to_string(step);
      const std::optional<double> val = validate ? validate(params) : std::nullopt;
      if (val) {
        rec["val_accuracy"] = *val;
        have_val = true;
        if (!run.deliverable_val || *val >= *run.deliverable_val) {
          run.deliverable_val = val;
          run.deliverable = params;
          run.deliverable_tag = tag;
        }
      }
      if (checkpoint) checkpoint(tag, params);
    }
    run.metrics.push_back(std::move(rec));
  }
  run.final_params = params;
  if (!have_val && config.grpo.steps > 0) {
    if (warn) warn("no validation set; the deliverable is the last GRPO checkpoint");
    run.deliverable = params;
    run.deliverable_tag = "grpo_step_" + std::to_string(config.grpo.steps);
  }
  return run;
}

TrainResult train(const PipelineConfig& config, const Vocabulary& vocab,
                  std::span<const SftExample> corpus, std::span<const GrpoPrompt> prompts,
                  const Validator& validate, const CheckpointSink& checkpoint,
                  const WarningSink& warn) {
  TrainResult result;
  result.sft = run_sft(config, initial_policy(config, vocab), corpus, validate, checkpoint, warn);
  result.grpo =
      run_grpo(config, result.sft.best, result.sft.best_val, prompts, vocab, validate, checkpoint, warn);
  return result;
}

double policy_accuracy(const PolicyParams& params, const Vocabulary& vocab,
                       std::span<const Sample> samples, int max_len) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    const TokenSeq out = greedy_decode(params, student_prompt(s.without_gold(), vocab), max_len,
                                       vocab.eos());
    if (score_response(vocab.detokenize(out), s).correct) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace cotd
