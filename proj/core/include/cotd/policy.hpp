#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cotd/reward.hpp"
#include "cotd/rng.hpp"
#include "cotd/vocabulary.hpp"

namespace cotd {

using TokenSeq = std::vector<int>;

struct PolicyDims {
  int vocab_size = 0;
  int embed_dim = 16;
  int hidden_dim = 32;
  int window = 16;

  int context_width() const { return window * embed_dim; }
  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

/// Parameters of the toy autoregressive policy, stored as one flat vector.
///
/// The next-token distribution at each position reads the last `window`
/// tokens (left-padded with zero vectors), concatenates their embeddings,
/// applies one tanh hidden layer and a softmax output layer:
///
///   x = [E[c_1] ... E[c_W]],  h = tanh(W1 x + b1),  logits = W2 h + b2.
///
/// Flat layout: E (V x d), W1 (h x W*d), b1 (h), W2 (V x h), b2 (V).
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicyDims dims);  // all zeros: the uniform policy

  // Gaussian weights with standard deviation `scale`; biases zero.
  static PolicyParams random(PolicyDims dims, double scale, Rng& rng);

  const PolicyDims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }

  std::span<double> embedding() { return slice(0, embedding_size()); }
  std::span<double> w1() { return slice(w1_offset(), w1_size()); }
  std::span<double> b1() { return slice(b1_offset(), dims_.hidden_dim); }
  std::span<double> w2() { return slice(w2_offset(), w2_size()); }
  std::span<double> b2() { return slice(b2_offset(), dims_.vocab_size); }
  std::span<const double> embedding() const { return slice(0, embedding_size()); }
  std::span<const double> w1() const { return slice(w1_offset(), w1_size()); }
  std::span<const double> b1() const { return slice(b1_offset(), dims_.hidden_dim); }
  std::span<const double> w2() const { return slice(w2_offset(), w2_size()); }
  std::span<const double> b2() const { return slice(b2_offset(), dims_.vocab_size); }

  std::size_t embedding_size() const;
  std::size_t w1_size() const;
  std::size_t w2_size() const;
  std::size_t w1_offset() const { return embedding_size(); }
  std::size_t b1_offset() const { return w1_offset() + w1_size(); }
  std::size_t w2_offset() const { return b1_offset() + static_cast<std::size_t>(dims_.hidden_dim); }
  std::size_t b2_offset() const { return w2_offset() + w2_size(); }

  bool all_finite() const;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::span<double> slice(std::size_t off, std::size_t n) { return {values_.data() + off, n}; }
  std::span<const double> slice(std::size_t off, std::size_t n) const {
    return {values_.data() + off, n};
  }

  PolicyDims dims_;
  std::vector<double> values_;
};

struct LogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

// log pi(sequence | prompt), token by token. Throws std::out_of_range for
// tokens outside the vocabulary.
LogProb logprob(const PolicyParams& params, std::span<const int> prompt,
                std::span<const int> sequence);

// d/dtheta of logprob(...).total.
std::vector<double> grad_logprob(const PolicyParams& params, std::span<const int> prompt,
                                 std::span<const int> sequence);

// grad += sum_t weights[t] * d/dtheta log pi(sequence[t] | ...). Returns the
// per-token log-probs computed on the way.
std::vector<double> accumulate_weighted_grad(const PolicyParams& params,
                                             std::span<const int> prompt,
                                             std::span<const int> sequence,
                                             std::span<const double> weights,
                                             std::span<double> grad);

// Same, with the weight of token t computed from its log-prob on the fly.
using TokenWeightFn = std::function<double(std::size_t t, double logprob)>;
std::vector<double> accumulate_grad_with(const PolicyParams& params, std::span<const int> prompt,
                                         std::span<const int> sequence,
                                         const TokenWeightFn& weight, std::span<double> grad);

// Next-token distribution after `context`, softmax(logits / temperature).
std::vector<double> next_token_probs(const PolicyParams& params, std::span<const int> context,
                                     double temperature = 1.0);

struct Rollout {
  TokenSeq prompt;
  TokenSeq tokens;               // generated, EOS included when emitted
  std::vector<double> logprobs;  // temperature-1 log-probs of the generating policy
  RewardBreakdown reward;
};

/// Autoregressive sampling from softmax(logits / temperature), stopping after
/// `eos` or `max_len` tokens. Stored log-probs are always at temperature 1.
Rollout sample(const PolicyParams& params, std::span<const int> prompt, double temperature,
               int max_len, Rng& rng, int eos);

TokenSeq greedy_decode(const PolicyParams& params, std::span<const int> prompt, int max_len,
                       int eos);

/// Exact KL(p || q) of next-token distributions, averaged over the `horizon`
/// positions and weighted by the probability of each context under p. All
/// V^horizon continuations are enumerated (EOS is not terminal here); throws
/// std::invalid_argument when that exceeds ~2M leaves.
double kl_exact(const PolicyParams& p, const PolicyParams& q, std::span<const int> prompt,
                int horizon);

struct Checkpoint {
  Vocabulary vocabulary;
  PolicyParams params;
  std::string rng_digest;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Digest of a generator's full state, for checkpoint provenance.
std::string rng_state_digest(const Rng& rng);

}  // namespace cotd
