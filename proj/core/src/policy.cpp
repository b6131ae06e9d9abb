#include "cotd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cotd/serialization.hpp"

namespace cotd {
namespace {

struct Workspace {
  std::vector<int> context;
  std::vector<double> x;
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> probs;
  double log_normalizer = 0.0;

  explicit Workspace(const PolicyDims& d)
      : context(static_cast<std::size_t>(d.window), -1),
        x(static_cast<std::size_t>(d.context_width()), 0.0),
        hidden(static_cast<std::size_t>(d.hidden_dim), 0.0),
        logits(static_cast<std::size_t>(d.vocab_size), 0.0),
        probs(static_cast<std::size_t>(d.vocab_size), 0.0) {}
};

void check_tokens(const PolicyDims& dims, std::span<const int> tokens) {
  for (int t : tokens) {
    if (t < 0 || t >= dims.vocab_size) {
      throw std::out_of_range("out-of-vocabulary token id " + std::to_string(t));
    }
  }
}

// Forward pass for the position whose history is stream[0, end).
void forward(const PolicyParams& params, std::span<const int> stream, std::size_t end,
             Workspace& ws) {
  const PolicyDims& d = params.dims();
  const auto W = static_cast<std::size_t>(d.window);
  const auto D = static_cast<std::size_t>(d.embed_dim);
  const auto H = static_cast<std::size_t>(d.hidden_dim);
  const auto V = static_cast<std::size_t>(d.vocab_size);
  const auto emb = params.embedding();

  for (std::size_t j = 0; j < W; ++j) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(end) - static_cast<std::ptrdiff_t>(W) +
                               static_cast<std::ptrdiff_t>(j);
    const int tok = idx >= 0 ? stream[static_cast<std::size_t>(idx)] : -1;
    ws.context[j] = tok;
    double* xj = ws.x.data() + j * D;
    if (tok < 0) {
      std::fill(xj, xj + D, 0.0);
    } else {
      std::copy_n(emb.data() + static_cast<std::size_t>(tok) * D, D, xj);
    }
  }

  const auto w1 = params.w1();
  const auto b1 = params.b1();
  const std::size_t in = W * D;
  for (std::size_t i = 0; i < H; ++i) {
    const double* row = w1.data() + i * in;
    double acc = b1[i];
    for (std::size_t j = 0; j < W; ++j) {
      if (ws.context[j] < 0) continue;
      const double* rj = row + j * D;
      const double* xj = ws.x.data() + j * D;
      for (std::size_t k = 0; k < D; ++k) acc += rj[k] * xj[k];
    }
    ws.hidden[i] = std::tanh(acc);
  }

  const auto w2 = params.w2();
  const auto b2 = params.b2();
  double max_logit = -INFINITY;
  for (std::size_t v = 0; v < V; ++v) {
    const double* row = w2.data() + v * H;
    double acc = b2[v];
    for (std::size_t i = 0; i < H; ++i) acc += row[i] * ws.hidden[i];
    ws.logits[v] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    ws.probs[v] = std::exp(ws.logits[v] - max_logit);
    sum += ws.probs[v];
  }
  for (std::size_t v = 0; v < V; ++v) ws.probs[v] /= sum;
  ws.log_normalizer = max_logit + std::log(sum);
}

// grad += backprop of dlogits through the position held in `ws`.
void backward(const PolicyParams& params, const Workspace& ws, std::span<const double> dlogits,
              std::span<double> grad, std::vector<double>& dhidden) {
  const PolicyDims& d = params.dims();
  const auto W = static_cast<std::size_t>(d.window);
  const auto D = static_cast<std::size_t>(d.embed_dim);
  const auto H = static_cast<std::size_t>(d.hidden_dim);
  const auto V = static_cast<std::size_t>(d.vocab_size);
  const std::size_t in = W * D;

  double* g_emb = grad.data();
  double* g_w1 = grad.data() + params.w1_offset();
  double* g_b1 = grad.data() + params.b1_offset();
  double* g_w2 = grad.data() + params.w2_offset();
  double* g_b2 = grad.data() + params.b2_offset();
  const auto w1 = params.w1();
  const auto w2 = params.w2();

  std::fill(dhidden.begin(), dhidden.end(), 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const double g = dlogits[v];
    if (g == 0.0) continue;
    g_b2[v] += g;
    double* gw = g_w2 + v * H;
    const double* row = w2.data() + v * H;
    for (std::size_t i = 0; i < H; ++i) {
      gw[i] += g * ws.hidden[i];
      dhidden[i] += g * row[i];
    }
  }
  for (std::size_t i = 0; i < H; ++i) {
    const double dpre = dhidden[i] * (1.0 - ws.hidden[i] * ws.hidden[i]);
    if (dpre == 0.0) continue;
    g_b1[i] += dpre;
    double* gw = g_w1 + i * in;
    const double* row = w1.data() + i * in;
    for (std::size_t j = 0; j < W; ++j) {
      const int tok = ws.context[j];
      if (tok < 0) continue;
      const double* xj = ws.x.data() + j * D;
      double* ge = g_emb + static_cast<std::size_t>(tok) * D;
      for (std::size_t k = 0; k < D; ++k) {
        gw[j * D + k] += dpre * xj[k];
        ge[k] += dpre * row[j * D + k];
      }
    }
  }
}

TokenSeq concat(std::span<const int> a, std::span<const int> b) {
  TokenSeq s(a.begin(), a.end());
  s.insert(s.end(), b.begin(), b.end());
  return s;
}

}  // namespace

PolicyParams::PolicyParams(PolicyDims dims) : dims_(dims) {
  if (dims.vocab_size < 1 || dims.embed_dim < 1 || dims.hidden_dim < 1 || dims.window < 1) {
    throw std::invalid_argument("policy dimensions must be positive");
  }
  values_.assign(b2_offset() + static_cast<std::size_t>(dims.vocab_size), 0.0);
}

PolicyParams PolicyParams::random(PolicyDims dims, double scale, Rng& rng) {
  PolicyParams p(dims);
  auto fill = [&](std::span<double> s) {
    for (double& v : s) v = scale * rng.normal();
  };
  fill(p.embedding());
  fill(p.w1());
  fill(p.w2());
  return p;
}

std::size_t PolicyParams::embedding_size() const {
  return static_cast<std::size_t>(dims_.vocab_size) * static_cast<std::size_t>(dims_.embed_dim);
}
std::size_t PolicyParams::w1_size() const {
  return static_cast<std::size_t>(dims_.hidden_dim) * static_cast<std::size_t>(dims_.context_width());
}
std::size_t PolicyParams::w2_size() const {
  return static_cast<std::size_t>(dims_.vocab_size) * static_cast<std::size_t>(dims_.hidden_dim);
}

bool PolicyParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

LogProb logprob(const PolicyParams& params, std::span<const int> prompt,
                std::span<const int> sequence) {
  check_tokens(params.dims(), prompt);
  check_tokens(params.dims(), sequence);
  const TokenSeq stream = concat(prompt, sequence);
  Workspace ws(params.dims());
  LogProb out;
  out.per_token.reserve(sequence.size());
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    forward(params, stream, prompt.size() + t, ws);
    const double lp = ws.logits[static_cast<std::size_t>(sequence[t])] - ws.log_normalizer;
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

std::vector<double> accumulate_grad_with(const PolicyParams& params, std::span<const int> prompt,
                                         std::span<const int> sequence,
                                         const TokenWeightFn& weight, std::span<double> grad) {
  if (grad.size() != params.size()) throw std::invalid_argument("gradient size mismatch");
  check_tokens(params.dims(), prompt);
  check_tokens(params.dims(), sequence);
  const TokenSeq stream = concat(prompt, sequence);
  Workspace ws(params.dims());
  std::vector<double> dlogits(static_cast<std::size_t>(params.dims().vocab_size));
  std::vector<double> dhidden(static_cast<std::size_t>(params.dims().hidden_dim));
  std::vector<double> lps;
  lps.reserve(sequence.size());
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    forward(params, stream, prompt.size() + t, ws);
    const auto y = static_cast<std::size_t>(sequence[t]);
    const double lp = ws.logits[y] - ws.log_normalizer;
    lps.push_back(lp);
    const double w = weight(t, lp);
    if (w == 0.0) continue;
    // d log softmax_y / d logits = onehot(y) - p
    for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = -w * ws.probs[v];
    dlogits[y] += w;
    backward(params, ws, dlogits, grad, dhidden);
  }
  return lps;
}

std::vector<double> accumulate_weighted_grad(const PolicyParams& params,
                                             std::span<const int> prompt,
                                             std::span<const int> sequence,
                                             std::span<const double> weights,
                                             std::span<double> grad) {
  if (weights.size() != sequence.size()) {
    throw std::invalid_argument("one weight per sequence token required");
  }
  return accumulate_grad_with(params, prompt, sequence,
                              [&](std::size_t t, double) { return weights[t]; }, grad);
}

std::vector<double> grad_logprob(const PolicyParams& params, std::span<const int> prompt,
                                 std::span<const int> sequence) {
  std::vector<double> grad(params.size(), 0.0);
  const std::vector<double> ones(sequence.size(), 1.0);
  accumulate_weighted_grad(params, prompt, sequence, ones, grad);
  return grad;
}

std::vector<double> next_token_probs(const PolicyParams& params, std::span<const int> context,
                                     double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be > 0");
  check_tokens(params.dims(), context);
  Workspace ws(params.dims());
  forward(params, context, context.size(), ws);
  if (temperature == 1.0) return ws.probs;
  std::vector<double> p(ws.logits.size());
  double max_logit = -INFINITY;
  for (double l : ws.logits) max_logit = std::max(max_logit, l / temperature);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    p[v] = std::exp(ws.logits[v] / temperature - max_logit);
    sum += p[v];
  }
  for (double& v : p) v /= sum;
  return p;
}

Rollout sample(const PolicyParams& params, std::span<const int> prompt, double temperature,
               int max_len, Rng& rng, int eos) {
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be > 0");
  check_tokens(params.dims(), prompt);
  Rollout r;
  r.prompt.assign(prompt.begin(), prompt.end());
  TokenSeq stream = r.prompt;
  Workspace ws(params.dims());
  std::vector<double> scaled(static_cast<std::size_t>(params.dims().vocab_size));
  for (int t = 0; t < max_len; ++t) {
    forward(params, stream, stream.size(), ws);
    const std::vector<double>* dist = &ws.probs;
    if (temperature != 1.0) {
      double max_logit = -INFINITY;
      for (double l : ws.logits) max_logit = std::max(max_logit, l / temperature);
      double sum = 0.0;
      for (std::size_t v = 0; v < scaled.size(); ++v) {
        scaled[v] = std::exp(ws.logits[v] / temperature - max_logit);
        sum += scaled[v];
      }
      for (double& v : scaled) v /= sum;
      dist = &scaled;
    }
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t pick = dist->size() - 1;
    for (std::size_t v = 0; v < dist->size(); ++v) {
      cum += (*dist)[v];
      if (u < cum) {
        pick = v;
        break;
      }
    }
    const int token = static_cast<int>(pick);
    r.tokens.push_back(token);
    r.logprobs.push_back(ws.logits[pick] - ws.log_normalizer);
    stream.push_back(token);
    if (token == eos) break;
  }
  return r;
}

TokenSeq greedy_decode(const PolicyParams& params, std::span<const int> prompt, int max_len,
                       int eos) {
  check_tokens(params.dims(), prompt);
  TokenSeq stream(prompt.begin(), prompt.end());
  TokenSeq out;
  Workspace ws(params.dims());
  for (int t = 0; t < max_len; ++t) {
    forward(params, stream, stream.size(), ws);
    const auto pick = static_cast<int>(
        std::max_element(ws.logits.begin(), ws.logits.end()) - ws.logits.begin());
    out.push_back(pick);
    stream.push_back(pick);
    if (pick == eos) break;
  }
  return out;
}

double kl_exact(const PolicyParams& p, const PolicyParams& q, std::span<const int> prompt,
                int horizon) {
  if (!(p.dims() == q.dims())) throw std::invalid_argument("kl_exact: dimension mismatch");
  if (horizon < 1) throw std::invalid_argument("kl_exact: horizon must be >= 1");
  const auto V = static_cast<double>(p.dims().vocab_size);
  if (std::pow(V, horizon) > 2.0e6) {
    throw std::invalid_argument("kl_exact: horizon too large for exhaustive enumeration");
  }
  check_tokens(p.dims(), prompt);
  Workspace wp(p.dims());
  Workspace wq(q.dims());
  TokenSeq stream(prompt.begin(), prompt.end());
  double total = 0.0;

  auto recurse = [&](auto&& self, double weight, int depth) -> void {
    if (depth == horizon) return;
    forward(p, stream, stream.size(), wp);
    forward(q, stream, stream.size(), wq);
    const std::vector<double> probs = wp.probs;
    double kl = 0.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (probs[v] == 0.0) continue;
      const double log_p = wp.logits[v] - wp.log_normalizer;
      const double log_q = wq.logits[v] - wq.log_normalizer;
      kl += probs[v] * (log_p - log_q);
    }
    total += weight * kl;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      stream.push_back(static_cast<int>(v));
      self(self, weight * probs[v], depth + 1);
      stream.pop_back();
    }
  };
  recurse(recurse, 1.0, 0);
  return total / horizon;
}

std::string rng_state_digest(const Rng& rng) {
  std::ostringstream ss;
  ss << rng.engine();
  return sha256_hex(ss.str());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const PolicyDims& d = checkpoint.params.dims();
  const auto flat = checkpoint.params.flat();
  json j = {{"format", "cotd-policy"},
            {"version", 1},
            {"vocabulary", checkpoint.vocabulary.symbols()},
            {"dims",
             {{"vocab_size", d.vocab_size},
              {"embed_dim", d.embed_dim},
              {"hidden_dim", d.hidden_dim},
              {"window", d.window}}},
            {"params", std::vector<double>(flat.begin(), flat.end())},
            {"rng_digest", checkpoint.rng_digest}};
  write_text_file(path, canonical(j) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  if (j.value("format", "") != "cotd-policy" || j.value("version", 0) != 1) {
    throw std::runtime_error(path.string() + " is not a version-1 policy checkpoint");
  }
  PolicyDims d;
  d.vocab_size = j.at("dims").at("vocab_size").get<int>();
  d.embed_dim = j.at("dims").at("embed_dim").get<int>();
  d.hidden_dim = j.at("dims").at("hidden_dim").get<int>();
  d.window = j.at("dims").at("window").get<int>();
  Vocabulary vocab(j.at("vocabulary").get<std::vector<std::string>>());
  if (vocab.size() != d.vocab_size) throw std::runtime_error("checkpoint vocabulary/dims mismatch");
  PolicyParams params(d);
  const auto values = j.at("params").get<std::vector<double>>();
  if (values.size() != params.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  std::copy(values.begin(), values.end(), params.flat().begin());
  return Checkpoint{std::move(vocab), std::move(params), j.value("rng_digest", "")};
}

}  // namespace cotd
