// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cotd/elicitation.hpp"
#include "cotd/evaluator.hpp"
#include "cotd/pipeline.hpp"
#include "cotd/reward.hpp"
#include "cotd/serialization.hpp"
#include "cotd/synthetic.hpp"
#include "cotd/trainers.hpp"
#include "gradient_check.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace cotd;
using Clock = std::chrono::steady_clock;

namespace {

struct Check {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// 1 ---------------------------------------------------------------------------

void gradient_fidelity(Check& v) {
  const auto t0 = Clock::now();
  int sft = 0, grpo = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(1, "acceptance-sft", trial));
    PolicyParams p = testing::random_policy(rng, testing::random_dims(rng));
    const auto batch = testing::random_sft_batch(rng, p.dims().vocab_size);
    const SftLoss l = sft_loss_and_grad(p, batch);
    const auto bad = testing::check_gradient(p, [&] { return sft_loss_and_grad(p, batch).loss; }, l.grad);
    v.require(!bad, "SFT configuration " + std::to_string(trial));
    sft += bad ? 0 : 1;
  }
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(1, "acceptance-grpo", trial));
    PolicyParams p = testing::random_policy(rng, testing::random_dims(rng));
    const auto groups = testing::random_groups(rng, p);
    const double beta = 0.1 * rng.uniform();
    const SurrogateResult s = grpo_surrogate(p, groups, 0.2, beta);
    const auto bad = testing::check_gradient(
        p, [&] { return grpo_surrogate(p, groups, 0.2, beta).objective; }, s.grad);
    v.require(!bad, "GRPO configuration " + std::to_string(trial));
    grpo += bad ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  v.require(secs < 30.0, "took longer than 30 s");
  v.detail << sft << "/100 SFT and " << grpo << "/100 GRPO configurations match, " << secs << " s";
}

// 2 ---------------------------------------------------------------------------

void advantage_normalization(Check& v) {
  Rng rng(2);
  int unanimous = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(2 + rng.below(15));
    for (auto& x : r) x = static_cast<double>(rng.below(3));
    const auto a = normalize_advantages(r);
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) {
      ++unanimous;
      v.require(std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; }),
                "unanimous group not exactly zero");
      continue;
    }
    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(a.size()));
    v.require(std::abs(mean) < 1e-9, "mean off zero");
    v.require(std::abs(sd - 1.0) < 1e-6, "population std off one");
  }
  auto round6 = [](double x) { return std::round(x * 1e6) / 1e6; };
  const auto a3 = normalize_advantages(std::vector<double>{0, 1, 2});
  v.require(round6(a3[0]) == -1.224745 && round6(a3[1]) == 0.0 && round6(a3[2]) == 1.224745,
            "[0,1,2] fixture");
  const auto a2 = normalize_advantages(std::vector<double>{0, 2});
  v.require(round6(a2[0]) == -1.0 && round6(a2[1]) == 1.0, "[0,2] fixture");
  v.detail << "1000 groups (" << unanimous << " unanimous); [0,1,2] -> " << a3[0] << ", " << a3[2];
}

// 3 ---------------------------------------------------------------------------

int format_oracle(const std::string& text) {
  static const std::regex shape(R"(^\s*<think>[\s\S]*</think>\s*<answer>([\s\S]*)</answer>\s*$)");
  for (const char* tag : {"<think>", "</think>", "<answer>", "</answer>"}) {
    std::size_t n = 0;
    for (auto p = text.find(tag); p != std::string::npos; p = text.find(tag, p + 1)) ++n;
    if (n != 1) return 0;
  }
  std::smatch m;
  if (!std::regex_match(text, m, shape)) return 0;
  const std::string content = m[1];
  return content.find_first_not_of(" \t\n\r\f\v") == std::string::npos ? 0 : 1;
}

void reward_semantics(Check& v) {
  std::vector<std::string> tags = {"<think>", "</think>", "<answer>", "</answer>"};
  std::sort(tags.begin(), tags.end());
  int winners = 0, orders = 0;
  do {
    const std::string text = " " + tags[0] + "x" + tags[1] + "\n" + tags[2] + "B" + tags[3] + " ";
    const int f = format_reward(text);
    v.require(f == format_oracle(text), "tag order table: " + text);
    winners += f;
    ++orders;
  } while (std::next_permutation(tags.begin(), tags.end()));
  v.require(winners == 1, "exactly one tag order is well-formed");

  // Every subset and duplication pattern of the canonical layout.
  const std::vector<std::string> parts = {"<think>", "r", "</think>", "<answer>", "C", "</answer>"};
  int subsets = 0;
  for (int mask = 0; mask < 729; ++mask) {  // each part dropped, kept or doubled
    std::string text;
    int m = mask;
    for (const auto& part : parts) {
      for (int k = 0; k < m % 3; ++k) text += part;
      m /= 3;
    }
    v.require(format_reward(text) == format_oracle(text), "subset table: " + text);
    ++subsets;
  }

  const std::vector<std::string> fragments = {"<think>", "</think>", "<answer>", "</answer>", "A", "B",
                                              "c",       " ",        "\n",       "The answer is D", "<",
                                              ">",       "/",        "answer",   "Answer: B", "\t"};
  Rng rng(3);
  std::set<int> totals;
  for (int i = 0; i < 10000; ++i) {
    std::string text;
    const char label = "ABCD"[rng.below(4)];
    if (rng.bernoulli(0.5)) {
      const auto len = rng.below(13);
      for (std::uint64_t k = 0; k < len; ++k) text += fragments[rng.below(fragments.size())];
    } else {
      // A well-formed output with up to two random edits.
      text = "<think>" + fragments[rng.below(fragments.size())] + "</think>" + "\n<answer>" +
             std::string(1, "ABCD"[rng.below(4)]) + "</answer>";
      for (auto edits = rng.below(3); edits > 0; --edits) {
        const auto at = rng.below(text.size() + 1);
        if (rng.bernoulli(0.5)) {
          text.insert(at, fragments[rng.below(fragments.size())]);
        } else if (at < text.size()) {
          text.erase(at, 1);
        }
      }
    }
    const RewardBreakdown r = total_reward(text, label);
    totals.insert(r.total);
    v.require(r.total >= 0 && r.total <= 2 && r.total == r.format + r.accuracy, "total out of range");
    v.require(r.format == format_oracle(text), "fuzz format mismatch: " + text);
    const auto letter = extract_answer(text);
    v.require(r.accuracy == (letter && *letter == label ? 1 : 0), "fuzz accuracy mismatch");
  }
  v.detail << orders << " tag orders, " << subsets << " subset layouts, 10000 fuzzed strings; totals seen {";
  for (int t : totals) v.detail << t << (t == *totals.rbegin() ? "" : ",");
  v.detail << "}";
}

// 4 ---------------------------------------------------------------------------

void unanimity(Check& v) {
  // Every answer sequence of length 1..5 over A-D plus "no answer"; a
  // multiset is covered by each of its orderings.
  const std::vector<std::optional<char>> symbols = {'A', 'B', 'C', 'D', std::nullopt};
  std::size_t cases = 0;
  for (int n = 1; n <= 5; ++n) {
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) total *= symbols.size();
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<Trace> traces;
      std::multiset<std::optional<char>> bag;
      std::size_t c = code;
      for (int i = 0; i < n; ++i, c /= symbols.size()) {
        Trace t;
        t.extracted_answer = symbols[c % symbols.size()];
        t.raw_choice_index = i;
        bag.insert(t.extracted_answer);
        traces.push_back(t);
      }
      const TraceSet set = TraceSet::from_traces("s", traces);
      const auto first = *bag.begin();
      const bool expect = first.has_value() && bag.count(first) == bag.size();
      v.require(set.retained == expect, "retained mismatch");
      v.require(set.consensus == (expect ? first : std::nullopt), "consensus mismatch");
      ++cases;
    }
  }
  v.require(!TraceSet::from_traces("s", {}).retained, "empty set retained");
  v.detail << cases << " answer sequences agree with brute force";
}

// 5 ---------------------------------------------------------------------------

void kl_machinery(Check& v) {
  Rng rng(5);
  double worst = 0.0;
  const int horizon = 4;
  const TokenSeq prompt = {2};
  for (int trial = 0; trial < 10; ++trial) {
    const PolicyDims dims{3, 2, 3, 2};
    const PolicyParams p = testing::random_policy(rng, dims);
    const PolicyParams q = trial == 0 ? p : testing::random_policy(rng, dims);
    double expectation = 0.0;
    TokenSeq seq(horizon);
    for (int code = 0; code < 81; ++code) {
      int c = code;
      for (int t = 0; t < horizon; ++t, c /= 3) seq[static_cast<std::size_t>(t)] = c % 3;
      const LogProb lp = logprob(p, prompt, seq);
      const LogProb lq = logprob(q, prompt, seq);
      double k3 = 0.0;
      for (int t = 0; t < horizon; ++t) k3 += k3_estimator(lp.per_token[t], lq.per_token[t]);
      if (trial == 0) v.require(k3 == 0.0, "k3 nonzero for identical policies");
      expectation += std::exp(lp.total) * k3 / horizon;
    }
    const double exact = kl_exact(p, q, prompt, horizon);
    worst = std::max(worst, std::abs(expectation - exact));
    v.require(std::abs(expectation - exact) < 1e-10, "k3 expectation vs kl_exact");
  }
  v.require(grpo_token_objective(1.0, 0.37, 0.0, 0.2, 0.04) == 0.37, "ratio 1 gives A");
  v.require(std::abs(grpo_token_objective(1.5, 1.0, 0.0, 0.2, 0.04) - 1.2) < 1e-15, "(1.5,0.2,1)");
  v.require(std::abs(grpo_token_objective(0.5, -1.0, 0.0, 0.2, 0.04) + 0.8) < 1e-15, "(0.5,0.2,-1)");
  v.detail << "max |E[k3] - KL| = " << worst << "; clip identities hold";
}

// 6 ---------------------------------------------------------------------------

void filter_efficacy(Check& v) {
  testing::TempDir dir("cotd-acceptance-filter");
  PipelineConfig c = demo_config();
  c.synthetic.samples = 500;
  c.synthetic.hallucination_rate = 0.5;
  c.seed = 6;
  RunOptions o;
  o.run_dir = dir.path();
  {
    Pipeline p(o, c);
    for (Stage s : {Stage::kElicit, Stage::kVerify, Stage::kBuildCorpus}) p.run(s);
  }
  const auto samples = read_records<Sample>(dir / "samples.jsonl");
  std::map<std::string, std::vector<std::string>> scene;
  for (const auto& s : samples) scene[s.id] = *synthetic::events_from_ref(*s.media.audio_ref);

  std::size_t traces = 0, hallucinated = 0;
  std::set<std::string> reason;
  for (const auto& set : read_records<TraceSet>(dir / "traces.jsonl")) {
    for (const auto& t : set.traces) {
      ++traces;
      hallucinated += synthetic::hallucinates(t.text, scene.at(set.sample_id)) ? 1 : 0;
    }
    if (set.retained) reason.insert(set.sample_id);
  }
  std::size_t accepted = 0, leaked = 0;
  std::set<std::string> fc;
  for (const auto& r : read_records<VerifiedTrace>(dir / "verified.jsonl")) {
    if (r.verdict != Verdict::kAccept) continue;
    ++accepted;
    fc.insert(r.sample_id);
    leaked += synthetic::hallucinates(r.trace_text, scene.at(r.sample_id)) ? 1 : 0;
  }
  for (const auto& row : read_jsonl(dir / "sft_corpus.jsonl")) {
    const auto id = row.at("sample_id").get<std::string>();
    v.require(fc.count(id) > 0, "corpus sample without an accepted trace");
  }
  const double h = 0.5;
  const double pre = static_cast<double>(hallucinated) / static_cast<double>(traces);
  const double sigma = std::sqrt(h * (1 - h) / static_cast<double>(traces));
  v.require(samples.size() >= 500, "fewer than 500 samples");
  v.require(accepted > 0, "nothing accepted");
  v.require(leaked == 0, "hallucinated trace survived the filter");
  v.require(std::abs(pre - h) <= 3 * sigma, "pre-filter rate outside 3 sigma");
  v.require(std::includes(reason.begin(), reason.end(), fc.begin(), fc.end()), "filtered set not within the unanimous set");
  v.detail << samples.size() << " samples, " << traces << " traces: pre-filter rate " << pre
           << " (h=0.5, 3 sigma=" << 3 * sigma << "), post-filter " << leaked << "/" << accepted
           << "; filtered samples " << fc.size() << " <= unanimous samples " << reason.size();
}

// 7 ---------------------------------------------------------------------------

// P(X >= k) for X a sum of independent Bernoulli(p_i).
double poisson_binomial_tail(const std::vector<double>& p, std::size_t k) {
  std::vector<double> dist = {1.0};
  for (double pi : p) {
    std::vector<double> next(dist.size() + 1, 0.0);
    for (std::size_t j = 0; j < dist.size(); ++j) {
      next[j] += dist[j] * (1 - pi);
      next[j + 1] += dist[j] * pi;
    }
    dist = std::move(next);
  }
  double tail = 0.0;
  for (std::size_t j = k; j < dist.size(); ++j) tail += dist[j];
  return tail;
}

void end_to_end_demo(Check& v) {
  int improved = 0;
  double slowest = 0.0;
  const auto network_before = HttpBackend::network_operations();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testing::TempDir dir("cotd-acceptance-demo");
    PipelineConfig c = demo_config();
    c.seed = seed;
    RunOptions o;
    o.run_dir = dir.path();
    const auto t0 = Clock::now();
    Pipeline(o, c).run_all();
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    v.require(secs < 600.0, "demo took longer than 10 minutes");

    const json cmp = json::parse(read_text_file(dir / "eval_comparison.json"));
    std::vector<double> chance;
    for (const auto& s : read_records<Sample>(dir / "test_samples.jsonl")) {
      chance.push_back(1.0 / static_cast<double>(s.options.size()));
    }
    const std::size_t correct = cmp.at("deliverable").at("correct");
    const std::size_t sft = cmp.at("sft_best").at("correct");
    const std::size_t grpo = cmp.at("grpo_final").at("correct");
    const double pval = poisson_binomial_tail(chance, correct);
    v.require(chance.size() == 200, "test set is not 200 samples");
    v.require(pval < 0.01, "seed " + std::to_string(seed) + " not above chance");
    improved += grpo >= sft ? 1 : 0;
    v.detail << "seed " << seed << ": " << correct << "/" << chance.size() << " (p=" << pval
             << "), sft " << sft << " grpo " << grpo << ", " << secs << " s; ";
  }
  v.require(improved >= 3, "post-GRPO below post-SFT on more than two seeds");
  v.require(HttpBackend::network_operations() == network_before, "demo touched the network");
  v.detail << "GRPO >= SFT on " << improved << "/5 seeds, slowest run " << slowest << " s";
}

// 8 ---------------------------------------------------------------------------

void determinism(Check& v) {
  PipelineConfig c = demo_config();
  c.synthetic.samples = 60;
  c.synthetic.test_samples = 40;
  c.sft.steps = 60;
  c.grpo.steps = 10;
  c.grpo.eval_every = 5;
  c.seed = 8;
  testing::TempDir a("cotd-acceptance-det"), b("cotd-acceptance-det"), replay("cotd-acceptance-det");
  RunOptions oa, ob;
  oa.run_dir = a.path();
  ob.run_dir = b.path();
  ob.workers = 3;
  Pipeline(oa, c).run_all();
  Pipeline(ob, c).run_all();
  auto sa = testing::artifact_snapshot(a.path());
  auto sb = testing::artifact_snapshot(b.path());
  sa.erase("config.json");  // records the worker count
  sb.erase("config.json");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : sa) {
    if (!sb.count(name) || sb.at(name) != bytes) ++differing;
  }
  v.require(sa == sb, "artifacts differ between runs");

  // Replaying the recorded gateway traffic reproduces elicitation and verification.
  PipelineConfig r = c;
  r.teacher.endpoint = "replay://" + (a / "audit.jsonl").string();
  r.checker.endpoint = r.teacher.endpoint;
  r.data.samples = (a / "samples.jsonl").string();
  RunOptions orp;
  orp.run_dir = replay.path();
  {
    Pipeline p(orp, r);
    p.run(Stage::kElicit);
    p.run(Stage::kVerify);
  }
  for (auto name : {"traces.jsonl", "verified.jsonl"}) {
    v.require(read_text_file(a / name) == read_text_file(replay / name),
              std::string("replay differs in ") + name);
  }
  // Only the answering backend's id may differ in the audit trail.
  auto without_backend = [](const fs::path& file) {
    auto rows = read_jsonl(file);
    for (auto& row : rows) {
      row.erase("backend_id");
      row.erase("timestamp");
    }
    return rows;
  };
  v.require(without_backend(a / "audit.jsonl") == without_backend(replay / "audit.jsonl"),
            "replay differs in the audit trail");
  v.detail << sa.size() << " artifacts compared, " << differing
           << " differ; mock replay reproduces traces, verdicts and audit";
}

// 9 ---------------------------------------------------------------------------

void evaluator_fixtures(Check& v) {
  Sample s;
  s.id = "e";
  s.question = "Which instrument plays first?";
  s.options = {{'A', "violin"}, {'B', "piano"}, {'C', "electric guitar"}, {'D', "drum kit"}};
  s.gold_answer = 'C';
  const EvalResult letter = score_response("<think>x</think><answer>C</answer>", s);
  v.require(letter.matched_by == MatchedBy::kLetter && letter.correct, "letter path");
  const EvalResult sim = score_response("probably the electric guitar", s);
  v.require(sim.matched_by == MatchedBy::kSimilarity && sim.predicted_letter == 'C', "similarity fallback");
  const EvalResult invalid = score_response("<answer>F</answer> piano", s);
  v.require(invalid.matched_by == MatchedBy::kSimilarity && invalid.predicted_letter == 'B',
            "invalid letter falls through");
  Sample tie = s;
  tie.options = {{'A', "red car"}, {'B', "blue car"}};
  v.require(score_response("car", tie).predicted_letter == 'A', "tie to the lowest index");

  Rng rng(9);
  const std::vector<std::string> names = {"count", "position", "presence"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<EvalResult> results(rng.below(40));
    for (auto& r : results) {
      r.correct = rng.bernoulli(0.5);
      if (!rng.bernoulli(0.1)) r.category = names[rng.below(names.size())];
    }
    const EvalSummary sum = aggregate(results);
    std::map<std::string, std::pair<std::size_t, std::size_t>> recount;
    std::size_t correct = 0;
    for (const auto& r : results) {
      auto& [c, n] = recount[r.category.value_or("uncategorized")];
      ++n;
      c += r.correct;
      correct += r.correct;
    }
    v.require(sum.overall.correct == correct && sum.overall.total == results.size(), "overall recount");
    v.require(sum.per_category.size() == recount.size(), "category set");
    for (const auto& [name, cn] : recount) {
      const auto it = sum.per_category.find(name);
      v.require(it != sum.per_category.end() && it->second.correct == cn.first &&
                    it->second.total == cn.second,
                "per-category recount");
    }
  }
  v.detail << "4 fixtures; 1000 random result sets match a brute-force recount";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"advantage normalization", advantage_normalization},
      {"reward semantics", reward_semantics},
      {"unanimity", unanimity},
      {"KL machinery", kl_machinery},
      {"checker filter efficacy", filter_efficacy},
      {"end-to-end demo", end_to_end_demo},
      {"determinism", determinism},
      {"evaluator fixtures", evaluator_fixtures},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check v;
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    std::printf("%s %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                v.detail.str().c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
