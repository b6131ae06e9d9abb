#include "cotd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>

#include "cotd/elicitation.hpp"
#include "cotd/evaluator.hpp"
#include "cotd/parallel.hpp"
#include "cotd/policy.hpp"
#include "cotd/rng.hpp"
#include "cotd/serialization.hpp"
#include "cotd/synthetic.hpp"
#include "cotd/trainers.hpp"
#include "cotd/verification.hpp"

namespace cotd {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSyntheticEndpoint = "mock://synthetic";
constexpr std::string_view kReplayScheme = "replay://";

struct StageInfo {
  Stage stage;
  std::string_view name;
  bool per_sample;
};

constexpr StageInfo kStageInfo[] = {
    {Stage::kElicit, "elicit", true},          {Stage::kVerify, "verify", true},
    {Stage::kBuildCorpus, "build-corpus", false}, {Stage::kTrainSft, "train-sft", false},
    {Stage::kTrainGrpo, "train-grpo", false},  {Stage::kEval, "eval", false},
};

const StageInfo& info_of(Stage s) {
  for (const auto& i : kStageInfo) {
    if (i.stage == s) return i;
  }
  throw std::logic_error("unknown stage");
}

json comparable(const PipelineConfig& c) {
  json j = to_json(c);
  j.erase("workers");
  return j;
}

fs::path manifest_path(const fs::path& dir, Stage s) {
  return dir / "manifests" / (std::string(info_of(s).name) + ".jsonl");
}

std::optional<std::vector<json>> read_manifest(const fs::path& dir, Stage s) {
  const fs::path p = manifest_path(dir, s);
  if (!fs::exists(p)) return std::nullopt;
  return read_jsonl(p);
}

bool all_ok(const std::vector<json>& manifest) {
  return std::all_of(manifest.begin(), manifest.end(),
                     [](const json& r) { return r.at("status") == "ok"; });
}

json manifest_record(const std::optional<std::string>& sample_id, const std::string& error) {
  json r = {{"sample_id", sample_id ? json(*sample_id) : json(nullptr)},
            {"status", error.empty() ? "ok" : "failed"},
            {"error", error.empty() ? json(nullptr) : json(error)}};
  return r;
}

std::vector<Sample> read_samples(const fs::path& p) { return validate_manifest(p, true); }

std::map<std::string, json> by_sample(const std::vector<json>& manifest) {
  std::map<std::string, json> out;
  for (const auto& r : manifest) {
    if (r.at("sample_id").is_string()) out[r.at("sample_id").get<std::string>()] = r;
  }
  return out;
}

// Accuracy of a policy that picks an option uniformly at random.
double expected_uniform_accuracy(const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += 1.0 / static_cast<double>(s.options.size());
  return sum / static_cast<double>(samples.size());
}

}  // namespace

std::string_view to_string(Stage s) { return info_of(s).name; }

std::optional<Stage> stage_from_string(std::string_view s) {
  for (const auto& i : kStageInfo) {
    if (i.name == s) return i.stage;
  }
  return std::nullopt;
}

json to_json(const StageOutcome& o) {
  json j = {{"stage", to_string(o.stage)}, {"skipped", o.skipped}, {"ok", o.ok}, {"failed", o.failed}};
  if (!o.note.empty()) j["note"] = o.note;
  return j;
}

std::shared_ptr<Backend> default_backend(const BackendConfig& config, std::string_view role,
                                         const PipelineConfig& pipeline) {
  if (config.endpoint == kSyntheticEndpoint) {
    return synthetic::make_backend(pipeline.synthetic, derive_seed(pipeline.seed, "mock-backend"));
  }
  if (config.endpoint.rfind(kReplayScheme, 0) == 0) {
    return ReplayBackend::from_file(config.endpoint.substr(kReplayScheme.size()));
  }
  if (config.endpoint.rfind("http://", 0) == 0 || config.endpoint.rfind("https://", 0) == 0) {
    std::optional<std::string> key;
    if (const char* v = std::getenv(config.api_key_env.c_str())) key = v;
    return std::make_shared<HttpBackend>(config.endpoint, key,
                                         std::chrono::duration<double>(config.timeout_s));
  }
  throw PipelineError("config", "unsupported " + std::string(role) + " endpoint '" +
                                    config.endpoint + "'");
}

PipelineConfig demo_config() {
  PipelineConfig c;
  c.teacher.endpoint = std::string(kSyntheticEndpoint);
  c.checker.endpoint = std::string(kSyntheticEndpoint);
  c.synthetic.teacher_accuracy = 0.9;
  c.synthetic.samples = 200;
  c.synthetic.test_samples = 200;
  c.sft.steps = 500;
  c.sft.learning_rate = 0.5;
  c.sft.eval_every = 50;
  c.grpo.steps = 200;
  c.grpo.group_size = 8;
  c.grpo.kl_beta = 0.04;
  c.grpo.temperature = 1.0;
  c.grpo.learning_rate = 0.1;
  c.grpo.prompts_per_step = 8;
  c.grpo.eval_every = 20;
  c.seed = 7;
  return c;
}

Pipeline::Pipeline(const RunOptions& options, std::optional<PipelineConfig> preset,
                   BackendFactory backends, Logger log)
    : options_(options),
      dir_(options.run_dir),
      backends_(std::move(backends)),
      log_(std::move(log)),
      audit_(std::make_shared<AuditLog>()) {
  if (dir_.empty()) throw PipelineError("usage", "--run-dir is required");
  const fs::path snapshot = dir_ / "config.json";
  const bool have_snapshot = fs::exists(snapshot);

  if (options.config_path) {
    config_ = load_config(*options.config_path, true);
    data_base_ = options.config_path->parent_path();
  } else if (have_snapshot) {
    config_ = load_config(snapshot, true);
  } else if (preset) {
    config_ = *preset;
  }
  if (options.seed) config_.seed = *options.seed;
  if (options.grpo_pool) config_.grpo.pool = *options.grpo_pool;
  if (options.max_traces_per_sample) config_.data.max_traces_per_sample = *options.max_traces_per_sample;
  if (options.workers) config_.workers = *options.workers;
  config_.validate();

  if (have_snapshot) {
    const PipelineConfig recorded = load_config(snapshot, true);
    if (canonical(comparable(recorded)) != canonical(comparable(config_))) {
      throw PipelineError("config-mismatch",
                          "config differs from the snapshot in " + snapshot.string() +
                              "; use a fresh --run-dir");
    }
  }

  fs::create_directories(dir_);
  const fs::path lock = dir_ / ".lock";
  if (FILE* f = std::fopen(lock.c_str(), "wx")) {
    std::fclose(f);
    locked_ = true;
  } else {
    throw PipelineError("locked", "run directory is in use (remove " + lock.string() +
                                      " if no other process owns it)");
  }
  if (!have_snapshot) write_text_file(snapshot, to_json(config_).dump(2) + "\n");
}

Pipeline::~Pipeline() {
  if (locked_) {
    std::error_code ec;
    fs::remove(dir_ / ".lock", ec);
  }
}

void Pipeline::info(std::string_view message) const {
  if (log_) log_(message);
}

fs::path Pipeline::require(std::string_view name, Stage producer) const {
  const fs::path p = path(name);
  if (!fs::exists(p)) {
    throw PipelineError("missing-artifact", std::string(name) + " not found; run " +
                                                std::string(to_string(producer)));
  }
  return p;
}

std::shared_ptr<Gateway> Pipeline::gateway(const BackendConfig& config, std::string_view role) {
  auto backend = backends_ ? backends_(config, role) : default_backend(config, role, config_);
  return std::make_shared<Gateway>(backend, RetryPolicy::from_config(config_.retry),
                                   config.max_concurrency, audit_, Sleeper{},
                                   derive_seed(config_.seed, "jitter/" + std::string(role)));
}

void Pipeline::ensure_samples() {
  auto resolve = [&](const std::string& p) {
    const fs::path raw(p);
    return raw.is_absolute() || data_base_.empty() ? raw : data_base_ / raw;
  };
  const fs::path samples = path("samples.jsonl");
  const fs::path tests = path("test_samples.jsonl");
  if (fs::exists(samples)) return;
  if (!config_.data.samples.empty()) {
    write_records(samples, read_samples(resolve(config_.data.samples)));
    if (!config_.data.test_samples.empty()) {
      write_records(tests, read_samples(resolve(config_.data.test_samples)));
    }
    return;
  }
  if (config_.teacher.endpoint == kSyntheticEndpoint) {
    write_records(samples, synthetic::make_samples("syn-", config_.synthetic.samples,
                                                   derive_seed(config_.seed, "world")));
    if (config_.synthetic.test_samples > 0) {
      write_records(tests, synthetic::make_samples("syn-test-", config_.synthetic.test_samples,
                                                   derive_seed(config_.seed, "world-test")));
    }
    return;
  }
  throw PipelineError("missing-artifact", "samples.jsonl not found; set data.samples");
}

bool Pipeline::complete(Stage stage) const {
  const auto m = read_manifest(dir_, stage);
  if (!m) return false;
  return all_ok(*m) || !(options_.retry_failed && info_of(stage).per_sample);
}

StageOutcome Pipeline::run(Stage stage) {
  if (!options_.force && complete(stage)) {
    info(std::string(to_string(stage)) + ": complete, skipping");
    StageOutcome o{stage, true, 0, 0, "complete; use --force to redo"};
    return o;
  }
  if (options_.force) {
    // Everything downstream was derived from the artifacts about to change.
    bool later = false;
    for (Stage s : kAllStages) {
      if (later) fs::remove(manifest_path(dir_, s));
      if (s == stage) later = true;
    }
  }
  fs::create_directories(dir_ / "manifests");
  info(std::string(to_string(stage)) + ": running");
  StageOutcome o;
  switch (stage) {
    case Stage::kElicit: o = elicit(); break;
    case Stage::kVerify: o = verify(); break;
    case Stage::kBuildCorpus: o = build_corpus(); break;
    case Stage::kTrainSft: o = train_sft(); break;
    case Stage::kTrainGrpo: o = train_grpo(); break;
    case Stage::kEval: o = evaluate(); break;
  }
  audit_->flush(path("audit.jsonl"));
  o.stage = stage;
  info(std::string(to_string(stage)) + ": " + std::to_string(o.ok) + " ok, " +
       std::to_string(o.failed) + " failed");
  return o;
}

std::vector<StageOutcome> Pipeline::run_all() {
  std::vector<StageOutcome> out;
  const bool force = options_.force;
  for (Stage s : kAllStages) {
    out.push_back(run(s));
    // --force applies to the first stage; the later ones were invalidated by it.
    options_.force = false;
  }
  options_.force = force;
  return out;
}

StageOutcome Pipeline::elicit() {
  ensure_samples();
  const auto samples = read_samples(path("samples.jsonl"));

  std::map<std::string, TraceSet> previous;
  std::map<std::string, json> previous_status;
  const bool retry = !options_.force && fs::exists(manifest_path(dir_, Stage::kElicit));
  if (retry) {
    previous_status = by_sample(*read_manifest(dir_, Stage::kElicit));
    if (fs::exists(path("traces.jsonl"))) {
      for (auto& t : read_records<TraceSet>(path("traces.jsonl"))) previous[t.sample_id] = t;
    }
  }
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = previous_status.find(samples[i].id);
    if (!retry || it == previous_status.end() || it->second.at("status") != "ok") todo.push_back(i);
  }

  auto gw = gateway(config_.teacher, "teacher");
  struct Result {
    std::optional<TraceSet> set;
    std::string error;
  };
  auto results = parallel_map(todo.size(), config_.workers, [&](std::size_t k) {
    const std::size_t i = todo[k];
    try {
      return Result{cotd::elicit(samples[i], *gw, config_.teacher, derive_seed(config_.seed, "elicit", i)),
                    {}};
    } catch (const GatewayError& e) {
      return Result{std::nullopt, e.what()};
    }
  });
  std::map<std::string, Result> fresh;
  for (std::size_t k = 0; k < todo.size(); ++k) fresh[samples[todo[k]].id] = std::move(results[k]);

  std::vector<TraceSet> sets;
  std::vector<json> manifest;
  StageOutcome o;
  for (const auto& s : samples) {
    std::string error;
    if (auto it = fresh.find(s.id); it != fresh.end()) {
      if (it->second.set) sets.push_back(*it->second.set);
      error = it->second.error;
    } else if (auto p = previous.find(s.id); p != previous.end()) {
      sets.push_back(p->second);
    }
    manifest.push_back(manifest_record(s.id, error));
    (error.empty() ? o.ok : o.failed)++;
  }
  write_records(path("traces.jsonl"), sets);
  write_jsonl(manifest_path(dir_, Stage::kElicit), manifest);
  const auto retained = std::count_if(sets.begin(), sets.end(), [](const auto& t) { return t.retained; });
  o.note = std::to_string(retained) + " of " + std::to_string(sets.size()) + " trace sets unanimous";
  return o;
}

StageOutcome Pipeline::verify() {
  const auto traces = read_records<TraceSet>(require("traces.jsonl", Stage::kElicit));
  const auto samples = read_samples(require("samples.jsonl", Stage::kElicit));
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;

  std::map<std::string, std::vector<VerifiedTrace>> previous;
  std::map<std::string, json> previous_status;
  const bool retry = !options_.force && fs::exists(manifest_path(dir_, Stage::kVerify));
  if (retry) {
    previous_status = by_sample(*read_manifest(dir_, Stage::kVerify));
    if (fs::exists(path("verified.jsonl"))) {
      for (auto& v : read_records<VerifiedTrace>(path("verified.jsonl"))) {
        previous[v.sample_id].push_back(v);
      }
    }
  }

  std::vector<const TraceSet*> retained;
  for (const auto& t : traces) {
    if (!index.count(t.sample_id)) {
      throw ValidationError("trace set for unknown sample '" + t.sample_id + "'", 0, "sample_id");
    }
    if (t.retained) retained.push_back(&t);
  }
  std::vector<std::size_t> todo;
  for (std::size_t k = 0; k < retained.size(); ++k) {
    auto it = previous_status.find(retained[k]->sample_id);
    if (!retry || it == previous_status.end() || it->second.at("status") != "ok") todo.push_back(k);
  }

  auto gw = gateway(config_.checker, "checker");
  auto results = parallel_map(todo.size(), config_.workers, [&](std::size_t k) {
    const TraceSet& set = *retained[todo[k]];
    const std::size_t i = index.at(set.sample_id);
    return verify_traceset(set, samples[i], *gw, config_.checker,
                           derive_seed(config_.seed, "verify", i));
  });
  std::map<std::string, TraceSetVerification> fresh;
  for (std::size_t k = 0; k < todo.size(); ++k) {
    fresh[retained[todo[k]]->sample_id] = std::move(results[k]);
  }

  std::vector<VerifiedTrace> records;
  std::vector<json> manifest;
  StageOutcome o;
  std::size_t accepted = 0;
  for (const TraceSet* set : retained) {
    json rec;
    if (auto it = fresh.find(set->sample_id); it != fresh.end()) {
      const auto& v = it->second;
      records.insert(records.end(), v.records.begin(), v.records.end());
      std::string error;
      for (const auto& f : v.failures) {
        if (!error.empty()) error += "; ";
        error += "trace " + std::to_string(f.trace_index) + ": " + f.error;
      }
      rec = manifest_record(set->sample_id, error);
      rec["malformed"] = v.malformed;
    } else {
      const auto& kept = previous[set->sample_id];
      records.insert(records.end(), kept.begin(), kept.end());
      rec = previous_status.at(set->sample_id);
    }
    (rec.at("status") == "ok" ? o.ok : o.failed)++;
    manifest.push_back(std::move(rec));
  }
  for (const auto& r : records) accepted += r.verdict == Verdict::kAccept;
  write_records(path("verified.jsonl"), records);
  write_jsonl(manifest_path(dir_, Stage::kVerify), manifest);
  o.note = std::to_string(accepted) + " of " + std::to_string(records.size()) + " traces accepted";
  return o;
}

StageOutcome Pipeline::build_corpus() {
  const auto verified = read_records<VerifiedTrace>(require("verified.jsonl", Stage::kVerify));
  const auto traces = read_records<TraceSet>(require("traces.jsonl", Stage::kElicit));
  const auto samples = read_samples(require("samples.jsonl", Stage::kElicit));
  const Vocabulary vocab = Vocabulary::standard();

  // Every accepted trace must come from a unanimous trace set.
  std::set<std::pair<std::string, std::string>> reasoned;
  for (const auto& t : traces) {
    if (!t.retained) continue;
    for (const auto& tr : t.traces) reasoned.emplace(t.sample_id, tr.text);
  }
  for (const auto& v : verified) {
    if (v.verdict == Verdict::kAccept && !reasoned.count({v.sample_id, v.trace_text})) {
      throw ValidationError("accepted trace for '" + v.sample_id +
                            "' is not part of a retained trace set");
    }
  }

  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  Rng rng(derive_seed(config_.seed, "validation-split"));
  rng.shuffle(ids.begin(), ids.end());
  const auto n_val = static_cast<std::size_t>(
      std::llround(config_.data.val_fraction * static_cast<double>(ids.size())));
  std::set<std::string> val(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));

  const auto corpus =
      build_sft_corpus(verified, samples, vocab, config_.data.max_traces_per_sample, val);

  std::map<std::string, char> labels;
  if (config_.grpo.pool == GrpoPool::kFactChecked) {
    for (const auto& v : verified) {
      if (v.verdict == Verdict::kAccept) labels.emplace(v.sample_id, v.teacher_answer);
    }
  } else {
    for (const auto& t : traces) {
      if (t.retained && t.consensus) labels.emplace(t.sample_id, *t.consensus);
    }
  }
  std::vector<json> prompts;
  for (const auto& s : samples) {
    auto it = labels.find(s.id);
    if (it == labels.end() || val.count(s.id)) continue;
    prompts.push_back(to_json(GrpoPrompt{s.id, student_prompt(s.without_gold(), vocab), it->second}));
  }

  std::vector<json> rows;
  for (const auto& e : corpus) rows.push_back(to_json(e));
  write_jsonl(path("sft_corpus.jsonl"), rows);
  write_jsonl(path("grpo_prompts.jsonl"), prompts);
  std::vector<std::string> val_sorted(val.begin(), val.end());
  write_text_file(path("split.json"), json{{"validation", val_sorted}}.dump(2) + "\n");

  json rec = manifest_record(std::nullopt, "");
  rec["sft_examples"] = corpus.size();
  rec["grpo_prompts"] = prompts.size();
  rec["validation"] = val.size();
  write_jsonl(manifest_path(dir_, Stage::kBuildCorpus), {rec});
  StageOutcome o;
  o.ok = corpus.size();
  o.note = std::to_string(corpus.size()) + " SFT examples, " + std::to_string(prompts.size()) +
           " GRPO prompts, " + std::to_string(val.size()) + " validation samples";
  return o;
}

namespace {

std::vector<Sample> validation_samples(const fs::path& dir) {
  const json split = json::parse(read_text_file(dir / "split.json"));
  std::set<std::string> ids;
  for (const auto& id : split.at("validation")) ids.insert(id.get<std::string>());
  std::vector<Sample> out;
  for (auto& s : read_samples(dir / "samples.jsonl")) {
    if (ids.count(s.id)) out.push_back(std::move(s));
  }
  return out;
}

Validator make_validator(std::vector<Sample> val, const Vocabulary& vocab, int max_len) {
  return [val = std::move(val), &vocab, max_len](const PolicyParams& p) -> std::optional<double> {
    if (val.empty()) return std::nullopt;
    return policy_accuracy(p, vocab, val, max_len);
  };
}

std::string init_digest(std::uint64_t seed) { return rng_state_digest(Rng(derive_seed(seed, "policy-init"))); }

}  // namespace

StageOutcome Pipeline::train_sft() {
  std::vector<SftExample> corpus;
  for (const auto& j : read_jsonl(require("sft_corpus.jsonl", Stage::kBuildCorpus))) {
    corpus.push_back(sft_example_from_json(j));
  }
  const Vocabulary vocab = Vocabulary::standard();
  const Validator validate =
      make_validator(validation_samples(dir_), vocab, config_.grpo.max_new_tokens);
  fs::create_directories(dir_ / "checkpoints");
  const std::string digest = init_digest(config_.seed);
  std::vector<std::string> warnings;
  auto sink = [&](std::string_view tag, const PolicyParams& p) {
    save_checkpoint(dir_ / "checkpoints" / (std::string(tag) + ".json"), {vocab, p, digest});
  };
  auto warn = [&](std::string_view w) {
    warnings.emplace_back(w);
    info(w);
  };
  const SftRun run =
      run_sft(config_, initial_policy(config_, vocab), corpus, validate, sink, warn);
  save_checkpoint(dir_ / "checkpoints" / "sft_best.json", {vocab, run.best, digest});
  write_jsonl(path("metrics_sft.jsonl"), run.metrics);
  write_text_file(dir_ / "checkpoints" / "sft_selection.json",
                  json{{"val_accuracy", run.best_val ? json(*run.best_val) : json(nullptr)}}.dump(2) +
                      "\n");
  json rec = manifest_record(std::nullopt, "");
  if (!warnings.empty()) rec["warnings"] = warnings;
  write_jsonl(manifest_path(dir_, Stage::kTrainSft), {rec});
  StageOutcome o;
  o.ok = static_cast<std::size_t>(config_.sft.steps);
  if (run.best_val) o.note = "best validation accuracy " + std::to_string(*run.best_val);
  return o;
}

StageOutcome Pipeline::train_grpo() {
  const Checkpoint sft = load_checkpoint(require("checkpoints/sft_best.json", Stage::kTrainSft));
  std::vector<GrpoPrompt> prompts;
  for (const auto& j : read_jsonl(require("grpo_prompts.jsonl", Stage::kBuildCorpus))) {
    prompts.push_back(grpo_prompt_from_json(j));
  }
  const json selection =
      json::parse(read_text_file(require("checkpoints/sft_selection.json", Stage::kTrainSft)));
  std::optional<double> sft_val;
  if (selection.at("val_accuracy").is_number()) sft_val = selection.at("val_accuracy").get<double>();

  const Vocabulary& vocab = sft.vocabulary;
  const Validator validate =
      make_validator(validation_samples(dir_), vocab, config_.grpo.max_new_tokens);
  const std::string digest = init_digest(config_.seed);
  std::vector<std::string> warnings;
  auto sink = [&](std::string_view tag, const PolicyParams& p) {
    save_checkpoint(dir_ / "checkpoints" / (std::string(tag) + ".json"), {vocab, p, digest});
  };
  auto warn = [&](std::string_view w) {
    warnings.emplace_back(w);
    info(w);
  };
  const GrpoRun run = run_grpo(config_, sft.params, sft_val, prompts, vocab, validate, sink, warn);
  save_checkpoint(dir_ / "checkpoints" / "grpo_final.json", {vocab, run.final_params, digest});
  save_checkpoint(dir_ / "checkpoints" / "deliverable.json", {vocab, run.deliverable, digest});
  write_jsonl(path("metrics_grpo.jsonl"), run.metrics);
  write_text_file(dir_ / "checkpoints" / "selection.json",
                  json{{"deliverable", run.deliverable_tag},
                       {"val_accuracy",
                        run.deliverable_val ? json(*run.deliverable_val) : json(nullptr)}}
                          .dump(2) +
                      "\n");
  json rec = manifest_record(std::nullopt, "");
  rec["deliverable"] = run.deliverable_tag;
  if (!warnings.empty()) rec["warnings"] = warnings;
  write_jsonl(manifest_path(dir_, Stage::kTrainGrpo), {rec});
  StageOutcome o;
  o.ok = static_cast<std::size_t>(config_.grpo.steps);
  o.note = "deliverable " + run.deliverable_tag;
  return o;
}

StageOutcome Pipeline::evaluate() {
  std::vector<Sample> eval_set;
  std::string eval_name;
  if (fs::exists(path("test_samples.jsonl"))) {
    eval_set = read_samples(path("test_samples.jsonl"));
    eval_name = "test";
  }
  if (eval_set.empty() && fs::exists(path("split.json"))) {
    eval_set = validation_samples(dir_);
    eval_name = "validation";
    if (!eval_set.empty()) info("no test set; evaluating on the validation split");
  }
  if (eval_set.empty()) {
    eval_set = read_samples(require("samples.jsonl", Stage::kElicit));
    eval_name = "all";
    info("no held-out samples; evaluating on the training samples");
  }
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : eval_set) by_id[s.id] = &s;

  const Vocabulary vocab = Vocabulary::standard();
  const int max_len = config_.grpo.max_new_tokens;
  auto decode_all = [&](const PolicyParams& p) {
    return parallel_map(eval_set.size(), config_.workers, [&](std::size_t i) {
      const TokenSeq out =
          greedy_decode(p, student_prompt(eval_set[i].without_gold(), vocab), max_len, vocab.eos());
      return vocab.detokenize(out);
    });
  };

  std::vector<Prediction> predictions;
  json comparison;
  if (options_.predictions) {
    predictions = read_predictions(options_.predictions->string());
  } else {
    const Checkpoint deliverable =
        load_checkpoint(require("checkpoints/deliverable.json", Stage::kTrainGrpo));
    const auto texts = decode_all(deliverable.params);
    std::vector<json> rows;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      predictions.push_back({eval_set[i].id, texts[i]});
      rows.push_back({{"sample_id", eval_set[i].id}, {"response_text", texts[i]}});
    }
    write_jsonl(path("predictions.jsonl"), rows);

    auto accuracy = [&](const PolicyParams& p) {
      const auto outs = decode_all(p);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < eval_set.size(); ++i) {
        correct += score_response(outs[i], eval_set[i]).correct;
      }
      return json{{"correct", correct}, {"n", eval_set.size()}};
    };
    comparison = {{"eval_set", eval_name},
                  {"n", eval_set.size()},
                  {"uniform_baseline", expected_uniform_accuracy(eval_set)},
                  {"untrained", accuracy(initial_policy(config_, vocab))},
                  {"deliverable", accuracy(deliverable.params)}};
    for (auto [key, file] : {std::pair{"sft_best", "sft_best.json"},
                             std::pair{"grpo_final", "grpo_final.json"}}) {
      const fs::path p = dir_ / "checkpoints" / file;
      if (fs::exists(p)) comparison[key] = accuracy(load_checkpoint(p).params);
    }
  }

  std::vector<EvalResult> results;
  std::vector<json> rows;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.sample_id);
    if (it == by_id.end()) {
      throw ValidationError("prediction for unknown sample '" + p.sample_id + "'", 0, "sample_id");
    }
    results.push_back(score_response(p.response_text, *it->second));
    rows.push_back(to_json(results.back()));
  }
  const EvalSummary summary = aggregate(results);
  write_jsonl(path("eval_results.jsonl"), rows);
  write_text_file(path("summary.json"), to_json(summary).dump(2) + "\n");
  if (!comparison.is_null()) write_text_file(path("eval_comparison.json"), comparison.dump(2) + "\n");

  json rec = manifest_record(std::nullopt, "");
  rec["eval_set"] = eval_name;
  write_jsonl(manifest_path(dir_, Stage::kEval), {rec});
  StageOutcome o;
  o.ok = results.size();
  if (const auto acc = summary.overall.accuracy()) o.note = "accuracy " + std::to_string(*acc);
  return o;
}

}  // namespace cotd
