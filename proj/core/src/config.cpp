#include "cotd/config.hpp"

#include "cotd/serialization.hpp"
#include "cotd/types.hpp"

namespace cotd {
namespace {

class Reader {
 public:
  Reader(const json& j, std::string path, bool strict) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("'" + path_ + "' must be an object", 0, path_);
    if (strict) strict_ = true;
  }

  template <typename T>
  Reader& get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return *this;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ValidationError("bad type for '" + field(key) + "'", 0, field(key));
    }
    return *this;
  }

  Reader section(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    static const json kEmpty = json::object();
    return Reader(it == j_.end() || it->is_null() ? kEmpty : *it, field(key), strict_);
  }

  void finish() const {
    if (!strict_) return;
    for (const auto& [key, _] : j_.items()) {
      bool known = false;
      for (const auto& s : seen_) known = known || s == key;
      if (!known) throw ValidationError("unknown config field '" + field(key.c_str()) + "'", 0, key);
    }
  }

 private:
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  bool strict_ = false;
  std::vector<std::string> seen_;
};

void read_backend(Reader& r, BackendConfig& b) {
  r.get("endpoint", b.endpoint)
      .get("model_name", b.model_name)
      .get("api_key_env", b.api_key_env)
      .get("max_concurrency", b.max_concurrency)
      .get("max_tokens", b.max_tokens)
      .get("timeout_s", b.timeout_s);
}

json backend_json(const BackendConfig& b) {
  return {{"endpoint", b.endpoint},       {"model_name", b.model_name},
          {"api_key_env", b.api_key_env}, {"max_concurrency", b.max_concurrency},
          {"max_tokens", b.max_tokens},   {"timeout_s", b.timeout_s}};
}

void check(bool ok, const char* field, const char* what) {
  if (!ok) throw ValidationError(std::string(field) + " " + what, 0, field);
}

}  // namespace

PipelineConfig::PipelineConfig() {
  teacher.model_name = "teacher";
  checker.model_name = "checker";
  checker.max_tokens = 32;
}

void PipelineConfig::validate() const {
  check(teacher.n_traces >= 1, "teacher.n_traces", "must be >= 1");
  check(teacher.temperature > 0, "teacher.temperature", "must be > 0");
  check(teacher.max_concurrency >= 1, "teacher.max_concurrency", "must be >= 1");
  check(checker.max_concurrency >= 1, "checker.max_concurrency", "must be >= 1");
  check(grpo.group_size >= 2, "grpo.group_size", "must be >= 2");
  check(grpo.clip_epsilon > 0 && grpo.clip_epsilon < 1, "grpo.clip_epsilon", "must lie in (0,1)");
  check(grpo.kl_beta >= 0, "grpo.kl_beta", "must be >= 0");
  check(grpo.temperature > 0, "grpo.temperature", "must be > 0");
  check(grpo.inner_epochs >= 1, "grpo.inner_epochs", "must be >= 1");
  check(grpo.steps >= 0, "grpo.steps", "must be >= 0");
  check(grpo.prompts_per_step >= 1, "grpo.prompts_per_step", "must be >= 1");
  check(grpo.max_new_tokens >= 1, "grpo.max_new_tokens", "must be >= 1");
  check(sft.steps >= 0, "sft.steps", "must be >= 0");
  check(sft.batch_size >= 1, "sft.batch_size", "must be >= 1");
  check(sft.learning_rate >= 0, "sft.learning_rate", "must be >= 0");
  check(sft.weight_decay >= 0, "sft.weight_decay", "must be >= 0");
  check(grpo.learning_rate >= 0, "grpo.learning_rate", "must be >= 0");
  check(model.embed_dim >= 1 && model.hidden_dim >= 1 && model.window >= 1, "model",
        "dimensions must be >= 1");
  check(data.val_fraction >= 0 && data.val_fraction < 1, "data.val_fraction", "must lie in [0,1)");
  check(data.max_traces_per_sample >= 0, "data.max_traces_per_sample", "must be >= 0");
  check(retry.max_attempts >= 1, "retry.max_attempts", "must be >= 1");
  check(synthetic.teacher_accuracy >= 0 && synthetic.teacher_accuracy <= 1,
        "synthetic.teacher_accuracy", "must lie in [0,1]");
  check(synthetic.hallucination_rate >= 0 && synthetic.hallucination_rate <= 1,
        "synthetic.hallucination_rate", "must lie in [0,1]");
  check(workers >= 1, "workers", "must be >= 1");
}

std::string_view to_string(GrpoPool pool) { return pool == GrpoPool::kReason ? "reason" : "fc"; }

GrpoPool grpo_pool_from_string(std::string_view s) {
  if (s == "fc") return GrpoPool::kFactChecked;
  if (s == "reason") return GrpoPool::kReason;
  throw ValidationError("grpo.pool must be 'reason' or 'fc'", 0, "grpo.pool");
}

json to_json(const PipelineConfig& c) {
  json teacher = backend_json(c.teacher);
  teacher["n_traces"] = c.teacher.n_traces;
  teacher["temperature"] = c.teacher.temperature;
  teacher["prompt_template"] = c.teacher.prompt_template;
  json checker = backend_json(c.checker);
  checker["include_question"] = c.checker.include_question;
  return {
      {"teacher", teacher},
      {"checker", checker},
      {"sft",
       {{"learning_rate", c.sft.learning_rate},
        {"steps", c.sft.steps},
        {"batch_size", c.sft.batch_size},
        {"eval_every", c.sft.eval_every},
        {"weight_decay", c.sft.weight_decay},
        {"lora_rank", c.sft.lora_rank},
        {"lora_alpha", c.sft.lora_alpha}}},
      {"grpo",
       {{"group_size", c.grpo.group_size},
        {"learning_rate", c.grpo.learning_rate},
        {"temperature", c.grpo.temperature},
        {"kl_beta", c.grpo.kl_beta},
        {"clip_epsilon", c.grpo.clip_epsilon},
        {"steps", c.grpo.steps},
        {"inner_epochs", c.grpo.inner_epochs},
        {"prompts_per_step", c.grpo.prompts_per_step},
        {"max_new_tokens", c.grpo.max_new_tokens},
        {"eval_every", c.grpo.eval_every},
        {"pool", std::string(to_string(c.grpo.pool))}}},
      {"model",
       {{"embed_dim", c.model.embed_dim},
        {"hidden_dim", c.model.hidden_dim},
        {"window", c.model.window},
        {"init_scale", c.model.init_scale}}},
      {"data",
       {{"samples", c.data.samples},
        {"test_samples", c.data.test_samples},
        {"val_fraction", c.data.val_fraction},
        {"max_traces_per_sample", c.data.max_traces_per_sample}}},
      {"retry",
       {{"max_attempts", c.retry.max_attempts},
        {"base_delay_s", c.retry.base_delay_s},
        {"factor", c.retry.factor},
        {"jitter", c.retry.jitter}}},
      {"synthetic",
       {{"teacher_accuracy", c.synthetic.teacher_accuracy},
        {"hallucination_rate", c.synthetic.hallucination_rate},
        {"samples", c.synthetic.samples},
        {"test_samples", c.synthetic.test_samples}}},
      {"workers", c.workers},
      {"seed", c.seed},
  };
}

PipelineConfig config_from_json(const json& j, bool strict) {
  PipelineConfig c;
  Reader root(j, "", strict);
  {
    Reader r = root.section("teacher");
    read_backend(r, c.teacher);
    r.get("n_traces", c.teacher.n_traces)
        .get("temperature", c.teacher.temperature)
        .get("prompt_template", c.teacher.prompt_template);
    r.finish();
  }
  {
    Reader r = root.section("checker");
    read_backend(r, c.checker);
    r.get("include_question", c.checker.include_question);
    r.finish();
  }
  {
    Reader r = root.section("sft");
    r.get("learning_rate", c.sft.learning_rate)
        .get("steps", c.sft.steps)
        .get("batch_size", c.sft.batch_size)
        .get("eval_every", c.sft.eval_every)
        .get("weight_decay", c.sft.weight_decay)
        .get("lora_rank", c.sft.lora_rank)
        .get("lora_alpha", c.sft.lora_alpha);
    r.finish();
  }
  {
    Reader r = root.section("grpo");
    std::string pool(to_string(c.grpo.pool));
    r.get("group_size", c.grpo.group_size)
        .get("learning_rate", c.grpo.learning_rate)
        .get("temperature", c.grpo.temperature)
        .get("kl_beta", c.grpo.kl_beta)
        .get("clip_epsilon", c.grpo.clip_epsilon)
        .get("steps", c.grpo.steps)
        .get("inner_epochs", c.grpo.inner_epochs)
        .get("prompts_per_step", c.grpo.prompts_per_step)
        .get("max_new_tokens", c.grpo.max_new_tokens)
        .get("eval_every", c.grpo.eval_every)
        .get("pool", pool);
    c.grpo.pool = grpo_pool_from_string(pool);
    r.finish();
  }
  {
    Reader r = root.section("model");
    r.get("embed_dim", c.model.embed_dim)
        .get("hidden_dim", c.model.hidden_dim)
        .get("window", c.model.window)
        .get("init_scale", c.model.init_scale);
    r.finish();
  }
  {
    Reader r = root.section("data");
    r.get("samples", c.data.samples)
        .get("test_samples", c.data.test_samples)
        .get("val_fraction", c.data.val_fraction)
        .get("max_traces_per_sample", c.data.max_traces_per_sample);
    r.finish();
  }
  {
    Reader r = root.section("retry");
    r.get("max_attempts", c.retry.max_attempts)
        .get("base_delay_s", c.retry.base_delay_s)
        .get("factor", c.retry.factor)
        .get("jitter", c.retry.jitter);
    r.finish();
  }
  {
    Reader r = root.section("synthetic");
    r.get("teacher_accuracy", c.synthetic.teacher_accuracy)
        .get("hallucination_rate", c.synthetic.hallucination_rate)
        .get("samples", c.synthetic.samples)
        .get("test_samples", c.synthetic.test_samples);
    r.finish();
  }
  root.get("workers", c.workers).get("seed", c.seed);
  root.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path, bool strict) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what(), 0, "config");
  }
  return config_from_json(j, strict);
}

}  // namespace cotd
