#include "biaslens/finetune.hpp"

#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "biaslens/errors.hpp"
#include "biaslens/mock_backends.hpp"

namespace biaslens {

using nlohmann::json;

std::string to_string(FinetuneMethod method) {
  return method == FinetuneMethod::cda ? "cda" : "dropout";
}

FinetuneMethod parse_finetune_method(std::string_view name) {
  if (name == "cda") return FinetuneMethod::cda;
  if (name == "dropout") return FinetuneMethod::dropout;
  throw UsageError("unknown fine-tuning method '" + std::string(name) + "'");
}

namespace {

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw UsageError(fmt::format("{} must be in [0, 1), got {}", name, p));
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json FinetuneJob::to_json() const {
  const auto& h = hyperparameters;
  return json{{"method", to_string(method)},
              {"base_model_id", base_model_id},
              {"corpus",
               {{"id", corpus.id}, {"path", corpus.path.string()}, {"augmented", corpus.augmented}}},
              {"hyperparameters",
               {{"hidden_dropout", optional_json(h.hidden_dropout)},
                {"attention_dropout", optional_json(h.attention_dropout)},
                {"epochs", h.epochs},
                {"learning_rate", h.learning_rate},
                {"seed", h.seed},
                {"max_steps", h.max_steps ? json(*h.max_steps) : json(nullptr)}}},
              {"output_model_id", output_model_id},
              {"tool_defaults", tool_defaults}};
}

FinetuneJob build_job(FinetuneMethod method, const std::string& base_model_id,
                      const CorpusRef& corpus, const JobOverrides& overrides) {
  if (base_model_id.empty()) throw UsageError("base model id is empty");
  if (corpus.id.empty()) throw UsageError("corpus id is empty");
  if (!corpus.path.empty() && !std::filesystem::exists(corpus.path)) {
    throw UsageError("training corpus " + corpus.path.string() + " does not exist");
  }
  if (method == FinetuneMethod::dropout && corpus.augmented) {
    throw UsageError("dropout fine-tuning uses the unaugmented corpus");
  }
  if (method == FinetuneMethod::cda && !corpus.augmented) {
    throw UsageError("CDA fine-tuning needs an augmented corpus");
  }

  FinetuneJob job;
  job.method = method;
  job.base_model_id = base_model_id;
  job.corpus = corpus;
  auto& h = job.hyperparameters;
  if (method == FinetuneMethod::dropout) {
    h.hidden_dropout = kDropoutHidden;
    h.attention_dropout = kDropoutAttention;
  }
  if (overrides.hidden_dropout) h.hidden_dropout = overrides.hidden_dropout;
  if (overrides.attention_dropout) h.attention_dropout = overrides.attention_dropout;
  if (h.hidden_dropout) check_probability("hidden_dropout", *h.hidden_dropout);
  if (h.attention_dropout) check_probability("attention_dropout", *h.attention_dropout);

  auto take = [&](const char* name, auto& field, const auto& override) {
    if (override) {
      field = *override;
    } else {
      job.tool_defaults.emplace_back(name);
    }
  };
  take("epochs", h.epochs, overrides.epochs);
  take("learning_rate", h.learning_rate, overrides.learning_rate);
  take("seed", h.seed, overrides.seed);
  if (h.epochs == 0) throw UsageError("epochs must be at least 1");
  if (!(h.learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (overrides.max_steps) {
    if (*overrides.max_steps == 0) throw UsageError("max_steps must be at least 1");
    h.max_steps = overrides.max_steps;
  }

  job.output_model_id = overrides.output_model_id.value_or(
      fmt::format("{}+{}-ft-s{}", base_model_id, to_string(method), h.seed));
  if (job.output_model_id == base_model_id) {
    throw UsageError("output model id must differ from the base model id");
  }
  return job;
}

// --- registry and log ----------------------------------------------------------

void BackendRegistry::add(const std::string& id, BackendPtr backend) {
  if (!backend) throw UsageError("cannot register a null backend as " + id);
  std::lock_guard lock(mutex_);
  if (!backends_.emplace(id, std::move(backend)).second) {
    throw UsageError("model id " + id + " is already registered");
  }
}

BackendPtr BackendRegistry::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = backends_.find(id);
  if (it == backends_.end()) throw UsageError("unknown model id " + id);
  return it->second;
}

bool BackendRegistry::contains(const std::string& id) const {
  std::lock_guard lock(mutex_);
  return backends_.count(id) > 0;
}

std::vector<std::string> BackendRegistry::ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, b] : backends_) out.push_back(id);
  return out;
}

JobLog::JobLog(std::filesystem::path path) : path_(std::move(path)) {}

void JobLog::append(const json& manifest) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw UsageError("cannot open job log " + path_.string());
  out << manifest.dump() << '\n';
  out.flush();
  if (!out) throw UsageError("failed writing job log " + path_.string());
}

std::vector<json> JobLog::read() const {
  std::lock_guard lock(mutex_);
  std::vector<json> out;
  std::ifstream in(path_, std::ios::binary);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      throw ParseError("malformed job log entry", path_.string() + ":" + std::to_string(n));
    }
  }
  return out;
}

// --- run_job -------------------------------------------------------------------

namespace {

std::mutex g_running_mutex;
std::set<std::string> g_running;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunningGuard {
 public:
  explicit RunningGuard(std::string id) : id_(std::move(id)) {
    std::lock_guard lock(g_running_mutex);
    claimed_ = g_running.insert(id_).second;
  }
  ~RunningGuard() {
    if (!claimed_) return;
    std::lock_guard lock(g_running_mutex);
    g_running.erase(id_);
  }
  bool claimed() const { return claimed_; }

 private:
  std::string id_;
  bool claimed_ = false;
};

}  // namespace

JobOutcome run_job(const FinetuneJob& job, Trainer* trainer, BackendRegistry& registry,
                   const RunJobOptions& options) {
  json manifest{{"job", job.to_json()},
                {"trainer", trainer ? trainer->id() : std::string()},
                {"started_at", utc_now()},
                {"status", "running"}};
  const auto t0 = std::chrono::steady_clock::now();

  auto fail = [&](const std::string& message) -> JobError {
    manifest["status"] = "failed";
    manifest["error"] = message;
    manifest["finished_at"] = utc_now();
    manifest["wall_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (options.log) options.log->append(manifest);
    spdlog::error("fine-tuning job {} failed: {}", job.output_model_id, message);
    return JobError(message, manifest);
  };

  if (trainer == nullptr) throw fail("no trainer available");
  RunningGuard guard(job.output_model_id);
  if (!guard.claimed()) throw fail("a job for " + job.output_model_id + " is already running");
  if (registry.contains(job.output_model_id)) {
    throw fail("model id " + job.output_model_id + " is already registered");
  }
  BackendPtr base;
  try {
    base = registry.get(job.base_model_id);
  } catch (const UsageError& e) {
    throw fail(e.what());
  }

  TrainerStatus status;
  try {
    const auto handle = trainer->start(job, base);
    manifest["handle"] = handle;
    status = trainer->poll(handle);
    while (status.state == JobState::running) {
      if (std::chrono::steady_clock::now() - t0 > options.timeout) throw fail("trainer timed out");
      std::this_thread::sleep_for(options.poll_interval);
      status = trainer->poll(handle);
    }
  } catch (const JobError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(std::string("trainer error: ") + e.what());
  }
  if (status.state == JobState::failed) throw fail(status.message);
  if (!status.model) throw fail("trainer reported success without a model");

  registry.add(job.output_model_id, status.model);
  manifest["status"] = "succeeded";
  manifest["output_model_id"] = job.output_model_id;
  manifest["finished_at"] = utc_now();
  manifest["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!status.message.empty()) manifest["trainer_message"] = status.message;
  if (options.log) options.log->append(manifest);
  return {job.output_model_id, manifest};
}

// --- mock trainers ---------------------------------------------------------------

std::string IdentityTrainer::start(const FinetuneJob& job, BackendPtr base) {
  std::lock_guard lock(mutex_);
  const auto handle = "identity-" + std::to_string(results_.size() + 1) + "-" + job.output_model_id;
  results_[handle] = std::move(base);
  return handle;
}

TrainerStatus IdentityTrainer::poll(const std::string& handle) {
  std::lock_guard lock(mutex_);
  auto it = results_.find(handle);
  if (it == results_.end()) return {JobState::failed, "unknown handle " + handle, nullptr};
  return {JobState::succeeded, "", it->second};
}

std::string ShrinkBiasTrainer::id() const { return fmt::format("shrink-bias-{}", factor_); }

std::string ShrinkBiasTrainer::start(const FinetuneJob& job, BackendPtr base) {
  std::lock_guard lock(mutex_);
  const auto handle = "shrink-" + std::to_string(results_.size() + 1) + "-" + job.output_model_id;
  const auto* biased = dynamic_cast<const LinearBiasBackend*>(base.get());
  if (biased == nullptr) {
    results_[handle] = {JobState::failed, "base model is not a linear-bias mock", nullptr};
  } else {
    results_[handle] = {JobState::succeeded, "",
                        biased->with_strength(biased->config().strength * factor_,
                                              job.output_model_id)};
  }
  return handle;
}

TrainerStatus ShrinkBiasTrainer::poll(const std::string& handle) {
  std::lock_guard lock(mutex_);
  auto it = results_.find(handle);
  if (it == results_.end()) return {JobState::failed, "unknown handle " + handle, nullptr};
  return it->second;
}

}  // namespace biaslens
