#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/backend.hpp"
#include "json.hpp"

namespace biaslens {

enum class FinetuneMethod { cda, dropout };
std::string to_string(FinetuneMethod method);
FinetuneMethod parse_finetune_method(std::string_view name);

/// Training corpus handle. `augmented` marks CDA output.
struct CorpusRef {
  std::string id;
  std::filesystem::path path;
  bool augmented = false;
};

inline constexpr double kDropoutHidden = 0.20;
inline constexpr double kDropoutAttention = 0.15;

struct Hyperparameters {
  /// nullopt keeps the model's own dropout.
  std::optional<double> hidden_dropout;
  std::optional<double> attention_dropout;
  std::size_t epochs = 1;
  double learning_rate = 2e-5;
  std::uint64_t seed = 42;
  std::optional<std::size_t> max_steps;
};

struct JobOverrides {
  std::optional<double> hidden_dropout;
  std::optional<double> attention_dropout;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  std::optional<std::string> output_model_id;
};

struct FinetuneJob {
  FinetuneMethod method = FinetuneMethod::dropout;
  std::string base_model_id;
  CorpusRef corpus;
  Hyperparameters hyperparameters;
  std::string output_model_id;
  /// Hyperparameter names whose values are tool choices with no reference setting.
  std::vector<std::string> tool_defaults;

  nlohmann::json to_json() const;
};

/// Throws UsageError for out-of-range overrides, a missing corpus file, or a
/// corpus that does not suit the method (dropout needs unaugmented text, cda
/// needs augmented text).
FinetuneJob build_job(FinetuneMethod method, const std::string& base_model_id,
                      const CorpusRef& corpus, const JobOverrides& overrides = {});

enum class JobState { running, succeeded, failed };

struct TrainerStatus {
  JobState state = JobState::running;
  std::string message;
  /// Set when state == succeeded.
  BackendPtr model;
};

/// External training capability: start returns a handle to poll.
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual std::string id() const = 0;
  virtual std::string start(const FinetuneJob& job, BackendPtr base) = 0;
  virtual TrainerStatus poll(const std::string& handle) = 0;
};

/// Backends addressable by model id.
class BackendRegistry {
 public:
  /// Throws UsageError when the id is taken.
  void add(const std::string& id, BackendPtr backend);
  /// Throws UsageError for unknown ids.
  BackendPtr get(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, BackendPtr> backends_;
};

/// Append-only JSONL log of job manifests.
class JobLog {
 public:
  explicit JobLog(std::filesystem::path path);
  void append(const nlohmann::json& manifest);
  std::vector<nlohmann::json> read() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

struct RunJobOptions {
  std::chrono::milliseconds poll_interval{10};
  std::chrono::milliseconds timeout{std::chrono::hours(24)};
  JobLog* log = nullptr;
};

struct JobOutcome {
  std::string model_id;
  nlohmann::json manifest;
};

/// Trains via `trainer`, registers the result under job.output_model_id and
/// records the manifest. Throws JobError, carrying the manifest so far, when
/// the trainer is missing or fails, the base model is unknown, or a job for
/// the same output id is already running.
JobOutcome run_job(const FinetuneJob& job, Trainer* trainer, BackendRegistry& registry,
                   const RunJobOptions& options = {});

/// Returns the base model unchanged.
class IdentityTrainer : public Trainer {
 public:
  std::string id() const override { return "identity"; }
  std::string start(const FinetuneJob& job, BackendPtr base) override;
  TrainerStatus poll(const std::string& handle) override;

 private:
  std::mutex mutex_;
  std::map<std::string, BackendPtr> results_;
};

/// Multiplies the attribute strength of a LinearBiasBackend by `factor`.
class ShrinkBiasTrainer : public Trainer {
 public:
  explicit ShrinkBiasTrainer(double factor = 0.5) : factor_(factor) {}
  std::string id() const override;
  std::string start(const FinetuneJob& job, BackendPtr base) override;
  TrainerStatus poll(const std::string& handle) override;

 private:
  double factor_;
  std::mutex mutex_;
  std::map<std::string, TrainerStatus> results_;
};

}  // namespace biaslens
