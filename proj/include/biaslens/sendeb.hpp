#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "biaslens/backend.hpp"
#include "biaslens/cda.hpp"

namespace biaslens {

/// Parallel sentences: by_slot[j][i] is example i with its first attribute
/// word in slot j and every other attribute word rotated alongside it.
struct ContextualizedSet {
  BiasType bias_type = BiasType::gender;
  std::vector<std::vector<std::string>> by_slot;
  std::string lexicon_id;
  std::string corpus_id;

  std::size_t arity() const { return by_slot.size(); }
  std::size_t n_examples() const { return by_slot.empty() ? 0 : by_slot.front().size(); }
};

/// Expands every template containing a lexicon term into its d parallel
/// variants; identical variant tuples are kept once. Throws FitDataError when
/// nothing matches.
ContextualizedSet contextualize(const AttributeLexicon& lexicon,
                                std::span<const std::string> templates,
                                std::string corpus_id = "memory");
ContextualizedSet contextualize(const AttributeLexicon& lexicon, LineSource& templates,
                                std::string corpus_id);

enum class CenteringMode {
  /// Subtract the mean of the example's own d variants.
  per_example,
  /// Subtract the grand mean from each slot's mean vector; PCA runs on the d slot means.
  per_slot,
};

CenteringMode parse_centering_mode(std::string_view name);
std::string to_string(CenteringMode mode);

struct SubspaceProvenance {
  std::string lexicon_id;
  std::string corpus_id;
  std::string backend_id;
  std::string bias_type;
  std::string centering;
  std::size_t n_examples = 0;
};

struct BiasSubspace {
  /// dim x k, orthonormal columns ordered by explained variance.
  Eigen::MatrixXd directions;
  /// Fraction of total variance per direction.
  std::vector<double> explained_variance;
  SubspaceProvenance provenance;

  std::size_t dim() const { return static_cast<std::size_t>(directions.rows()); }
  std::size_t k() const { return static_cast<std::size_t>(directions.cols()); }
  Eigen::VectorXd direction(std::size_t j) const { return directions.col(static_cast<Eigen::Index>(j)); }
};

struct PcaResult {
  Eigen::MatrixXd components;
  std::vector<double> explained_variance;
};

/// Top-k principal axes of the rows (already centered) via SVD. Each axis has
/// its largest-magnitude coordinate positive. Throws UsageError for k outside
/// [1, dim] and DegenerateFitError when fewer than k axes carry variance.
PcaResult pca_directions(const Eigen::MatrixXd& centered_rows, std::size_t k);

/// Encodes every sentence, centers, and runs PCA. Throws CapabilityError when
/// the backend cannot encode sentences.
BiasSubspace fit_subspace(const ContextualizedSet& set, const ModelBackend& backend,
                          std::size_t k = 1, CenteringMode centering = CenteringMode::per_example);

/// h minus its projection on every direction. Throws UsageError on dimension mismatch.
Eigen::VectorXd remove_projection(const Eigen::VectorXd& h, const BiasSubspace& subspace);
HiddenState remove_projection(const HiddenState& h, const BiasSubspace& subspace);

std::string subspace_to_json(const BiasSubspace& subspace);
BiasSubspace subspace_from_json(std::string_view json_text);
void save_subspace(const BiasSubspace& subspace, const std::filesystem::path& path);
BiasSubspace load_subspace(const std::filesystem::path& path);

/// Backend whose final hidden states pass through remove_projection before
/// the LM head and before sentence pooling.
class DebiasedBackend : public ModelBackend, public HiddenStateAccess {
 public:
  DebiasedBackend(BackendPtr base, BiasSubspace subspace);

  const Tokenizer& tokenizer() const override { return base_->tokenizer(); }
  const HiddenStateAccess* hidden_access() const override { return this; }

  Eigen::VectorXd masked_hidden(std::span<const TokenId> tokens,
                                std::size_t position) const override;
  Eigen::VectorXd causal_hidden(std::span<const TokenId> prefix) const override;
  std::vector<Eigen::VectorXd> token_hidden(std::span<const TokenId> tokens) const override;
  HeadOutput lm_head(const Eigen::VectorXd& hidden) const override;

  const BiasSubspace& subspace() const { return subspace_; }
  const BackendPtr& base() const { return base_; }

 private:
  BackendPtr base_;
  const HiddenStateAccess* access_;
  BiasSubspace subspace_;
};

/// Throws CapabilityError when `backend` has no hidden-state access and
/// UsageError when its hidden size differs from the subspace.
BackendPtr debias_hook(BackendPtr backend, const BiasSubspace& subspace);

}  // namespace biaslens
