#include "biaslens/sendeb.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "biaslens/errors.hpp"
#include "json.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

/// The d variants of `text`, slot j first. Empty when no term matches.
std::vector<std::string> parallel_variants(const std::string& text, const AttributeLexicon& lexicon) {
  const auto matches = lexicon.find(text);
  if (matches.empty()) return {};
  const auto d = lexicon.arity();
  const auto anchor = matches.front().slot;
  const auto rotated = counterfactuals(text, lexicon);
  std::vector<std::string> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto offset = (j + d - anchor) % d;
    out[j] = offset == 0 ? text : rotated[offset - 1].text;
  }
  return out;
}

class Collector {
 public:
  Collector(const AttributeLexicon& lexicon, std::string corpus_id) : lexicon_(lexicon) {
    set_.bias_type = lexicon.bias_type();
    set_.by_slot.resize(lexicon.arity());
    set_.lexicon_id = lexicon.id();
    set_.corpus_id = std::move(corpus_id);
  }

  void add(const std::string& text) {
    auto variants = parallel_variants(text, lexicon_);
    if (variants.empty()) return;
    if (!seen_.insert(variants).second) return;
    for (std::size_t j = 0; j < variants.size(); ++j) set_.by_slot[j].push_back(std::move(variants[j]));
  }

  ContextualizedSet finish() {
    if (set_.n_examples() == 0) {
      throw FitDataError("no template sentence contains a " + to_string(lexicon_.bias_type()) +
                         " lexicon term");
    }
    return std::move(set_);
  }

 private:
  const AttributeLexicon& lexicon_;
  ContextualizedSet set_;
  std::set<std::vector<std::string>> seen_;
};

}  // namespace

ContextualizedSet contextualize(const AttributeLexicon& lexicon,
                                std::span<const std::string> templates, std::string corpus_id) {
  Collector c(lexicon, std::move(corpus_id));
  for (const auto& t : templates) c.add(t);
  return c.finish();
}

ContextualizedSet contextualize(const AttributeLexicon& lexicon, LineSource& templates,
                                std::string corpus_id) {
  Collector c(lexicon, std::move(corpus_id));
  while (auto rec = templates.next()) {
    for (const auto& sentence : split_sentences(rec->text)) c.add(sentence);
  }
  return c.finish();
}

CenteringMode parse_centering_mode(std::string_view name) {
  if (name == "per-example" || name == "per_example") return CenteringMode::per_example;
  if (name == "per-slot" || name == "per_slot") return CenteringMode::per_slot;
  throw UsageError("unknown centering mode '" + std::string(name) + "'");
}

std::string to_string(CenteringMode mode) {
  return mode == CenteringMode::per_example ? "per-example" : "per-slot";
}

PcaResult pca_directions(const Eigen::MatrixXd& rows, std::size_t k) {
  const auto dim = static_cast<std::size_t>(rows.cols());
  if (k < 1 || k > dim) throw UsageError(fmt::format("k must be in [1, {}], got {}", dim, k));
  if (rows.rows() < 1) throw DegenerateFitError("no vectors to fit");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(rows, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  const double floor = std::max(1e-12, 1e-10 * (sv.size() > 0 ? sv(0) : 0.0));
  if (static_cast<std::size_t>(sv.size()) < k || sv(static_cast<Eigen::Index>(k - 1)) <= floor) {
    throw DegenerateFitError(fmt::format("centered vectors span fewer than {} directions", k));
  }

  PcaResult out;
  out.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < out.components.cols(); ++j) {
    Eigen::Index arg = 0;
    out.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.components(arg, j) < 0) out.components.col(j) *= -1.0;
    out.explained_variance.push_back(sv(j) * sv(j) / total);
  }
  return out;
}

BiasSubspace fit_subspace(const ContextualizedSet& set, const ModelBackend& backend, std::size_t k,
                          CenteringMode centering) {
  const auto d = set.arity();
  const auto n = set.n_examples();
  if (d < 2 || n == 0) throw FitDataError("contextualized set is empty");
  for (const auto& slot : set.by_slot) {
    if (slot.size() != n) throw FitDataError("contextualized slots have unequal sizes");
  }
  if (d * n < k + 1) {
    throw FitDataError(fmt::format("{} vectors cannot support k = {}", d * n, k));
  }

  const auto dim = backend.info().hidden_dim;
  std::vector<std::vector<Eigen::VectorXd>> encoded(d, std::vector<Eigen::VectorXd>(n));
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) encoded[j][i] = backend.encode_sentence(set.by_slot[j][i]).vector;
  }

  Eigen::MatrixXd rows;
  if (centering == CenteringMode::per_example) {
    rows.resize(static_cast<Eigen::Index>(d * n), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
      for (std::size_t j = 0; j < d; ++j) mean += encoded[j][i];
      mean /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        rows.row(static_cast<Eigen::Index>(i * d + j)) = (encoded[j][i] - mean).transpose();
      }
    }
  } else {
    rows.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(dim));
    Eigen::VectorXd grand = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < d; ++j) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < n; ++i) mean += encoded[j][i];
      mean /= static_cast<double>(n);
      rows.row(static_cast<Eigen::Index>(j)) = mean.transpose();
      grand += mean;
    }
    grand /= static_cast<double>(d);
    rows.rowwise() -= grand.transpose();
  }

  auto pca = pca_directions(rows, k);
  BiasSubspace s;
  s.directions = std::move(pca.components);
  s.explained_variance = std::move(pca.explained_variance);
  s.provenance = {set.lexicon_id, set.corpus_id, backend.model_id(), to_string(set.bias_type),
                  to_string(centering), n};
  spdlog::info("fitted {}-direction subspace on {} examples, explained variance {:.4f}", k, n,
               s.explained_variance.front());
  return s;
}

Eigen::VectorXd remove_projection(const Eigen::VectorXd& h, const BiasSubspace& subspace) {
  if (static_cast<std::size_t>(h.size()) != subspace.dim()) {
    throw UsageError(fmt::format("hidden state has dimension {}, subspace has {}", h.size(),
                                 subspace.dim()));
  }
  return h - subspace.directions * (subspace.directions.transpose() * h);
}

HiddenState remove_projection(const HiddenState& h, const BiasSubspace& subspace) {
  return {remove_projection(h.vector, subspace), h.layer};
}

std::string subspace_to_json(const BiasSubspace& s) {
  json directions = json::array();
  for (std::size_t j = 0; j < s.k(); ++j) {
    const Eigen::VectorXd v = s.direction(j);
    directions.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  const auto& p = s.provenance;
  json out{{"dim", s.dim()},
           {"k", s.k()},
           {"directions", directions},
           {"explained_variance", s.explained_variance},
           {"provenance",
            {{"lexicon_id", p.lexicon_id},
             {"corpus_id", p.corpus_id},
             {"backend_id", p.backend_id},
             {"bias_type", p.bias_type},
             {"centering", p.centering},
             {"n_examples", p.n_examples}}}};
  return out.dump(2) + "\n";
}

BiasSubspace subspace_from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed subspace JSON", "byte " + std::to_string(e.byte));
  }
  try {
    BiasSubspace s;
    const auto dim = j.at("dim").get<std::size_t>();
    const auto k = j.at("k").get<std::size_t>();
    const auto& dirs = j.at("directions");
    if (k < 1 || dirs.size() != k) throw UsageError("subspace k does not match its directions");
    s.directions.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) {
      const auto v = dirs.at(c).get<std::vector<double>>();
      if (v.size() != dim) throw UsageError("subspace direction has the wrong dimension");
      for (std::size_t r = 0; r < dim; ++r) {
        s.directions(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r];
      }
    }
    const Eigen::MatrixXd gram = s.directions.transpose() * s.directions;
    if (!gram.isApprox(Eigen::MatrixXd::Identity(gram.rows(), gram.cols()), 1e-8)) {
      throw UsageError("subspace directions are not orthonormal");
    }
    s.explained_variance = j.value("explained_variance", std::vector<double>{});
    const auto p = j.value("provenance", json::object());
    s.provenance.lexicon_id = p.value("lexicon_id", "");
    s.provenance.corpus_id = p.value("corpus_id", "");
    s.provenance.backend_id = p.value("backend_id", "");
    s.provenance.bias_type = p.value("bias_type", "");
    s.provenance.centering = p.value("centering", "");
    s.provenance.n_examples = p.value("n_examples", std::size_t{0});
    return s;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), "subspace structure");
  }
}

void save_subspace(const BiasSubspace& subspace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write subspace file " + path.string());
  out << subspace_to_json(subspace);
  if (!out) throw UsageError("failed writing subspace file " + path.string());
}

BiasSubspace load_subspace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open subspace file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return subspace_from_json(buffer.str());
}

namespace {

BackendInfo debiased_info(const BackendPtr& base) {
  if (!base) throw UsageError("debias_hook needs a backend");
  auto info = base->info();
  info.model_id += "+sendeb";
  return info;
}

}  // namespace

DebiasedBackend::DebiasedBackend(BackendPtr base, BiasSubspace subspace)
    : ModelBackend(debiased_info(base)),
      base_(std::move(base)),
      access_(base_->hidden_access()),
      subspace_(std::move(subspace)) {
  if (access_ == nullptr) {
    throw CapabilityError("backend " + base_->model_id() + " does not expose final hidden states");
  }
  if (subspace_.dim() != base_->info().hidden_dim) {
    throw UsageError(fmt::format("subspace dimension {} does not match hidden size {} of {}",
                                 subspace_.dim(), base_->info().hidden_dim, base_->model_id()));
  }
}

Eigen::VectorXd DebiasedBackend::masked_hidden(std::span<const TokenId> tokens,
                                               std::size_t position) const {
  return remove_projection(access_->masked_hidden(tokens, position), subspace_);
}

Eigen::VectorXd DebiasedBackend::causal_hidden(std::span<const TokenId> prefix) const {
  return remove_projection(access_->causal_hidden(prefix), subspace_);
}

std::vector<Eigen::VectorXd> DebiasedBackend::token_hidden(std::span<const TokenId> tokens) const {
  auto states = access_->token_hidden(tokens);
  for (auto& h : states) h = remove_projection(h, subspace_);
  return states;
}

HeadOutput DebiasedBackend::lm_head(const Eigen::VectorXd& hidden) const {
  return access_->lm_head(hidden);
}

BackendPtr debias_hook(BackendPtr backend, const BiasSubspace& subspace) {
  return std::make_shared<DebiasedBackend>(std::move(backend), subspace);
}

}  // namespace biaslens
