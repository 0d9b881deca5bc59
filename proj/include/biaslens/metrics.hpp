#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/corpus.hpp"
#include "biaslens/scoring.hpp"

namespace biaslens {

/// Run-level normalization constant: mean over languages of the per-language
/// mean of |PS(s) + PS(s')| / 2.
struct NormalizationConstant {
  double w_avg = 0.0;
  std::size_t n_languages = 0;
  /// Pairs per language (equal across the language set).
  std::size_t n_per_language = 0;
  std::vector<std::string> language_set;

  bool operator==(const NormalizationConstant&) const = default;
};

/// Always evaluated over the full language set of the run. Throws UsageError
/// when a language has no scores, CorpusError when N differs across languages
/// (naming them) and DegenerateCorpusError when the constant is zero.
NormalizationConstant compute_w_avg(std::span<const PairScore> scores,
                                    const std::vector<std::string>& language_set);

enum class GroupBy { bias_type, all };

/// Displayed scores are raw NBS x 100.
inline constexpr double kDisplayScale = 100.0;

struct NbsEntry {
  std::string language;
  /// nullopt for the all-pairs group.
  std::optional<BiasType> bias_type;
  double nbs_raw = 0.0;
  double nbs = 0.0;
  std::size_t n_pairs = 0;
};

struct NbsResult {
  std::vector<NbsEntry> entries;
  /// Bias types with no pairs in this language; their entries are omitted.
  std::vector<BiasType> empty_groups;
};

/// NBS of one language: mean |PS(s) - PS(s')| over the group divided by W_avg.
/// Scores of other languages are ignored.
NbsResult compute_nbs(std::span<const PairScore> scores, const std::string& language,
                      const NormalizationConstant& w, GroupBy group_by);

struct BiasEntry {
  double nbs_raw = 0.0;
  double nbs = 0.0;
  std::size_t n_pairs = 0;
  bool operator==(const BiasEntry&) const = default;
};

struct LanguageAverage {
  /// NBS over all pairs of the language: the pair-count weighted mean of the
  /// bias-type rows. This is the "Average" row of the rendered table.
  double nbs = 0.0;
  double nbs_raw = 0.0;
  /// Unweighted arithmetic mean of the bias-type rows present.
  double macro_nbs = 0.0;
  std::size_t n_pairs = 0;
  bool operator==(const LanguageAverage&) const = default;
};

struct BiasReport {
  std::string model_id;
  std::string corpus_id;
  std::vector<std::string> languages;
  std::map<std::pair<std::string, BiasType>, BiasEntry> entries;
  std::map<std::string, LanguageAverage> averages;
  NormalizationConstant normalization;
  /// Pairs excluded before scoring or skipped while scoring, per language.
  std::map<std::string, std::size_t> skipped;
  std::vector<std::string> warnings;

  bool empty() const { return entries.empty(); }
  bool operator==(const BiasReport&) const = default;
};

/// NBS table for one model over the given language set.
BiasReport make_bias_report(const std::string& model_id, std::span<const PairScore> scores,
                            const std::vector<std::string>& languages);

struct ReductionEntry {
  std::string language;
  std::string method;
  /// nullopt for the language average.
  std::optional<BiasType> bias_type;
  double baseline_nbs = 0.0;
  double treated_nbs = 0.0;
  /// (NBS - NBS') / NBS * 100; positive means bias went down. nullopt when NBS is 0.
  std::optional<double> percent;
  bool operator==(const ReductionEntry&) const = default;
};

struct ReductionReport {
  std::string baseline_id;
  std::string treated_id;
  std::vector<ReductionEntry> entries;
  bool operator==(const ReductionReport&) const = default;
};

/// nullopt when `baseline` is zero.
std::optional<double> reduction_percent(double baseline, double treated);

/// Per language (average and each bias type). Throws UsageError when the two
/// reports do not cover the same languages and bias types.
ReductionReport compute_reduction(const BiasReport& baseline, const BiasReport& treated,
                                  const std::string& method);

// --- rendering ---------------------------------------------------------------

enum class ReportFormat { csv, markdown, json };
ReportFormat parse_report_format(std::string_view name);
std::string file_extension(ReportFormat format);

/// "English" for eng, etc. Unknown codes are returned unchanged.
std::string language_name(const std::string& code);

/// Byte-stable rendering. Throws UsageError for an empty report.
std::string render_report(const BiasReport& report, ReportFormat format);
/// One column per model, sharing the first report's language order.
std::string render_reports_markdown(std::span<const BiasReport> reports);

BiasReport report_from_json(std::string_view json_text);

struct ReductionRenderOptions {
  /// Print improvements as negative numbers.
  bool paper_sign = false;
};

/// Language x method table of average reductions.
std::string render_reductions(std::span<const ReductionReport> reports, ReportFormat format,
                              const ReductionRenderOptions& options = {});
ReductionReport reduction_from_json(std::string_view json_text);

}  // namespace biaslens
