#include "biaslens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "biaslens/errors.hpp"

namespace biaslens {

namespace {

// Fixed summation order keeps aggregates bit-identical under input permutation.
std::vector<const PairScore*> canonical_order(std::span<const PairScore> scores) {
  std::vector<const PairScore*> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(&s);
  std::sort(out.begin(), out.end(), [](const PairScore* a, const PairScore* b) {
    return std::tie(a->language, a->pair_id, a->ps_more, a->ps_less) <
           std::tie(b->language, b->pair_id, b->ps_more, b->ps_less);
  });
  return out;
}

}  // namespace

NormalizationConstant compute_w_avg(std::span<const PairScore> scores,
                                    const std::vector<std::string>& language_set) {
  if (language_set.empty()) throw UsageError("language set is empty");
  std::map<std::string, std::pair<double, std::size_t>> per_language;
  for (const auto& lang : language_set) per_language[lang] = {0.0, 0};
  for (const auto* s : canonical_order(scores)) {
    auto it = per_language.find(s->language);
    if (it == per_language.end()) continue;
    it->second.first += std::abs(s->ps_more + s->ps_less) / 2.0;
    ++it->second.second;
  }

  const std::size_t n = per_language.at(language_set.front()).second;
  for (const auto& lang : language_set) {
    const auto count = per_language.at(lang).second;
    if (count == 0) throw UsageError("no scored pairs for language " + lang);
    if (count != n) {
      throw CorpusError("unequal pair counts: " + language_set.front() + " has " +
                        std::to_string(n) + ", " + lang + " has " + std::to_string(count));
    }
  }

  double total = 0.0;
  for (const auto& lang : language_set) {
    const auto& [sum, count] = per_language.at(lang);
    total += sum / static_cast<double>(count);
  }
  NormalizationConstant w;
  w.w_avg = total / static_cast<double>(language_set.size());
  w.n_languages = language_set.size();
  w.n_per_language = n;
  w.language_set = language_set;
  if (!(w.w_avg > 0.0) || !std::isfinite(w.w_avg)) {
    throw DegenerateCorpusError("normalization constant is " + std::to_string(w.w_avg));
  }
  return w;
}

NbsResult compute_nbs(std::span<const PairScore> scores, const std::string& language,
                      const NormalizationConstant& w, GroupBy group_by) {
  if (!(w.w_avg > 0.0)) throw DegenerateCorpusError("normalization constant must be positive");

  std::map<std::optional<BiasType>, std::pair<double, std::size_t>> groups;
  for (const auto* s : canonical_order(scores)) {
    if (s->language != language) continue;
    const std::optional<BiasType> key =
        group_by == GroupBy::bias_type ? std::optional<BiasType>(s->bias_type) : std::nullopt;
    auto& [sum, count] = groups[key];
    sum += std::abs(s->ps_more - s->ps_less);
    ++count;
  }

  NbsResult result;
  auto emit = [&](std::optional<BiasType> key) {
    auto it = groups.find(key);
    if (it == groups.end() || it->second.second == 0) {
      if (key) result.empty_groups.push_back(*key);
      return;
    }
    const auto& [sum, count] = it->second;
    NbsEntry e;
    e.language = language;
    e.bias_type = key;
    e.n_pairs = count;
    e.nbs_raw = (sum / static_cast<double>(count)) / w.w_avg;
    e.nbs = e.nbs_raw * kDisplayScale;
    result.entries.push_back(e);
  };
  if (group_by == GroupBy::bias_type) {
    for (const auto t : kAllBiasTypes) emit(t);
  } else {
    emit(std::nullopt);
  }
  return result;
}

BiasReport make_bias_report(const std::string& model_id, std::span<const PairScore> scores,
                            const std::vector<std::string>& languages) {
  BiasReport report;
  report.model_id = model_id;
  report.languages = languages;
  report.normalization = compute_w_avg(scores, languages);
  for (const auto& lang : languages) {
    const auto by_type = compute_nbs(scores, lang, report.normalization, GroupBy::bias_type);
    double macro = 0.0;
    for (const auto& e : by_type.entries) {
      report.entries[{lang, *e.bias_type}] = {e.nbs_raw, e.nbs, e.n_pairs};
      macro += e.nbs;
    }
    for (const auto t : by_type.empty_groups) {
      report.warnings.push_back("no " + to_string(t) + " pairs for " + lang);
    }
    const auto all = compute_nbs(scores, lang, report.normalization, GroupBy::all);
    LanguageAverage avg;
    avg.nbs_raw = all.entries.front().nbs_raw;
    avg.nbs = all.entries.front().nbs;
    avg.n_pairs = all.entries.front().n_pairs;
    avg.macro_nbs = macro / static_cast<double>(by_type.entries.size());
    report.averages[lang] = avg;
  }
  return report;
}

std::optional<double> reduction_percent(double baseline, double treated) {
  if (baseline == 0.0) return std::nullopt;
  return (baseline - treated) / baseline * 100.0;
}

ReductionReport compute_reduction(const BiasReport& baseline, const BiasReport& treated,
                                  const std::string& method) {
  if (baseline.languages != treated.languages) {
    throw UsageError("baseline and treated reports cover different languages");
  }
  std::set<std::pair<std::string, BiasType>> a;
  std::set<std::pair<std::string, BiasType>> b;
  for (const auto& [k, v] : baseline.entries) a.insert(k);
  for (const auto& [k, v] : treated.entries) b.insert(k);
  if (a != b) throw UsageError("baseline and treated reports have different entries");

  ReductionReport out;
  out.baseline_id = baseline.model_id;
  out.treated_id = treated.model_id;
  for (const auto& lang : baseline.languages) {
    const double base = baseline.averages.at(lang).nbs;
    const double trt = treated.averages.at(lang).nbs;
    out.entries.push_back({lang, method, std::nullopt, base, trt, reduction_percent(base, trt)});
    for (const auto t : kAllBiasTypes) {
      auto it = baseline.entries.find({lang, t});
      if (it == baseline.entries.end()) continue;
      const double tb = treated.entries.at({lang, t}).nbs;
      out.entries.push_back({lang, method, t, it->second.nbs, tb,
                             reduction_percent(it->second.nbs, tb)});
    }
  }
  return out;
}

}  // namespace biaslens
