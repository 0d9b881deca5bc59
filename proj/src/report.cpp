#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "biaslens/errors.hpp"
#include "biaslens/metrics.hpp"
#include "json.hpp"

namespace biaslens {

using nlohmann::json;

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "markdown" || name == "md") return ReportFormat::markdown;
  if (name == "json") return ReportFormat::json;
  throw UsageError("unknown report format '" + std::string(name) + "'");
}

std::string file_extension(ReportFormat format) {
  switch (format) {
    case ReportFormat::csv:
      return "csv";
    case ReportFormat::markdown:
      return "md";
    case ReportFormat::json:
      return "json";
  }
  return "txt";
}

std::string language_name(const std::string& code) {
  static const std::map<std::string, std::string> names{
      {"eng", "English"}, {"zho", "Chinese"}, {"rus", "Russian"},
      {"ind", "Indonesian"}, {"tha", "Thai"}};
  auto it = names.find(code);
  return it == names.end() ? code : it->second;
}

namespace {

std::string fixed(double v, int decimals) {
  auto s = fmt::format("{:.{}f}", v, decimals);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json to_json(const BiasReport& r) {
  json entries = json::array();
  for (const auto& lang : r.languages) {
    for (const auto t : kAllBiasTypes) {
      auto it = r.entries.find({lang, t});
      if (it == r.entries.end()) continue;
      entries.push_back({{"language", lang},
                         {"bias_type", to_string(t)},
                         {"nbs", it->second.nbs},
                         {"nbs_raw", it->second.nbs_raw},
                         {"n_pairs", it->second.n_pairs}});
    }
  }
  json averages = json::array();
  for (const auto& lang : r.languages) {
    auto it = r.averages.find(lang);
    if (it == r.averages.end()) continue;
    averages.push_back({{"language", lang},
                        {"nbs", it->second.nbs},
                        {"nbs_raw", it->second.nbs_raw},
                        {"macro_nbs", it->second.macro_nbs},
                        {"n_pairs", it->second.n_pairs}});
  }
  json skipped = json::object();
  for (const auto& [lang, n] : r.skipped) skipped[lang] = n;
  return json{{"model_id", r.model_id},
              {"corpus_id", r.corpus_id},
              {"display_scale", kDisplayScale},
              {"languages", r.languages},
              {"normalization",
               {{"w_avg", r.normalization.w_avg},
                {"n_languages", r.normalization.n_languages},
                {"n_per_language", r.normalization.n_per_language},
                {"language_set", r.normalization.language_set}}},
              {"entries", entries},
              {"averages", averages},
              {"skipped", skipped},
              {"warnings", r.warnings}};
}

void require_nonempty(const BiasReport& report) {
  if (report.empty()) throw UsageError("cannot render an empty report");
}

std::string header_comment(const BiasReport& r) {
  std::string langs;
  for (const auto& l : r.normalization.language_set) langs += (langs.empty() ? "" : ", ") + l;
  return fmt::format(
      "<!-- model: {} | scores are NBS x 100 | W_avg = {} over n = {} languages ({}), N = {} "
      "pairs per language -->\n",
      r.model_id, fmt::format("{:.6f}", r.normalization.w_avg), r.normalization.n_languages,
      langs, r.normalization.n_per_language);
}

}  // namespace

std::string render_report(const BiasReport& report, ReportFormat format) {
  require_nonempty(report);
  switch (format) {
    case ReportFormat::json:
      return to_json(report).dump(2) + "\n";
    case ReportFormat::csv: {
      std::string out = "model,language,bias_type,nbs\n";
      for (const auto& lang : report.languages) {
        for (const auto t : kAllBiasTypes) {
          auto it = report.entries.find({lang, t});
          if (it == report.entries.end()) continue;
          out += fmt::format("{},{},{},{}\n", csv_field(report.model_id), csv_field(lang),
                             to_string(t), fixed(it->second.nbs, 6));
        }
        out += fmt::format("{},{},average,{}\n", csv_field(report.model_id), csv_field(lang),
                           fixed(report.averages.at(lang).nbs, 6));
      }
      return out;
    }
    case ReportFormat::markdown: {
      const BiasReport* one = &report;
      return header_comment(report) + render_reports_markdown(std::span(one, 1));
    }
  }
  throw UsageError("unknown report format");
}

std::string render_reports_markdown(std::span<const BiasReport> reports) {
  if (reports.empty()) throw UsageError("no reports to render");
  for (const auto& r : reports) require_nonempty(r);
  std::string out = "| Language | Bias Type |";
  std::string rule = "|---|---|";
  for (const auto& r : reports) {
    out += " " + r.model_id + " |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (const auto& lang : reports.front().languages) {
    for (const auto t : kAllBiasTypes) {
      bool any = false;
      std::string row = "| " + language_name(lang) + " | " + display_name(t) + " |";
      for (const auto& r : reports) {
        auto it = r.entries.find({lang, t});
        if (it != r.entries.end()) any = true;
        row += " " + (it == r.entries.end() ? std::string("n/a") : fixed(it->second.nbs, 2)) + " |";
      }
      if (any) out += row + "\n";
    }
    out += "| " + language_name(lang) + " | **Average** |";
    for (const auto& r : reports) {
      auto it = r.averages.find(lang);
      out += " " + (it == r.averages.end() ? std::string("n/a")
                                           : "**" + fixed(it->second.nbs, 2) + "**") +
             " |";
    }
    out += "\n";
  }
  return out;
}

BiasReport report_from_json(std::string_view json_text) {
  try {
    const auto j = json::parse(json_text);
    BiasReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.corpus_id = j.value("corpus_id", "");
    r.languages = j.at("languages").get<std::vector<std::string>>();
    const auto& n = j.at("normalization");
    r.normalization.w_avg = n.at("w_avg").get<double>();
    r.normalization.n_languages = n.at("n_languages").get<std::size_t>();
    r.normalization.n_per_language = n.at("n_per_language").get<std::size_t>();
    r.normalization.language_set = n.at("language_set").get<std::vector<std::string>>();
    for (const auto& e : j.at("entries")) {
      r.entries[{e.at("language").get<std::string>(),
                 parse_bias_type(e.at("bias_type").get<std::string>())}] = {
          e.at("nbs_raw").get<double>(), e.at("nbs").get<double>(),
          e.at("n_pairs").get<std::size_t>()};
    }
    for (const auto& a : j.at("averages")) {
      r.averages[a.at("language").get<std::string>()] = {
          a.at("nbs").get<double>(), a.at("nbs_raw").get<double>(),
          a.at("macro_nbs").get<double>(), a.at("n_pairs").get<std::size_t>()};
    }
    const auto skipped = j.value("skipped", json::object());
    for (const auto& [lang, count] : skipped.items()) {
      r.skipped[lang] = count.get<std::size_t>();
    }
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), "byte " + std::to_string(e.byte));
  } catch (const json::exception& e) {
    throw ParseError(e.what(), "report structure");
  }
}

// --- reductions --------------------------------------------------------------

namespace {

json to_json(const ReductionReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"language", e.language},
                       {"method", e.method},
                       {"bias_type", e.bias_type ? to_string(*e.bias_type) : "average"},
                       {"baseline_nbs", e.baseline_nbs},
                       {"treated_nbs", e.treated_nbs},
                       {"reduction_percent", e.percent ? json(*e.percent) : json(nullptr)}});
  }
  return json{{"baseline_id", r.baseline_id}, {"treated_id", r.treated_id}, {"entries", entries}};
}

std::string signed_percent(const std::optional<double>& p, const ReductionRenderOptions& opt) {
  if (!p) return "n/a";
  return fixed(opt.paper_sign ? -*p : *p, 2);
}

}  // namespace

std::string render_reductions(std::span<const ReductionReport> reports, ReportFormat format,
                              const ReductionRenderOptions& options) {
  if (reports.empty()) throw UsageError("no reductions to render");
  for (const auto& r : reports) {
    if (r.entries.empty()) throw UsageError("cannot render an empty reduction report");
  }

  if (format == ReportFormat::json) {
    json all = json::array();
    for (const auto& r : reports) all.push_back(to_json(r));
    json out{{"paper_sign", options.paper_sign}, {"reports", all}};
    return out.dump(2) + "\n";
  }

  if (format == ReportFormat::csv) {
    std::string out = "language,method,bias_type,baseline_nbs,treated_nbs,reduction_percent\n";
    for (const auto& r : reports) {
      for (const auto& e : r.entries) {
        out += fmt::format("{},{},{},{},{},{}\n", csv_field(e.language), csv_field(e.method),
                           e.bias_type ? to_string(*e.bias_type) : "average",
                           fixed(e.baseline_nbs, 6), fixed(e.treated_nbs, 6),
                           e.percent ? fixed(options.paper_sign ? -*e.percent : *e.percent, 6)
                                     : std::string("n/a"));
      }
    }
    return out;
  }

  std::vector<std::string> languages;
  for (const auto& e : reports.front().entries) {
    if (!e.bias_type) languages.push_back(e.language);
  }
  std::string out = "| Language |";
  std::string rule = "|---|";
  for (const auto& r : reports) {
    out += " " + r.entries.front().method + " (%) |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (const auto& lang : languages) {
    out += "| " + language_name(lang) + " |";
    for (const auto& r : reports) {
      auto it = std::find_if(r.entries.begin(), r.entries.end(), [&](const ReductionEntry& e) {
        return e.language == lang && !e.bias_type;
      });
      out += " " + (it == r.entries.end() ? std::string("n/a") : signed_percent(it->percent, options)) +
             " |";
    }
    out += "\n";
  }
  return out;
}

ReductionReport reduction_from_json(std::string_view json_text) {
  try {
    const auto j = json::parse(json_text);
    ReductionReport r;
    r.baseline_id = j.at("baseline_id").get<std::string>();
    r.treated_id = j.at("treated_id").get<std::string>();
    for (const auto& e : j.at("entries")) {
      ReductionEntry out;
      out.language = e.at("language").get<std::string>();
      out.method = e.at("method").get<std::string>();
      const auto t = e.at("bias_type").get<std::string>();
      if (t != "average") out.bias_type = parse_bias_type(t);
      out.baseline_nbs = e.at("baseline_nbs").get<double>();
      out.treated_nbs = e.at("treated_nbs").get<double>();
      if (!e.at("reduction_percent").is_null()) {
        out.percent = e.at("reduction_percent").get<double>();
      }
      r.entries.push_back(std::move(out));
    }
    return r;
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), "byte " + std::to_string(e.byte));
  } catch (const json::exception& e) {
    throw ParseError(e.what(), "reduction structure");
  }
}

}  // namespace biaslens
