// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "lcl/error.hpp"
#include "lcl/pipeline.hpp"
#include "textio.hpp"

namespace lcl {

namespace fs = std::filesystem;
using textio::fmt;

namespace {

struct Series {
  std::string name;
  std::vector<double> x, y;
  bool dashed = false;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Polyline chart with y fixed to [0, 1].
std::string line_chart(const std::string& title, const std::string& xlabel,
                       const std::string& ylabel, const std::vector<Series>& series,
                       const std::vector<double>& xticks, const std::string& provenance) {
  const double W = 720, H = 440, L = 70, R = 170, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  double xmin = xticks.front(), xmax = xticks.back();
  if (xmax == xmin) xmax = xmin + 1;
  auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return T + (1.0 - y) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<!-- " << provenance << " -->\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
    << xml_escape(title) << "</text>\n";
  // Grid and y ticks.
  for (int i = 0; i <= 10; i += 2) {
    double y = i / 10.0;
    o << "<line x1=\"" << L << "\" y1=\"" << fmt("%.2f", sy(y)) << "\" x2=\"" << L + pw
      << "\" y2=\"" << fmt("%.2f", sy(y)) << "\" stroke=\"#e0e0e0\"/>\n";
    o << "<text x=\"" << L - 8 << "\" y=\"" << fmt("%.2f", sy(y) + 4)
      << "\" text-anchor=\"end\">" << fmt("%.1f", y) << "</text>\n";
  }
  for (double x : xticks) {
    o << "<line x1=\"" << fmt("%.2f", sx(x)) << "\" y1=\"" << T + ph << "\" x2=\""
      << fmt("%.2f", sx(x)) << "\" y2=\"" << T + ph + 5 << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << fmt("%.2f", sx(x)) << "\" y=\"" << T + ph + 18
      << "\" text-anchor=\"middle\">" << fmt("%g", x) << "</text>\n";
  }
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">"
    << xml_escape(xlabel) << "</text>\n";
  o << "<text x=\"18\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << T + ph / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& se = series[s];
    const char* color = kPalette[s % (sizeof kPalette / sizeof kPalette[0])];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
      << (se.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < se.x.size(); ++i) {
      o << (i ? " " : "") << fmt("%.2f", sx(se.x[i])) << ',' << fmt("%.2f", sy(se.y[i]));
    }
    o << "\"/>\n";
    if (!se.dashed) {
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        o << "<circle cx=\"" << fmt("%.2f", sx(se.x[i])) << "\" cy=\"" << fmt("%.2f", sy(se.y[i]))
          << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
      }
    }
    double ly = T + 12 + 18.0 * static_cast<double>(s);
    o << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << L + pw + 36
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\""
      << (se.dashed ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    o << "<text x=\"" << L + pw + 42 << "\" y=\"" << ly + 4 << "\">" << xml_escape(se.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

int stage_rank(const std::string& label) {
  static const std::vector<std::string> order = {"pretrain", "2way", "2way-random", "2way-weight",
                                                 "mix"};
  auto it = std::find(order.begin(), order.end(), label);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

struct ReportFile {
  std::string label, kind;
  EvalReport report;
};

std::vector<ReportFile> collect(const fs::path& dir) {
  std::vector<ReportFile> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::string stem = f.stem().string();
    auto dot = stem.rfind('.');
    if (dot == std::string::npos) continue;
    out.push_back({stem.substr(0, dot), stem.substr(dot + 1), read_report_csv(f)});
  }
  std::stable_sort(out.begin(), out.end(), [](const ReportFile& a, const ReportFile& b) {
    int ra = stage_rank(a.label), rb = stage_rank(b.label);
    if (ra != rb) return ra < rb;
    return a.label < b.label;
  });
  return out;
}

double parse_suffix(const std::string& condition) {
  auto eq = condition.find('=');
  return std::stod(condition.substr(eq + 1));
}

}  // namespace

std::vector<fs::path> cmd_report(const fs::path& run_dir) {
  RunPaths paths{run_dir};
  if (!fs::exists(paths.config())) {
    throw DependencyError("missing config snapshot " + paths.config().string());
  }
  RunConfig cfg = RunConfig::load(paths.config());
  const std::string prov = provenance_line(cfg.hash(), cfg.eval.seed);
  auto files = collect(run_dir / "reports");

  const std::string sweep_kind = cfg.eval.protocols.front();
  std::vector<std::string> missing;
  auto has = [&](const std::string& kind) {
    return std::any_of(files.begin(), files.end(),
                       [&](const ReportFile& f) { return f.kind == kind; });
  };
  if (!has(sweep_kind)) missing.push_back("reports/<stage>." + sweep_kind + ".csv (lcl eval)");
  if (!has("false_rate")) missing.push_back("reports/<stage>.false_rate.csv (lcl ablate false-rate)");
  if (!has("position")) missing.push_back("reports/<stage>.position.csv (lcl ablate position)");
  if (!missing.empty()) {
    std::string msg = "report inputs missing in " + run_dir.string() + ":";
    for (const auto& m : missing) msg += " " + m;
    throw DependencyError(msg);
  }

  // Summary table.
  std::ostringstream sum;
  sum << "# " << prov << "\n";
  sum << "stage,protocol,shots,condition,accuracy,stderr,n\n";
  for (const auto& f : files) {
    for (const auto& r : f.report.rows) {
      sum << f.label << ',' << r.protocol << ',' << r.shots << ',' << r.condition << ','
          << fmt("%.6f", r.accuracy) << ',' << fmt("%.6f", r.stderr_) << ',' << r.n << '\n';
    }
  }
  std::vector<fs::path> written;
  textio::write_atomic(paths.summary(), sum.str());
  written.push_back(paths.summary());

  // Shot sweep.
  {
    std::vector<Series> series;
    std::vector<double> ticks;
    Series oracle{"oracle", {}, {}, true};
    for (const auto& f : files) {
      if (f.kind != sweep_kind) continue;
      Series s{f.label, {}, {}, false};
      for (const auto& r : f.report.rows) {
        if (r.condition == "model") {
          s.x.push_back(r.shots);
          s.y.push_back(r.accuracy);
          if (std::find(ticks.begin(), ticks.end(), r.shots) == ticks.end()) ticks.push_back(r.shots);
        } else if (r.condition == "oracle" && series.empty()) {
          oracle.x.push_back(r.shots);
          oracle.y.push_back(r.accuracy);
        }
      }
      series.push_back(std::move(s));
    }
    if (!oracle.x.empty()) series.push_back(oracle);
    std::sort(ticks.begin(), ticks.end());
    textio::write_atomic(paths.plot("shots"),
                         line_chart("Accuracy vs shots (" + sweep_kind + ")", "shots per class",
                                    "accuracy", series, ticks, prov));
    written.push_back(paths.plot("shots"));
  }

  // False-rate curve.
  {
    std::vector<Series> series;
    std::vector<double> ticks;
    for (const auto& f : files) {
      if (f.kind != "false_rate") continue;
      Series s{f.label, {}, {}, false};
      for (const auto& r : f.report.rows) {
        double x = parse_suffix(r.condition);
        s.x.push_back(x);
        s.y.push_back(r.accuracy);
        if (std::find(ticks.begin(), ticks.end(), x) == ticks.end()) ticks.push_back(x);
      }
      series.push_back(std::move(s));
    }
    std::sort(ticks.begin(), ticks.end());
    textio::write_atomic(paths.plot("false_rate"),
                         line_chart("Accuracy vs support label false rate", "false rate",
                                    "accuracy (true labels)", series, ticks, prov));
    written.push_back(paths.plot("false_rate"));
  }

  // Position curve.
  {
    std::vector<Series> series;
    double max_pos = 0;
    for (const auto& f : files) {
      if (f.kind != "position") continue;
      Series s{f.label, {}, {}, false};
      double base = 0;
      for (const auto& r : f.report.rows) {
        if (r.condition == "baseline") {
          base = r.accuracy;
          continue;
        }
        double x = parse_suffix(r.condition);
        s.x.push_back(x);
        s.y.push_back(r.accuracy);
        max_pos = std::max(max_pos, x);
      }
      series.push_back(std::move(s));
      series.push_back(Series{f.label + " baseline", {0, max_pos}, {base, base}, true});
    }
    for (auto& s : series) {
      if (s.dashed) s.x = {0, max_pos};
    }
    std::vector<double> ticks;
    for (double x = 0; x <= max_pos; x += 4) ticks.push_back(x);
    if (ticks.back() != max_pos) ticks.push_back(max_pos);
    textio::write_atomic(paths.plot("position"),
                         line_chart("Accuracy with one flipped support label", "support position",
                                    "accuracy", series, ticks, prov));
    written.push_back(paths.plot("position"));
  }
  return written;
}

}  // namespace lcl
