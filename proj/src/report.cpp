#include "tasked/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tasked::report {

namespace fs = std::filesystem;

MethodResults read_results(const std::string& name, const fs::path& dir) {
  MethodResults m;
  m.name = name;
  const fs::path folds = dir / "folds";
  if (!fs::is_directory(folds)) throw Error("no fold results under " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(folds))
    if (entry.is_directory()) files.push_back(entry.path() / "result.json");
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    try {
      std::ifstream in(f);
      if (!in) throw Error("missing");
      m.folds.push_back(evaluation::fold_result_from_json(nlohmann::json::parse(in)));
    } catch (const std::exception& e) {
      m.problems.push_back(f.string() + ": " + e.what());
    }
  }
  return m;
}

void write_fold_result(const fs::path& fold_dir, const evaluation::FoldResult& r) {
  fs::create_directories(fold_dir);
  std::ofstream os(fold_dir / "result.json");
  os << evaluation::to_json(r).dump(2) << "\n";
}

namespace {

std::string pct(const evaluation::Stat& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * s.mean << " ± " << 100.0 * s.std;
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

}  // namespace

std::string markdown_table(const std::vector<MethodResults>& methods) {
  std::ostringstream os;
  os << "| Method | Folds | Accuracy (%) | Weighted F1 (%) | Macro F1 (%) |\n";
  os << "|---|---|---|---|---|\n";
  for (const MethodResults& m : methods) {
    const evaluation::Aggregate a = evaluation::aggregate(m.folds);
    os << "| " << m.name << " | " << a.folds << (a.failed ? " (" + std::to_string(a.failed) + " failed)" : "")
       << " | " << pct(a.accuracy) << " | " << pct(a.weighted_f1) << " | " << pct(a.macro_f1) << " |\n";
  }
  os << "\nStandard deviation across test subjects (validation variants averaged):\n\n";
  os << "| Method | Accuracy (%) | Weighted F1 (%) | Macro F1 (%) |\n";
  os << "|---|---|---|---|\n";
  for (const MethodResults& m : methods) {
    const evaluation::Aggregate a = evaluation::aggregate(m.folds);
    os << "| " << m.name << " | " << pct(a.subject_accuracy) << " | " << pct(a.subject_weighted_f1) << " | "
       << pct(a.subject_macro_f1) << " |\n";
  }
  return os.str();
}

std::string box_plot_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& values,
                         const std::string& title) {
  const double width = 120.0 * static_cast<double>(std::max<std::size_t>(1, labels.size())) + 80.0;
  const double height = 320.0, top = 40.0, bottom = 270.0, left = 60.0;
  auto y = [&](double v) { return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0); };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n";
  for (int tick = 0; tick <= 10; tick += 2) {
    const double v = tick / 10.0;
    os << "<line x1=\"" << left << "\" x2=\"" << width - 20 << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double cx = left + 60.0 + 120.0 * static_cast<double>(i);
    os << "<text x=\"" << cx << "\" y=\"" << bottom + 22
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << labels[i] << "</text>\n";
    const auto& v = values[i];
    if (v.empty()) continue;
    const double q1 = quantile(v, 0.25), med = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double iqr = q3 - q1;
    double lo = q3, hi = q1;
    for (double x : v) {
      if (x >= q1 - 1.5 * iqr) lo = std::min(lo, x);
      if (x <= q3 + 1.5 * iqr) hi = std::max(hi, x);
    }
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y(hi) << "\" y2=\"" << y(q3)
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y(q1) << "\" y2=\"" << y(lo)
       << "\" stroke=\"black\"/>\n";
    for (double w : {lo, hi})
      os << "<line x1=\"" << cx - 15 << "\" x2=\"" << cx + 15 << "\" y1=\"" << y(w) << "\" y2=\"" << y(w)
         << "\" stroke=\"black\"/>\n";
    os << "<rect x=\"" << cx - 30 << "\" y=\"" << y(q3) << "\" width=\"60\" height=\"" << std::max(0.5, y(q1) - y(q3))
       << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << cx - 30 << "\" x2=\"" << cx + 30 << "\" y1=\"" << y(med) << "\" y2=\"" << y(med)
       << "\" stroke=\"#c00\" stroke-width=\"2\"/>\n";
    for (double x : v)
      if (x < lo || x > hi)
        os << "<circle cx=\"" << cx << "\" cy=\"" << y(x) << "\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const std::vector<MethodResults>& methods, const fs::path& out_dir, bool plots) {
  std::size_t usable = 0;
  for (const MethodResults& m : methods) usable += m.folds.size();
  if (usable == 0) throw Error("report: no fold results found");
  fs::create_directories(out_dir / "confusion");

  std::ofstream summary(out_dir / "summary.csv");
  summary << "method,folds,failed,metric,mean,std,subject_mean,subject_std\n";
  std::ofstream folds(out_dir / "folds.csv");
  folds << "method,fold,test_subjects,val_subjects,variant,failed,accuracy,weighted_f1,macro_f1,error\n";
  for (const MethodResults& m : methods) {
    const evaluation::Aggregate a = evaluation::aggregate(m.folds);
    const std::tuple<const char*, evaluation::Stat, evaluation::Stat> rows[] = {
        {"accuracy", a.accuracy, a.subject_accuracy},
        {"weighted_f1", a.weighted_f1, a.subject_weighted_f1},
        {"macro_f1", a.macro_f1, a.subject_macro_f1}};
    for (const auto& [metric, s, subj] : rows)
      summary << m.name << "," << a.folds << "," << a.failed << "," << metric << "," << num(s.mean) << ","
              << num(s.std) << "," << num(subj.mean) << "," << num(subj.std) << "\n";
    for (const evaluation::FoldResult& f : m.folds) {
      auto ids = [](const std::vector<int>& v) {
        std::string s;
        for (int x : v) s += (s.empty() ? "" : " ") + std::to_string(x);
        return s;
      };
      std::string err = f.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      folds << m.name << "," << f.id << "," << ids(f.test_subjects) << "," << ids(f.val_subjects) << "," << f.variant
            << "," << (f.failed ? 1 : 0) << "," << (f.failed ? "" : num(f.m.accuracy)) << ","
            << (f.failed ? "" : num(f.m.weighted_f1)) << "," << (f.failed ? "" : num(f.m.macro_f1)) << "," << err
            << "\n";
      if (f.failed) continue;
      std::ofstream cm(out_dir / "confusion" / (m.name + "_" + f.id + ".csv"));
      for (std::size_t t = 0; t < f.cm.classes; ++t) {
        for (std::size_t p = 0; p < f.cm.classes; ++p) cm << (p ? "," : "") << f.cm.at(t, p);
        cm << "\n";
      }
    }
  }
  std::ofstream md(out_dir / "summary.md");
  md << markdown_table(methods);
  for (const MethodResults& m : methods)
    for (const std::string& p : m.problems) md << "\nProblem (" << m.name << "): " << p << "\n";

  if (!plots) return;
  const std::pair<const char*, double evaluation::Metrics::*> metrics[] = {
      {"accuracy", &evaluation::Metrics::accuracy},
      {"weighted_f1", &evaluation::Metrics::weighted_f1},
      {"macro_f1", &evaluation::Metrics::macro_f1}};
  for (const auto& [metric, member] : metrics) {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> values;
    for (const MethodResults& m : methods) {
      labels.push_back(m.name);
      values.emplace_back();
      for (const auto& f : m.folds)
        if (!f.failed) values.back().push_back(f.m.*member);
    }
    std::ofstream svg(out_dir / (std::string("boxplot_") + metric + ".svg"));
    svg << box_plot_svg(labels, values, std::string("Per-fold ") + metric);
  }
}

}  // namespace tasked::report
