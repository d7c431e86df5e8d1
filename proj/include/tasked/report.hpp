#pragma once

// Result tables and per-fold distribution plots from stored fold results.

#include <filesystem>
#include <string>
#include <vector>

#include "tasked/evaluation.hpp"

namespace tasked::report {

struct MethodResults {
  std::string name;
  std::vector<evaluation::FoldResult> folds;
  std::vector<std::string> problems;  // missing or corrupt fold files
};

// Reads every folds/*/result.json under dir. Unreadable files are reported in
// problems and skipped.
MethodResults read_results(const std::string& name, const std::filesystem::path& dir);

void write_fold_result(const std::filesystem::path& fold_dir, const evaluation::FoldResult& r);

// Writes summary.csv, summary.md, folds.csv, confusion/*.csv and, when plots is
// set, one SVG box plot per metric into out_dir.
void emit_report(const std::vector<MethodResults>& methods, const std::filesystem::path& out_dir, bool plots);

// Markdown table: one row per method, "mean ± std" in percent per metric.
std::string markdown_table(const std::vector<MethodResults>& methods);

std::string box_plot_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& values,
                         const std::string& title);

}  // namespace tasked::report
