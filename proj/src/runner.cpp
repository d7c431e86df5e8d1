#include "tasked/runner.hpp"

#include <cstdlib>
#include <fstream>

#include "tasked/adapters.hpp"
#include "tasked/evaluation.hpp"
#include "tasked/model.hpp"
#include "tasked/report.hpp"

namespace tasked::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<data::SensorRecording> load_all(const data::Adapter& a, const config::AdapterSource& src) {
  if (src.files.empty()) throw Error("dataset '" + a.name + "': no recording files configured");
  std::vector<data::SensorRecording> recs;
  for (const auto& f : src.files)
    for (const std::string& p : f.paths) recs.push_back(data::load_recording(a, p, f.subject));
  return recs;
}

data::WindowedDataset from_adapter(const config::AdapterSource& src, data::Warnings* warnings) {
  const data::Adapter& a = data::adapter(src.name);
  data::DatasetSpec spec = a.default_spec();
  if (src.window) spec.window_size = src.window;
  if (src.step) spec.step = src.step;
  if (!src.normalization.empty()) spec.normalization = data::parse_normalization(src.normalization);
  spec.target_rate = src.target_rate;
  if (spec.normalization == data::Normalization::minmax_per_channel) {
    if (!src.bounds_csv.empty())
      spec.bounds = data::read_bounds_csv(src.bounds_csv);
    else if (a.name.rfind("opportunity", 0) == 0)
      spec.bounds = data::read_bounds_csv(data::default_opportunity_bounds());
  }
  data::WindowedDataset ds = data::prepare(load_all(a, src), spec, warnings);
  ds.activity_names = a.activity_names();
  ds.source_names = {a.name};
  return ds;
}

json design_decisions(const config::Experiment& e) {
  return {{"attention_heads", e.arch.heads},
          {"temporal_kernel", e.arch.temporal_kernel},
          {"temporal_stride", 2},
          {"residual", "around the attention sub-block only"},
          {"attention_batch_norm", "after output projection of the aggregated values"},
          {"drop_connect_degenerate_row", "uniform 1/S"},
          {"attention_scale", "1/sqrt(head_dim)"},
          {"positional_encoding", e.arch.positional_encoding ? "sinusoidal along time, shared across sensors" : "off"},
          {"epochs_per_phase", e.train.epochs},
          {"patience_per_phase", e.train.patience},
          {"early_stopping_metric", "validation macro-F1, strict improvement"},
          {"optimizer_reset_between_phases", true},
          {"adversarial_start", "best pre-training checkpoint (also the teacher)"},
          {"teacher_mode", e.train.teacher_eval_mode ? "eval" : "train without BN statistic updates"},
          {"batch_composition", "subject-stratified round-robin"},
          {"use_target_unlabeled", e.train.use_target_unlabeled},
          {"kernel_bank", "gaussian, bandwidth factors times median pairwise distance, uniform weights"},
          {"kd_scaling", "batch-mean KL at temperature tau without tau^2"},
          {"activity_loss", "0.5 weighted CE (batch mean) + 0.5 global dice with plain sums in the denominator"},
          {"class_weights", "n/(n_a n_i), mean-normalised"},
          {"non_finite_loss", "abort fold, record error, continue sweep"},
          {"evaluated_checkpoint", "best validation checkpoint of the adversarial phase"}};
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  os << j.dump(2) << "\n";
}

evaluation::RunOptions fold_outputs(const config::Experiment& e, const fs::path& out) {
  evaluation::RunOptions opt;
  opt.workers = e.workers;
  opt.hooks_for = [out](const evaluation::FoldPlan& plan) {
    const fs::path dir = out / "folds" / plan.id;
    fs::create_directories(dir);
    std::ofstream(dir / "history.jsonl", std::ios::trunc);
    training::TrainHooks hooks;
    hooks.on_epoch = [dir](const training::LossBundle& b) {
      std::ofstream os(dir / "history.jsonl", std::ios::app);
      os << training::to_json(b).dump() << "\n";
    };
    return hooks;
  };
  if (e.save_checkpoints)
    opt.on_trained = [out](const evaluation::FoldPlan& plan, const training::TrainResult& tr) {
      const fs::path dir = out / "folds" / plan.id;
      json extra = {{"fold", plan.id}, {"discriminator_subjects", tr.discriminator_subjects}};
      model::save_checkpoint(dir / "model.ckpt", tr.model, extra);
      model::save_checkpoint(dir / "teacher.ckpt", tr.teacher, extra);
      if (!tr.warnings.empty()) write_json(dir / "warnings.json", tr.warnings);
    };
  return opt;
}

void finish_sweep(const config::Experiment& e, const fs::path& out, const std::vector<evaluation::FoldResult>& results,
                  std::ostream& log) {
  json folds = json::array();
  for (const auto& r : results) {
    report::write_fold_result(out / "folds" / r.id, r);
    folds.push_back(evaluation::to_json(r));
    if (r.failed) log << "fold " << r.id << " failed: " << r.error << "\n";
  }
  const evaluation::Aggregate agg = evaluation::aggregate(results);
  write_json(out / "results.json", {{"method", e.method_name}, {"aggregate", evaluation::to_json(agg)}, {"folds", folds}});
  report::emit_report({report::read_results(e.method_name, out)}, out / "report", e.report_plots);
  log << report::markdown_table({report::read_results(e.method_name, out)});
}

}  // namespace

data::WindowedDataset build_dataset(const config::Experiment& e, data::Warnings* warnings) {
  const auto& d = e.data;
  if (d.source == "synthetic") return data::make_synthetic(d.synthetic);
  if (d.source == "container") {
    if (d.container.empty()) throw Error("config key 'data.container': path required");
    return data::read_container(d.container);
  }
  if (d.source == "adapter") return from_adapter(d.adapter, warnings);
  if (d.source == "cross_dataset") {
    if (d.cross.datasets.empty()) throw Error("config key 'data.cross_dataset.datasets': at least one dataset required");
    std::vector<data::HarmonizeSource> sources;
    for (const auto& src : d.cross.datasets) {
      const data::Adapter& a = data::adapter(src.name);
      sources.push_back({a.name, load_all(a, src), a.common_channels, data::vocabulary_map(a, d.cross.vocabulary)});
    }
    data::HarmonizeOptions opt{d.cross.vocabulary, d.cross.rate_hz, d.cross.window, d.cross.step};
    return data::harmonize_cross_dataset(sources, opt, warnings);
  }
  throw Error("config key 'data.source': unknown value '" + d.source + "'");
}

fs::path output_dir(const config::Experiment& e, const std::optional<fs::path>& out) {
  if (out) return *out;
  if (!e.output_dir.empty()) return e.output_dir;
  if (const char* root = std::getenv("TASKED_OUTPUT_ROOT")) return fs::path(root) / config::to_string(e.mode);
  return fs::path("runs") / config::to_string(e.mode);
}

int run(const RunArgs& args, std::ostream& log) {
  std::optional<fs::path> out;
  try {
    config::Experiment e = config::load(args.config, args.overrides);
    if (args.workers) {
      if (*args.workers == 0) throw Error("--workers: must be positive");
      e.workers = *args.workers;
    }
    out = output_dir(e, args.out);

    if (e.mode == config::Mode::report) {
      std::vector<report::MethodResults> methods;
      if (e.report_methods.empty())
        methods.push_back(report::read_results(e.method_name, *out));
      else
        for (const auto& m : e.report_methods) methods.push_back(report::read_results(m.name, m.dir));
      report::emit_report(methods, *out / "report", e.report_plots);
      log << report::markdown_table(methods);
      return 0;
    }

    fs::create_directories(*out);
    data::Warnings warnings;
    const data::WindowedDataset ds = build_dataset(e, &warnings);
    ds.validate();
    const json manifest = {{"config", config::to_json(e)},
                           {"root_seed", e.seed},
                           {"derived_seeds", {{"data", e.data.synthetic.seed}, {"train", e.train.seed}}},
                           {"design_decisions", design_decisions(e)},
                           {"dataset",
                            {{"windows", ds.size()},
                             {"channels", ds.channels()},
                             {"window", ds.window()},
                             {"sensors", ds.grouping.size()},
                             {"subjects", ds.n_subjects()},
                             {"activities", ds.n_activities},
                             {"sources", ds.source_names}}},
                           {"warnings", warnings}};
    write_json(*out / "manifest.json", manifest);
    for (const auto& w : warnings) log << "warning: " << w << "\n";

    switch (e.mode) {
      case config::Mode::prepare:
        data::write_container(*out / "dataset", ds);
        log << "wrote " << ds.size() << " windows to " << (*out / "dataset").string() << "\n";
        return 0;
      case config::Mode::train: {
        const bool cross = ds.source_names.size() > 1;
        const std::vector<evaluation::FoldPlan> plan =
            cross ? evaluation::cross_dataset_plan(ds) : evaluation::loso_plan(ds);
        for (std::size_t i = 0; i < plan.size(); ++i)
          if (plan[i].test_subjects.front() == e.train_test_subject && plan[i].variant == e.train_variant) {
            const evaluation::FoldResult r =
                evaluation::run_fold(ds, plan[i], i, e.arch, e.train, fold_outputs(e, *out));
            report::write_fold_result(*out / "folds" / r.id, r);
            if (r.failed) throw Error("fold " + r.id + " failed: " + r.error);
            log << "fold " << r.id << ": accuracy " << r.m.accuracy << ", macro-F1 " << r.m.macro_f1 << "\n";
            return 0;
          }
        throw Error("config key 'train_fold.test_subject': no fold tests subject " +
                    std::to_string(e.train_test_subject));
      }
      case config::Mode::loso:
        finish_sweep(e, *out, evaluation::run_loso(ds, e.arch, e.train, fold_outputs(e, *out)), log);
        return 0;
      case config::Mode::cross_dataset:
        finish_sweep(e, *out, evaluation::run_cross_dataset(ds, e.arch, e.train, fold_outputs(e, *out)), log);
        return 0;
      case config::Mode::report:
        break;
    }
    return 0;
  } catch (const std::exception& err) {
    log << "error: " << err.what() << "\n";
    if (out) {
      try {
        write_json(*out / "error.json", {{"error", err.what()}, {"partial_outputs", fs::exists(*out / "manifest.json")}});
      } catch (...) {
      }
    }
    return 1;
  }
}

}  // namespace tasked::runner
