// SPDX-License-Identifier: Apache-2.0
#include "rlbind/cli.hpp"

#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "rlbind/checkpoint.hpp"
#include "rlbind/config.hpp"
#include "rlbind/error.hpp"
#include "rlbind/pipeline.hpp"
#include "rlbind/report.hpp"
#include "rlbind/synthdata.hpp"

namespace rlbind {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string init;
  std::string ckpt;
  std::string out;
  std::string epsilons;
  std::string gnuplot;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
  std::vector<std::string> sets;
  std::vector<std::string> axes;
  std::vector<std::string> dirs;
};

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ArgumentError("output path '" + dir.string() + "' is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw ArgumentError("output directory '" + dir.string() + "' already exists; pass --force to reuse it");
    }
  }
  fs::create_directories(dir);
}

ResolvedConfig load_config(const Options& o) {
  std::optional<fs::path> path;
  if (!o.config.empty()) path = o.config;
  return parse_config(path, o.sets);
}

nlohmann::json provenance_json(const ResolvedConfig& rc) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : rc.provenance) j[k] = std::string(source_name(v));
  return j;
}

// The data directory is authoritative for the dataset part of the config.
Dataset attach_data(const Options& o, ExperimentConfig& cfg) {
  Dataset data = load_dataset(o.data);
  cfg.data = data.spec;
  cfg.data_seed = data.seed;
  cfg.validate();
  return data;
}

void write_losses(const fs::path& path, const TrainLog& log) {
  std::ostringstream os;
  os << "series,step,loss\n";
  char buf[64];
  for (const auto& [name, values] : log.losses) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      os << name << ',' << i << ',' << buf << '\n';
    }
  }
  write_file_atomic(path, os.str());
}

void write_run(const fs::path& out, const ResolvedConfig& rc, const ExperimentConfig& cfg, const Model& model,
               const std::vector<EvalRow>& rows, const TrainLog* log, std::ostream& os) {
  save_checkpoint(model, out / "model.rlbd");
  if (log != nullptr) write_losses(out / "losses.csv", *log);
  write_file_atomic(out / "config.ini", render_config(cfg));
  write_run_manifest(out / "manifest.json", cfg,
                     {{"stage", model.stage}, {"tag", model.tag}, {"provenance", provenance_json(rc)}});
  write_metrics_csv(out / "metrics.csv", metrics_rows("main", cfg, rows, model.branches.front().scorer.kind()));
  for (const EvalRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %-8s eps=%-7s clean %6.2f%%  robust %6.2f%%\n", r.stage.c_str(),
                  r.modality.c_str(), r.epsilon.str().c_str(), 100.0 * r.clean_acc(), 100.0 * r.robust_acc());
    os << buf;
  }
}

int cmd_gen_data(const Options& o, std::ostream& os) {
  ResolvedConfig rc = parse_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), o.sets);
  const std::uint64_t seed = o.seed_given ? o.seed : rc.config.data_seed;
  prepare_out_dir(o.out, o.force);
  const Dataset data = generate(rc.config.data, seed);
  save_dataset(data, o.out);
  os << "wrote " << data.samples.size() << " samples (" << data.spec.modalities.size() << " modalities, seed "
     << seed << ") to " << o.out << '\n';
  return 0;
}

int cmd_stage(int stage, const Options& o, std::ostream& os) {
  ResolvedConfig rc = load_config(o);
  ExperimentConfig& cfg = rc.config;
  const Dataset data = attach_data(o, cfg);
  prepare_out_dir(o.out, o.force);
  TrainLog log;
  std::optional<Model> model;
  if (!o.init.empty()) {
    if (stage == 0) throw ArgumentError("pretrain starts from scratch; --init is not accepted");
    model = load_checkpoint(o.init);
    if (stage == 1 && model->stage != "stage0") {
      throw ArgumentError("stage1 expects a stage0 checkpoint, '" + o.init + "' holds " + model->stage);
    }
  } else {
    model = stage0_pretrain(cfg, data, &log);
    if (stage == 2 && cfg.stage2_init == Stage2Init::kStage1) model = stage1_fare(*model, cfg, data, &log);
  }
  if (stage == 1) model = stage1_fare(*model, cfg, data, &log);
  if (stage == 2) model = stage2_rlbind(with_scorer(*model, cfg), cfg, data, &log);
  const auto rows = evaluate(*model, eval_samples(cfg, data), data.spec, eval_options(cfg));
  write_run(o.out, rc, cfg, *model, rows, &log, os);
  return 0;
}

int cmd_eval(const Options& o, std::ostream& os) {
  ResolvedConfig rc = load_config(o);
  ExperimentConfig& cfg = rc.config;
  if (!o.epsilons.empty()) {
    cfg.eval_epsilons.clear();
    std::stringstream ss(o.epsilons);
    for (std::string part; std::getline(ss, part, ',');) cfg.eval_epsilons.push_back(Rational::parse(part));
    rc.provenance["eval.epsilons"] = ValueSource::kFlag;
  }
  const Dataset data = attach_data(o, cfg);
  const Model model = load_checkpoint(o.ckpt);
  prepare_out_dir(o.out, o.force);
  const auto rows = evaluate(model, eval_samples(cfg, data), data.spec, eval_options(cfg));
  write_file_atomic(fs::path(o.out) / "config.ini", render_config(cfg));
  write_run_manifest(fs::path(o.out) / "manifest.json", cfg,
                     {{"stage", model.stage}, {"tag", model.tag}, {"checkpoint", o.ckpt},
                      {"provenance", provenance_json(rc)}});
  write_metrics_csv(fs::path(o.out) / "metrics.csv",
                    metrics_rows("main", cfg, rows, model.branches.front().scorer.kind()));
  for (const EvalRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s %-8s eps=%-7s clean %6.2f%%  robust %6.2f%%\n", r.stage.c_str(),
                  r.modality.c_str(), r.epsilon.str().c_str(), 100.0 * r.clean_acc(), 100.0 * r.robust_acc());
    os << buf;
  }
  return 0;
}

std::vector<GridAxis> parse_axes(const std::vector<std::string>& specs) {
  std::vector<GridAxis> axes;
  for (const std::string& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("axis '" + s + "' is not of the form name=v1,v2,...");
    GridAxis axis{s.substr(0, eq), {}};
    std::stringstream ss(s.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
      if (!v.empty()) axis.values.push_back(v);
    }
    axes.push_back(std::move(axis));
  }
  return axes;
}

int cmd_ablate(const Options& o, std::ostream& os) {
  ResolvedConfig rc = load_config(o);
  ExperimentConfig& cfg = rc.config;
  const auto axes = parse_axes(o.axes);
  Dataset data = o.data.empty() ? generate(cfg.data, cfg.data_seed) : attach_data(o, cfg);
  // Fail on bad variants before creating anything.
  for (const GridAxis& axis : axes) {
    for (const std::string& v : axis.values) {
      ExperimentConfig probe = cfg;
      apply_axis_value(probe, axis.name, v);
    }
  }
  prepare_out_dir(o.out, o.force);
  const auto cells = run_ablation_grid(cfg, data, axes);
  nlohmann::json cell_json = nlohmann::json::array();
  std::size_t failed = 0;
  for (const GridCell& c : cells) {
    nlohmann::json j = {{"assignment", c.assignment}, {"config_hash", c.config.hash()}};
    if (c.error) {
      j["error"] = *c.error;
      ++failed;
    }
    cell_json.push_back(j);
  }
  nlohmann::json axes_json = nlohmann::json::object();
  for (const GridAxis& a : axes) axes_json[a.name] = a.values;
  write_file_atomic(fs::path(o.out) / "config.ini", render_config(cfg));
  write_run_manifest(fs::path(o.out) / "manifest.json", cfg,
                     {{"axes", axes_json}, {"cells", cell_json}, {"provenance", provenance_json(rc)}});
  write_metrics_csv(fs::path(o.out) / "metrics.csv", grid_metrics_rows(cells));
  os << cells.size() << " cells, " << failed << " failed\n";
  for (const GridCell& c : cells) {
    if (c.error) os << "  failed cell " << nlohmann::json(c.assignment).dump() << ": " << *c.error << '\n';
  }
  return 0;
}

int cmd_report(const Options& o, std::ostream& os) {
  std::vector<fs::path> dirs(o.dirs.begin(), o.dirs.end());
  const Report report = build_report(dirs);
  const std::string text = report_text(report);
  os << text;
  if (!o.out.empty()) {
    prepare_out_dir(o.out, o.force);
    write_file_atomic(fs::path(o.out) / "report.csv", report_csv(report));
    write_file_atomic(fs::path(o.out) / "report.txt", text);
  }
  if (!o.gnuplot.empty()) write_file_atomic(o.gnuplot, report_gnuplot(report));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarially robust multi-modal binding experiments", "rlbind"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--set", o.sets, "Override a config key, section.key=value (repeatable)");
    sub->add_flag("--force", o.force, "Reuse an existing output directory");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--spec", o.config, "Config file whose [data] section describes the dataset");
  gen->add_option("--seed", o.seed, "Dataset seed (defaults to data.seed)");
  gen->add_option("--out", o.out, "Output directory")->required();
  add_common(gen);

  std::vector<CLI::App*> stages;
  for (const char* name : {"pretrain", "stage1", "stage2"}) {
    auto* sub = app.add_subcommand(name, std::string("Run ") + name + " and evaluate the result");
    sub->add_option("--config", o.config, "Config file");
    sub->add_option("--data", o.data, "Dataset directory (from gen-data)")->required();
    sub->add_option("--init", o.init, "Checkpoint to start from (earlier stages run when omitted)");
    sub->add_option("--out", o.out, "Output directory")->required();
    add_common(sub);
    stages.push_back(sub);
  }

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", o.ckpt, "Model checkpoint")->required();
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--epsilons", o.epsilons, "Comma-separated attack radii, e.g. 2/255,4/255");
  ev->add_option("--config", o.config, "Config file (evaluation settings)");
  ev->add_option("--out", o.out, "Output directory")->required();
  add_common(ev);

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid");
  ab->add_option("--config", o.config, "Base config file");
  ab->add_option("--data", o.data, "Dataset directory (generated from the config when omitted)");
  ab->add_option("--axes", o.axes, "Axis specs name=v1,v2 (scorer, alignment, lora, lambda, objective, init)")
      ->required();
  ab->add_option("--out", o.out, "Output directory")->required();
  add_common(ab);

  auto* rep = app.add_subcommand("report", "Merge metrics from run directories");
  rep->add_option("dirs", o.dirs, "Run directories; the first is the baseline")->required();
  rep->add_option("--out", o.out, "Directory for report.csv and report.txt");
  rep->add_option("--gnuplot", o.gnuplot, "Write a gnuplot data file");
  rep->add_flag("--force", o.force, "Reuse an existing output directory");

  std::vector<const char*> argv{"rlbind"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    err << "error: usage: " << msg << '\n';
    return 2;
  }
  o.seed_given = gen->count("--seed") > 0;

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    for (int s = 0; s < 3; ++s) {
      if (stages[static_cast<std::size_t>(s)]->parsed()) return cmd_stage(s, o, out);
    }
    if (ev->parsed()) return cmd_eval(o, out);
    if (ab->parsed()) return cmd_ablate(o, out);
    if (rep->parsed()) return cmd_report(o, out);
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    err << "error: " << e.kind() << ": " << msg << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  err << "error: usage: no command given\n";
  return 2;
}

}  // namespace rlbind
