#include "dreid/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dreid/codec.hpp"
#include "dreid/degrade.hpp"
#include "dreid/errors.hpp"
#include "dreid/kernels.hpp"
#include "dreid/parallel.hpp"
#include "dreid/retrieval.hpp"
#include "dreid/splitter.hpp"
#include "dreid/synthbench.hpp"
#include "dreid/trace_json.hpp"

namespace dreid::cli {

namespace fs = std::filesystem;
namespace kf = kernelforge;
using nlohmann::json;

namespace {

std::string version_line() {
  return std::string(kProgram) + " " + kVersion + " (jpeg: " + codec::jpeg_encoder_identity() +
         ")";
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- kernel-dump ----

json parse_spec_value(const std::string& v) {
  if (v == "true" || v == "on") return true;
  if (v == "false" || v == "off") return false;
  try {
    std::size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos) {
      const long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ParameterError("bad value in --spec: '" + v + "'");
}

int kernel_dump(const std::string& family_name, std::uint64_t seed, const std::string& spec_text,
                const std::string& ranges_path, const std::string& out_path, std::ostream& out) {
  const kf::BlurFamily family = kf::parse_blur_family(family_name);
  const degrade::PipelineRanges ranges =
      ranges_path.empty() ? degrade::PipelineRanges{} : degrade::load_pipeline_ranges(ranges_path);
  SeededRng rng(seed);
  json spec = degrade::blur_spec_to_json(kf::sample_blur_spec(family, rng, ranges.kernels));
  for (const auto& kv : split_list(spec_text)) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParameterError("--spec entries are key=value");
    const std::string key = kv.substr(0, eq);
    if (key == "shift_x" || key == "shift_y") {
      if (!spec.contains("shift")) throw ParameterError("shift applies to motion kernels");
      spec["shift"][key == "shift_x" ? 0 : 1] = parse_spec_value(kv.substr(eq + 1));
    } else if (key == "family" || !spec.contains(key)) {
      throw ParameterError("unknown " + family_name + " parameter '" + key + "'");
    } else {
      spec[key] = parse_spec_value(kv.substr(eq + 1));
    }
  }
  kf::BlurSpec parsed;
  try {
    parsed = degrade::blur_spec_from_json(spec);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("bad --spec: ") + e.what());
  }
  const kf::KernelGrid grid = kf::make_kernel(parsed, derive_seed(seed, "kernel-noise"));

  std::ostringstream text;
  text << "# " << kf::describe(parsed) << '\n';
  text << std::setprecision(17);
  for (int r = 0; r < grid.side(); ++r) {
    for (int c = 0; c < grid.side(); ++c) text << (c ? " " : "") << grid.at(r, c);
    text << '\n';
  }
  if (out_path.empty()) {
    out << text.str();
  } else {
    open_out(out_path) << text.str();
  }
  return kExitOk;
}

// ---- degrade ----

struct InputImage {
  std::string id;
  fs::path path;
};

std::vector<InputImage> list_inputs(const fs::path& input) {
  std::vector<InputImage> items;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
        items.push_back({entry.path().stem().string(), entry.path()});
      }
    }
  } else if (fs::is_regular_file(input)) {
    const Manifest m = read_manifest(input);
    for (const auto& r : m) {
      fs::path p = r.path;
      if (p.is_relative()) p = input.parent_path() / p;
      items.push_back({r.image_id, p});
    }
  } else {
    throw IoError("input not found: " + input.string());
  }
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].id == items[i - 1].id) {
      throw ValidationError("duplicate image id " + items[i].id);
    }
  }
  return items;
}

int degrade_cmd(const std::string& pipeline, std::uint64_t seed, const fs::path& input,
                const fs::path& output, const std::string& trace_path, int workers,
                const std::string& ranges_path, bool resize, std::ostream& err) {
  const degrade::PipelineKind kind = degrade::parse_pipeline_kind(pipeline);
  const degrade::PipelineRanges ranges =
      ranges_path.empty() ? degrade::PipelineRanges{} : degrade::load_pipeline_ranges(ranges_path);
  const auto items = list_inputs(input);
  fs::create_directories(output);
  std::vector<std::string> lines(items.size());
  parallel_for(items.size(), resolve_workers(workers), [&](std::size_t i) {
    Image img = codec::read_image(items[i].path);
    degrade::OpTrace prefix;
    if (img.height() != kPipelineSide || img.width() != kPipelineSide) {
      if (!resize) {
        throw ValidationError(items[i].path.string() + " is " + std::to_string(img.height()) +
                              "x" + std::to_string(img.width()) +
                              "; pipelines take 384x384 (use --resize)");
      }
      prefix.ops.push_back(degrade::ResizeOp{kPipelineSide});
      img = degrade::replay(img, prefix);
    }
    const std::uint64_t sub_seed = degrade::image_sub_seed(seed, items[i].id);
    SeededRng rng(sub_seed);
    auto [result, trace] = degrade::apply_pipeline(img, kind, rng, ranges);
    prefix.ops.insert(prefix.ops.end(), trace.ops.begin(), trace.ops.end());
    codec::write_png(output / (items[i].id + ".png"), result);
    lines[i] = degrade::trace_line(items[i].id, sub_seed, prefix);
  });
  if (!trace_path.empty()) {
    auto out = open_out(trace_path);
    for (const auto& l : lines) out << l << '\n';
  }
  err << "degraded " << items.size() << " images\n";
  return kExitOk;
}

// ---- split ----

int split_cmd(const fs::path& manifest_path, std::uint64_t seed,
              std::optional<std::uint64_t> image_seed, bool time_aware,
              std::optional<double> unseen, std::optional<double> q_seen,
              std::optional<double> q_unseen, const fs::path& out_path,
              const std::string& report_path, std::ostream& out, std::ostream& err) {
  const Manifest manifest = read_manifest(manifest_path);
  splitter::SplitConfig cfg;
  cfg.seed = seed;
  cfg.image_seed = image_seed;
  cfg.time_aware = time_aware;
  if (unseen) cfg.unseen_id_fraction = *unseen;
  if (q_seen) cfg.query_fraction_seen = *q_seen;
  if (q_unseen) cfg.query_fraction_unseen = *q_unseen;
  const auto assignment = splitter::split(manifest, cfg);
  for (const auto& w : assignment.warnings) err << "warning: " << w << '\n';
  splitter::write_assignment(out_path, assignment, manifest);
  const auto report = splitter::validate_split(assignment, manifest);
  if (report_path.empty()) {
    out << report.to_text();
  } else {
    open_out(report_path) << report.to_text();
  }
  return report.ok() ? kExitOk : kExitValidation;
}

// ---- eval ----

int eval_cmd(const fs::path& query_path, const fs::path& db_path, const fs::path& manifest_path,
             const std::string& assignment_path, const std::string& ks_text,
             const std::string& strata_text, const fs::path& out_path, int max_rank, int workers) {
  const auto queries = retrieval::read_embeddings(query_path);
  const auto db = retrieval::read_embeddings(db_path);
  const Manifest manifest = read_manifest(manifest_path);
  std::optional<splitter::SplitAssignment> assignment;
  if (!assignment_path.empty()) assignment = splitter::read_assignment(assignment_path, manifest);

  std::vector<std::size_t> ks;
  for (const auto& k : split_list(ks_text)) {
    try {
      const int v = std::stoi(k);
      if (v < 1) throw ParameterError("");
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ParameterError("bad rank in --k: '" + k + "'");
    }
  }
  if (ks.empty()) throw ParameterError("--k needs at least one rank");
  const std::size_t cmc_len =
      max_rank > 0 ? static_cast<std::size_t>(max_rank) : *std::max_element(ks.begin(), ks.end());

  const auto results = retrieval::search(queries, db, 0, resolve_workers(workers));
  const retrieval::IdentityIndex index(manifest, db.ids());
  const auto report = retrieval::stratified_report(
      results, index, manifest, assignment ? &*assignment : nullptr, split_list(strata_text), ks,
      cmc_len);
  open_out(out_path) << retrieval::to_json(report).dump(2) << '\n';
  return kExitOk;
}

// ---- bench ----

int bench_cmd(const std::string& config_path, std::uint64_t seed, int workers,
              const fs::path& out_path, std::ostream& err) {
  synthbench::BenchConfig config =
      config_path.empty() ? synthbench::BenchConfig{} : synthbench::load_bench_config(config_path);
  config.seed = seed;
  if (workers > 0) config.workers = workers;
  config.validate();
  const auto report = synthbench::run_experiment_grid(config);
  open_out(out_path) << synthbench::to_json(report).dump(2) << '\n';
  err << "wrote " << report.records.size() << " grid records\n";
  return kExitOk;
}

// ---- plot ----

int plot_cmd(const fs::path& report_path, const std::string& stratum, const fs::path& out_path) {
  const json j = read_json_file(report_path);
  std::ostringstream csv;
  csv << std::setprecision(17);
  if (j.contains("records")) {
    const auto grid = synthbench::grid_from_json(j);
    csv << "train_pipeline,query_condition,stratum,queries,rank1,rank5,rank10,rank20,map\n";
    for (const auto& r : grid.records) {
      csv << r.train_pipeline << ',' << r.query_condition << ',' << r.stratum << ','
          << r.metrics.queries;
      for (std::size_t k : {1, 5, 10, 20}) {
        const auto it = r.metrics.rank_k.find(k);
        csv << ',';
        if (it != r.metrics.rank_k.end()) csv << it->second;
      }
      csv << ',' << r.metrics.map << '\n';
    }
  } else {
    const auto report = retrieval::report_from_json(j);
    const retrieval::Metrics* m = &report.overall;
    if (!stratum.empty()) {
      const auto eq = stratum.find('=');
      if (eq == std::string::npos) throw ParameterError("--stratum is key=value");
      const auto key = report.strata.find(stratum.substr(0, eq));
      if (key == report.strata.end()) throw ParameterError("no stratum " + stratum);
      const auto value = key->second.find(stratum.substr(eq + 1));
      if (value == key->second.end()) throw ParameterError("no stratum " + stratum);
      m = &value->second;
    }
    csv << "rank,accuracy\n";
    for (std::size_t k = 0; k < m->cmc.size(); ++k) csv << k + 1 << ',' << m->cmc[k] << '\n';
  }
  open_out(out_path) << csv.str();
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deterministic image degradation and re-identification evaluation", kProgram};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print version and JPEG encoder identity");

  // kernel-dump
  std::string family, spec_text, ranges_path, out_path;
  std::uint64_t seed = 0;
  int workers = 0;
  auto* kd = app.add_subcommand("kernel-dump", "Print one blur kernel as text rows");
  kd->add_option("--family", family, "gaussian | generalized-gaussian | motion | defocus")
      ->required();
  kd->add_option("--seed", seed, "Sampling seed")->required();
  kd->add_option("--spec", spec_text, "Overrides, e.g. side=7,sigma_x=1.5");
  kd->add_option("--config", ranges_path, "JSON file narrowing the sampling ranges");
  kd->add_option("--out", out_path, "Write here instead of stdout");

  // degrade
  std::string pipeline, input, output, trace_path;
  bool resize = false;
  auto* dg = app.add_subcommand("degrade", "Apply a degradation pipeline to images");
  dg->add_option("--pipeline", pipeline, "simple | diverse | diverse-plus")->required();
  dg->add_option("--seed", seed, "Global seed")->required();
  dg->add_option("--input", input, "Image directory or manifest")->required();
  dg->add_option("--output", output, "Output directory")->required();
  dg->add_option("--trace", trace_path, "Trace file (JSON lines)");
  dg->add_option("--workers", workers, "Worker threads (default DEGRADE_REID_THREADS or 1)");
  dg->add_option("--config", ranges_path, "JSON file narrowing the sampling ranges");
  dg->add_flag("--resize", resize, "Bicubic-resize inputs that are not 384x384");

  // split
  std::string manifest_path, split_out, report_path;
  std::optional<std::uint64_t> image_seed;
  std::optional<double> unseen, q_seen, q_unseen;
  bool time_aware = false;
  auto* sp = app.add_subcommand("split", "Assign images to training, database and query");
  sp->add_option("--manifest", manifest_path, "Manifest (CSV or JSON lines)")->required();
  sp->add_option("--seed", seed, "Identity-level seed")->required();
  sp->add_option("--image-seed", image_seed, "Image-level seed (default derived)");
  sp->add_flag("--time-aware", time_aware, "Earliest images per identity form the database");
  sp->add_option("--unseen-frac", unseen, "Fraction of unseen identities");
  sp->add_option("--query-frac-seen", q_seen, "Query fraction for seen identities");
  sp->add_option("--query-frac-unseen", q_unseen, "Query fraction for unseen identities");
  sp->add_option("--out", split_out, "Assignment file (JSON lines)")->required();
  sp->add_option("--report", report_path, "Write the validation report here");

  // eval
  std::string query_emb, db_emb, assignment_path, ks = "1,5,10,20", strata, eval_out;
  int max_rank = 0;
  auto* ev = app.add_subcommand("eval", "Rank-k, CMC and mAP from embedding files");
  ev->add_option("--query", query_emb, "Query embeddings (EMB1)")->required();
  ev->add_option("--db", db_emb, "Database embeddings (EMB1)")->required();
  ev->add_option("--manifest", manifest_path, "Manifest with identities")->required();
  ev->add_option("--assignment", assignment_path, "Split assignment (for the group stratum)");
  ev->add_option("--k", ks, "Comma-separated ranks")->capture_default_str();
  ev->add_option("--strata", strata, "Comma-separated: clarity, group, dataset");
  ev->add_option("--max-rank", max_rank, "CMC length (default: largest k)");
  ev->add_option("--workers", workers, "Worker threads");
  ev->add_option("--out", eval_out, "Report (JSON)")->required();

  // bench
  std::string bench_config, bench_out;
  auto* bn = app.add_subcommand("bench", "Train and evaluate on the synthetic benchmark");
  bn->add_option("--config", bench_config, "key = value config file");
  bn->add_option("--seed", seed, "Master seed")->required();
  bn->add_option("--workers", workers, "Worker threads");
  bn->add_option("--out", bench_out, "Grid report (JSON)")->required();

  // plot
  std::string plot_report, plot_out, stratum;
  auto* pl = app.add_subcommand("plot", "CSV tables from eval or bench reports");
  pl->add_option("--report", plot_report, "report.json or grid.json")->required();
  pl->add_option("--stratum", stratum, "CMC of one stratum, e.g. clarity=4");
  pl->add_option("--out", plot_out, "CSV file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (version) {
      out << version_line() << '\n';
      return kExitOk;
    }
    if (*kd) return kernel_dump(family, seed, spec_text, ranges_path, out_path, out);
    if (*dg) {
      return degrade_cmd(pipeline, seed, input, output, trace_path, workers, ranges_path, resize,
                         err);
    }
    if (*sp) {
      return split_cmd(manifest_path, seed, image_seed, time_aware, unseen, q_seen, q_unseen,
                       split_out, report_path, out, err);
    }
    if (*ev) {
      return eval_cmd(query_emb, db_emb, manifest_path, assignment_path, ks, strata, eval_out,
                      max_rank, workers);
    }
    if (*bn) return bench_cmd(bench_config, seed, workers, bench_out, err);
    if (*pl) return plot_cmd(plot_report, stratum, plot_out);
    out << app.help();
    return kExitValidation;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace dreid::cli
