// Copyright 2026 The relfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relfuse/checkpoint.hpp"
#include "relfuse/config.hpp"
#include "relfuse/dataset.hpp"
#include "relfuse/errors.hpp"
#include "relfuse/gradcheck.hpp"
#include "relfuse/metrics.hpp"
#include "relfuse/synthetic.hpp"
#include "relfuse/tensor_io.hpp"
#include "relfuse/training.hpp"

namespace relfuse::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Raised by the command bodies to pick a specific exit code.
struct Exit {
  int code;
  std::string message;
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("RELFUSE_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("RELFUSE_SEED is not an integer: '") + raw + "'");
  return static_cast<std::uint64_t>(v);
}

std::string shape_string(const StreamShape& s) {
  return "(" + std::to_string(s.length) + ", " + std::to_string(s.depth) + ")";
}

Manifest open_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Exit{kInputMissing, "manifest not found: " + path.string()};
  return load_manifest(path);
}

Checkpoint open_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw Exit{kInputMissing, "checkpoint not found: " + path.string()};
  return load_checkpoint(path.string());
}

void require_manifest_ok(const Manifest& m, std::ostream& err) {
  const ValidationReport v = validate_manifest(m);
  if (v.ok()) return;
  for (const auto& f : v.failures) err << "manifest: " << f << '\n';
  throw Exit{kMismatch, "manifest failed validation (" + std::to_string(v.failures.size()) +
                            " problems)"};
}

/// Stream shapes and class count of `config` must agree with the manifest.
void require_compatible(const ModelConfig& config, const Manifest& m) {
  std::ostringstream msg;
  if (config.uses_stream1() && !(config.stream1 == m.stream1)) {
    msg << "stream1 shape mismatch: model expects " << shape_string(config.stream1)
        << ", manifest has " << shape_string(m.stream1) << '\n';
  }
  if (config.uses_stream2() && !(config.stream2 == m.stream2)) {
    msg << "stream2 shape mismatch: model expects " << shape_string(config.stream2)
        << ", manifest has " << shape_string(m.stream2) << '\n';
  }
  if (config.num_classes != m.class_names.size()) {
    msg << "class count mismatch: model has " << config.num_classes << ", manifest has "
        << m.class_names.size() << '\n';
  }
  std::string s = msg.str();
  if (!s.empty()) {
    s.pop_back();
    throw Exit{kMismatch, s};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw FormatError(FormatError::Kind::kIo, "cannot write '" + path.string() + "'");
}

void echo_config(const json& doc, const fs::path& out_dir, std::ostream& out) {
  out << "effective config:\n" << doc.dump(2) << '\n';
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(out_dir / "effective_config.json", doc.dump(2) + "\n");
  }
}

LoadOptions split_options(const ModelConfig& config, std::optional<Split> split) {
  LoadOptions o;
  o.split = split;
  o.stream1 = config.uses_stream1();
  o.stream2 = config.uses_stream2();
  return o;
}

std::optional<Split> parse_split_option(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_split(s);
}

// ---------------------------------------------------------------------------

struct CommonRun {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string mode;
  std::optional<std::uint64_t> seed;
};

void add_run_options(CLI::App* cmd, CommonRun& c) {
  cmd->add_option("--config", c.config_path, "JSON config with model/training sections");
  cmd->add_option("--set", c.overrides, "Override, e.g. --set training.epochs=5")
      ->take_all();
  cmd->add_option("--mode", c.mode, "two_stream | stream1_only | stream2_only");
  cmd->add_option("--seed", c.seed, "Seed for init, shuffling and dropout");
}

/// Builds the run config: defaults <- config file <- manifest-derived shapes
/// for keys still unset <- --set overrides <- --mode/--seed flags.
RunConfig resolve_run_config(const CommonRun& c, const Manifest* manifest, json& doc) {
  doc = json::object();
  if (!c.config_path.empty()) {
    if (!fs::exists(c.config_path)) throw Exit{kInputMissing, "config not found: " + c.config_path};
    std::ifstream f(c.config_path);
    doc = json::parse(f, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
      throw ConfigError(c.config_path + ": not a JSON object");
  }
  for (const auto& o : c.overrides) apply_override(doc, o);
  if (manifest) {
    json& model = doc["model"];
    if (!model.contains("stream1"))
      model["stream1"] = {manifest->stream1.length, manifest->stream1.depth};
    if (!model.contains("stream2"))
      model["stream2"] = {manifest->stream2.length, manifest->stream2.depth};
    const std::size_t k = manifest->class_names.size();
    if (!model.contains("num_classes")) model["num_classes"] = k;
    if (!model.contains("fc_dims")) {
      std::vector<std::size_t> fc = ModelConfig{}.fc_dims;
      fc.back() = model["num_classes"].get<std::size_t>();
      model["fc_dims"] = fc;
    }
  }
  if (!c.mode.empty()) doc["model"]["mode"] = c.mode;
  if (c.seed) {
    doc["model"]["seed"] = *c.seed;
  } else if (!doc.contains("model") || !doc["model"].contains("seed")) {
    if (auto s = env_seed()) doc["model"]["seed"] = *s;
  }
  RunConfig rc = run_config_from_json(doc);
  rc.model.validate();
  rc.training.validate();
  doc = to_json(rc);
  return rc;
}

void print_report(const Evaluation& ev, std::ostream& out) {
  out << report_table(ev.metrics, ev.confusion);
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& manifest_path, const fs::path& out_dir, const CommonRun& common,
              const std::string& resume_path, std::ostream& out, std::ostream& err) {
  const Manifest m = open_manifest(manifest_path);
  json doc;
  const RunConfig rc = resolve_run_config(common, &m, doc);
  echo_config(doc, out_dir, out);
  require_compatible(rc.model, m);
  require_manifest_ok(m, err);

  const Dataset train_set = load_dataset(m, split_options(rc.model, Split::kTrain));
  const Dataset test_set = load_dataset(m, split_options(rc.model, Split::kTest));
  if (train_set.samples.empty()) throw Exit{kMismatch, "manifest has no train records"};

  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.class_names = m.class_names;
  opts.eval = test_set.samples;
  if (!resume_path.empty()) opts.resume = open_checkpoint(resume_path);
  opts.on_epoch = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_loss " << r.train_loss << " train_acc "
        << r.train_accuracy;
    if (r.eval) out << " test_acc " << r.eval->accuracy;
    out << '\n';
  };
  const TrainResult result = train(rc, train_set.samples, opts);

  if (!result.report.epochs.empty()) {
    out << "final train accuracy " << result.report.epochs.back().train_accuracy << '\n';
  }
  const auto& report_set = test_set.samples.empty() ? train_set.samples : test_set.samples;
  const Evaluation ev = evaluate(rc.model, result.final.params, report_set, m.class_names);
  render_report(ev.metrics, ev.confusion, out_dir);
  out << (test_set.samples.empty() ? "train split (no test records):\n" : "test split:\n");
  print_report(ev, out);
  return kOk;
}

int cmd_eval(const std::string& manifest_path, const std::string& ckpt_path, const fs::path& out_dir,
             const std::string& split, std::ostream& out) {
  const Manifest m = open_manifest(manifest_path);
  const Checkpoint ck = open_checkpoint(ckpt_path);
  echo_config(to_json(RunConfig{ck.model, ck.training}), out_dir, out);
  require_compatible(ck.model, m);
  const Dataset d = load_dataset(m, split_options(ck.model, parse_split_option(split)));
  if (d.samples.empty()) throw Exit{kInputMissing, "no records in split '" + split + "'"};
  const Evaluation ev = evaluate(ck.model, ck.params, d.samples, m.class_names);
  render_report(ev.metrics, ev.confusion, out_dir);
  out << split << " split, " << d.samples.size() << " samples:\n";
  print_report(ev, out);
  return kOk;
}

int cmd_export(const std::string& manifest_path, const std::string& ckpt_path,
               const fs::path& out_dir, const std::string& split, std::ostream& out) {
  const Manifest m = open_manifest(manifest_path);
  const Checkpoint ck = open_checkpoint(ckpt_path);
  echo_config(to_json(RunConfig{ck.model, ck.training}), out_dir, out);
  require_compatible(ck.model, m);
  const std::optional<Split> sel = parse_split_option(split);
  const Dataset d = load_dataset(m, split_options(ck.model, sel));
  if (d.samples.empty()) throw Exit{kInputMissing, "no records in split '" + split + "'"};
  const Evaluation ev = evaluate(ck.model, ck.params, d.samples, m.class_names, 64, true);
  write_tensor((out_dir / "embeddings.fts").string(), ev.embeddings);

  std::map<std::string, Split> split_of;
  for (const auto& r : m.records) split_of[r.id] = r.split;
  std::ostringstream csv;
  csv << "row,id,label,class,split,predicted\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    csv << i << ',' << s.id << ',' << s.label << ','
        << m.class_names[static_cast<std::size_t>(s.label)] << ','
        << to_string(split_of.at(s.id)) << ',' << ev.predictions[i] << '\n';
  }
  write_text(out_dir / "embeddings_labels.csv", csv.str());
  out << "wrote " << ev.embeddings.shape()[0] << " x " << ev.embeddings.shape()[1]
      << " embeddings to " << (out_dir / "embeddings.fts").string() << '\n';
  return kOk;
}

int cmd_gradcheck(std::optional<std::uint64_t> seed, std::size_t num_seeds,
                  const std::vector<std::string>& only, const std::string& corrupt,
                  const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  GradcheckOptions o;
  if (!seed) seed = env_seed();
  if (seed) {
    o.seeds.clear();
    for (std::size_t i = 0; i < num_seeds; ++i) o.seeds.push_back(*seed + i);
  } else {
    o.seeds.resize(std::min(o.seeds.size(), num_seeds));
    while (o.seeds.size() < num_seeds) o.seeds.push_back(o.seeds.size() + 1);
  }
  o.only = only;
  if (!corrupt.empty()) o.corrupt = corrupt;
  json doc{{"seeds", o.seeds},
           {"step", o.step},
           {"layer_tolerance", o.layer_tolerance},
           {"model_tolerance", o.model_tolerance},
           {"zero_gradient_bound", o.zero_gradient_bound},
           {"only", o.only},
           {"corrupt", corrupt.empty() ? json(nullptr) : json(corrupt)}};
  echo_config(doc, out_dir, out);

  const GradcheckReport r = run_gradcheck(o);
  std::vector<std::string> failing;
  json results = json::array();
  char line[256];
  for (const auto& c : r.components) {
    std::snprintf(line, sizeof line, "%-20s max_rel_error %.3e  tol %.0e  %s  (worst %s)\n",
                  c.name.c_str(), c.max_rel_error, c.tolerance, c.passed() ? "ok" : "FAIL",
                  c.worst.c_str());
    out << line;
    if (!c.zero_gradient.empty()) {
      std::snprintf(line, sizeof line, "%-20s zero-gradient tensors %zu, max |numeric| %.3e\n", "",
                    c.zero_gradient.size(), c.max_zero_numeric);
      out << line;
    }
    if (!c.passed()) failing.push_back(c.name);
    results.push_back({{"name", c.name},
                       {"max_rel_error", c.max_rel_error},
                       {"max_elementwise_error", c.max_elementwise_error},
                       {"tolerance", c.tolerance},
                       {"worst", c.worst},
                       {"zero_gradient", c.zero_gradient},
                       {"max_zero_numeric", c.max_zero_numeric},
                       {"passed", c.passed()}});
  }
  if (!out_dir.empty()) write_text(out_dir / "gradcheck.json", results.dump(2) + "\n");
  if (!failing.empty()) {
    err << "gradcheck failed:";
    for (const auto& f : failing) err << ' ' << f;
    err << '\n';
    return kVerificationFailed;
  }
  out << "gradcheck passed (" << r.components.size() << " components)\n";
  return kOk;
}

StreamShape parse_shape_option(const std::string& s) {
  const auto comma = s.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(s);
    return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw ConfigError("stream shape must be L,D: '" + s + "'");
  }
}

int cmd_synth(SyntheticSpec spec, std::optional<std::uint64_t> seed, const std::string& s1,
              const std::string& s2, const fs::path& out_dir, std::ostream& out) {
  if (!seed) seed = env_seed();
  if (seed) spec.seed = *seed;
  if (!s1.empty()) spec.stream1 = parse_shape_option(s1);
  if (!s2.empty()) spec.stream2 = parse_shape_option(s2);
  json doc{{"num_classes", spec.num_classes},
           {"per_class", spec.per_class},
           {"stream1", {spec.stream1.length, spec.stream1.depth}},
           {"stream2", {spec.stream2.length, spec.stream2.depth}},
           {"seed", spec.seed},
           {"signal", spec.signal},
           {"noise", spec.noise}};
  echo_config(doc, out_dir, out);
  const SyntheticOutput r = generate_synthetic(spec, out_dir);
  out << "wrote " << r.manifest.records.size() << " records to " << r.manifest_path.string()
      << '\n';
  out << "nearest-mean probe accuracy: stream1 " << r.corpus.probe_stream1 << ", stream2 "
      << r.corpus.probe_stream2 << ", both " << r.corpus.probe_combined << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"relfuse: two-stream relational fusion classifier"};
  app.require_subcommand(1);

  std::string manifest, ckpt, out_dir, split = "test", export_split = "all", resume, corrupt;
  CommonRun common;

  auto* train = app.add_subcommand("train", "Train on the train split of a manifest");
  train->add_option("--manifest", manifest, "Manifest JSON")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");
  add_run_options(train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--manifest", manifest, "Manifest JSON")->required();
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--out", out_dir, "Output directory")->required();
  eval->add_option("--split", split, "train | test | all");

  auto* exp = app.add_subcommand("export-embeddings", "Write LSTM embeddings as FTS1 + CSV");
  exp->add_option("--manifest", manifest, "Manifest JSON")->required();
  exp->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  exp->add_option("--out", out_dir, "Output directory")->required();
  exp->add_option("--split", export_split, "train | test | all");

  std::optional<std::uint64_t> gc_seed;
  std::size_t gc_seeds = 5;
  std::vector<std::string> gc_only;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc->add_option("--seed", gc_seed, "First seed");
  gc->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--only", gc_only, "Components to run")->take_all();
  gc->add_option("--corrupt", corrupt, "Perturb one component's analytic gradient");
  gc->add_option("--out", out_dir, "Optional output directory for gradcheck.json");

  SyntheticSpec spec;
  std::optional<std::uint64_t> syn_seed;
  std::string syn_s1, syn_s2;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic cross-stream corpus");
  syn->add_option("--out", out_dir, "Output directory")->required();
  syn->add_option("--classes", spec.num_classes, "Number of classes (>= 3)");
  syn->add_option("--per-class", spec.per_class, "Samples per class");
  syn->add_option("--stream1", syn_s1, "Stream 1 shape L,D");
  syn->add_option("--stream2", syn_s2, "Stream 2 shape L,D");
  syn->add_option("--signal", spec.signal, "Prototype scale");
  syn->add_option("--noise", spec.noise, "Noise standard deviation");
  syn->add_option("--seed", syn_seed, "Seed");

  std::vector<std::string> argv_store{"relfuse"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (app.get_subcommands().size() == 1) {
      err << app.get_subcommands().front()->help();
    } else {
      err << app.help();
    }
    return kInputMissing;
  }

  try {
    if (train->parsed()) return cmd_train(manifest, out_dir, common, resume, out, err);
    if (eval->parsed()) return cmd_eval(manifest, ckpt, out_dir, split, out);
    if (exp->parsed()) return cmd_export(manifest, ckpt, out_dir, export_split, out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_seeds, gc_only, corrupt, out_dir, out, err);
    if (syn->parsed()) return cmd_synth(spec, syn_seed, syn_s1, syn_s2, out_dir, out);
  } catch (const Exit& e) {
    err << "error: " << e.message << '\n';
    return e.code;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == FormatError::Kind::kIo ? kInputMissing : kVerificationFailed;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kVerificationFailed;
  }
  return kInputMissing;
}

}  // namespace relfuse::cli
