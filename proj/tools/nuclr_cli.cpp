// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// nuclr: synthesize data, pretrain encoders, extract embeddings, run probes,
// ablations and bin-size sweeps. Exit 0 on success, 1 on validation errors,
// 2 on runtime errors; failures print an `error_code: <Code>` line to stderr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nuclr/config/run_config.hpp"
#include "nuclr/data/dataset_io.hpp"
#include "nuclr/eval/evaluation.hpp"
#include "nuclr/eval/experiments.hpp"
#include "nuclr/model/checkpoint.hpp"
#include "nuclr/synth/generator.hpp"
#include "nuclr/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nuclr;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  require(in.good(), ErrorCode::IoError, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  require(out.good(), ErrorCode::IoError, "cannot write " + p.string());
  out << j.dump(2) << "\n";
}

/// Apply `section.key=value` overrides; values parse as JSON, else as strings.
void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    require(eq != std::string::npos && dot != std::string::npos && dot < eq, ErrorCode::ConfigError,
            "override '" + o + "' is not section.key=value");
    const std::string section = o.substr(0, dot), key = o.substr(dot + 1, eq - dot - 1), raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    if (!doc.contains(section)) doc[section] = json::object();
    doc[section][key] = value;
  }
}

bool has_key(const json& doc, const char* section, const char* key) {
  return doc.contains(section) && doc[section].is_object() && doc[section].contains(key);
}

/// Effective config: flags over file over defaults, NUCLR_SEED as the seed
/// fallback when neither sets one.
RunConfig load_config(const GlobalOptions& g, const std::function<void(json&)>& command_flags = {}) {
  json doc = g.config_path.empty() ? json::object() : read_json_file(g.config_path);
  require(doc.is_object(), ErrorCode::ConfigError, "config must be a JSON object");
  apply_overrides(doc, g.overrides);
  if (command_flags) command_flags(doc);
  std::optional<std::uint64_t> seed = g.seed;
  if (!seed) {
    const auto env = env_seed();
    if (env) {
      if (!has_key(doc, "trainer", "seed")) doc["trainer"]["seed"] = *env;
      if (!has_key(doc, "synth", "seed")) doc["synth"]["seed"] = *env;
      if (!has_key(doc, "eval", "seed")) doc["eval"]["seed"] = *env;
    }
  } else {
    doc["trainer"]["seed"] = *seed;
    doc["synth"]["seed"] = *seed;
    doc["eval"]["seed"] = *seed;
  }
  if (g.threads) doc["trainer"]["threads"] = *g.threads;
  return run_config_from_json(doc);
}

/// Match the encoder's patch size to the data; an explicit mismatch is an error.
void fit_encoder_to_data(RunConfig& cfg, const std::vector<Recording>& recs) {
  require(!recs.empty(), ErrorCode::ConfigError, "dataset holds no recordings");
  for (const auto& r : recs)
    require(r.modality == cfg.data.modality, ErrorCode::ConfigError,
            "session " + r.session_id + " is " + std::string(to_string(r.modality)) + " but data.modality is " +
                std::string(to_string(cfg.data.modality)));
  if (cfg.data.modality == Modality::Calcium) cfg.encoder.F = patch_features(cfg.data, data_sample_rate(recs));
}

json run_echo(const std::string& command, const RunConfig& cfg, const json& extra = json::object()) {
  json j = {{"command", command}, {"tool_version", NUCLR_VERSION}, {"config", to_json(cfg)}};
  j.update(extra);
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void cmd_synth(const GlobalOptions& g, const fs::path& out) {
  auto cfg = load_config(g);
  const auto recs = generate_dataset(cfg.synth);
  save_dataset(recs, out);
  write_json_file(out / "run.json", run_echo("synth", cfg, {{"sessions", recs.size()}}));
  std::cout << "wrote " << recs.size() << " sessions to " << out.string() << "\n";
}

void cmd_pretrain(const GlobalOptions& g, const fs::path& data, const fs::path& out, std::optional<std::size_t> steps) {
  auto cfg = load_config(g, [&](json& doc) {
    if (steps) doc["trainer"]["total_steps"] = *steps;
  });
  const auto recs = load_dataset(data);
  fit_encoder_to_data(cfg, recs);
  const auto sessions = pretrain_sessions_for(recs, cfg.eval);
  fs::create_directories(out);
  std::ofstream metrics(out / "metrics.jsonl");
  require(metrics.good(), ErrorCode::IoError, "cannot write " + (out / "metrics.jsonl").string());
  auto package = [&](std::size_t step, const ParamSet<float>& ps) {
    Checkpoint<float> c;
    c.encoder = cfg.encoder;
    c.step = step;
    c.pretrain_sessions = sessions;
    std::set<std::string> subjects;
    for (const auto& r : select_sessions(recs, sessions)) subjects.insert(r.subject_id);
    c.pretrain_subjects.assign(subjects.begin(), subjects.end());
    c.config = to_json(cfg);
    c.params = ps;
    return c;
  };
  TrainHooks<float> hooks{[&](const StepMetrics& m) {
                            auto j = to_json(m);
                            j.erase("wall_ms");
                            metrics << j.dump() << "\n";
                          },
                          [&](std::size_t step, const ParamSet<float>& ps) {
                            char name[32];
                            std::snprintf(name, sizeof(name), "step_%06zu.ckpt", step);
                            save_checkpoint(package(step, ps), out / name);
                          }};
  const auto ckpt = pretrain_checkpoint(recs, cfg, sessions, hooks);
  save_checkpoint(ckpt, out / "checkpoint.ckpt");
  const auto id = checkpoint_id(serialize_checkpoint(ckpt));
  write_json_file(out / "run.json",
                  run_echo("pretrain", cfg, {{"checkpoint", "checkpoint.ckpt"}, {"checkpoint_id", id},
                                             {"pretrain_sessions", sessions}, {"steps", ckpt.step}}));
  std::cout << "checkpoint " << id << " after " << ckpt.step << " steps\n";
}

json embeddings_json(const std::vector<NeuronEmbedding>& emb) {
  json rows = json::array();
  for (const auto& e : emb)
    rows.push_back({{"neuron_id", e.neuron_id},
                    {"session_id", e.session_id},
                    {"subject_id", e.subject_id},
                    {"group_id", e.group_id},
                    {"vector", e.vector}});
  return rows;
}

std::vector<NeuronEmbedding> embeddings_from_json(const json& j) {
  std::vector<NeuronEmbedding> out;
  try {
    const auto tap = j.at("layer_tap").get<std::size_t>();
    for (const auto& r : j.at("embeddings"))
      out.push_back({r.at("neuron_id").get<std::string>(), r.at("session_id").get<std::string>(),
                     r.at("subject_id").get<std::string>(), r.at("group_id").get<std::string>(),
                     r.at("vector").get<std::vector<double>>(), tap});
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("embeddings file: ") + e.what());
  }
  return out;
}

void cmd_embed(const GlobalOptions& g, const fs::path& ckpt_path, const fs::path& data, const fs::path& out,
               std::optional<std::size_t> tap) {
  const auto bytes = read_file_bytes(ckpt_path);
  const auto ckpt = deserialize_checkpoint<float>(bytes);
  // The checkpoint's own config governs preprocessing; flags may still adjust eval settings.
  json doc = ckpt.config;
  apply_overrides(doc, g.overrides);
  const auto cfg = run_config_from_json(doc);
  require(!tap || *tap <= ckpt.encoder.num_layers(), ErrorCode::ConfigError,
          "layer tap " + std::to_string(tap.value_or(0)) + " exceeds " + std::to_string(ckpt.encoder.num_layers()));
  const auto recs = load_dataset(data);
  std::vector<NeuronEmbedding> emb;
  for (const auto& r : recs) {
    require(r.modality == cfg.data.modality, ErrorCode::ConfigError,
            "session " + r.session_id + " does not match the checkpoint modality");
    auto e = extract_embeddings(ckpt.params, ckpt.encoder, cfg.data, r, tap);
    emb.insert(emb.end(), e.begin(), e.end());
  }
  json j = run_echo("embed", cfg,
                    {{"checkpoint_id", checkpoint_id(bytes)},
                     {"layer_tap", tap.value_or(ckpt.encoder.num_layers())},
                     {"pretrain_sessions", ckpt.pretrain_sessions},
                     {"pretrain_subjects", ckpt.pretrain_subjects},
                     {"embeddings", embeddings_json(emb)}});
  write_json_file(out, j);
  std::cout << "wrote " << emb.size() << " embeddings to " << out.string() << "\n";
}

struct ProbeFlags {
  std::optional<std::string> task, setting, train, test;
  std::optional<double> label_ratio;
};

void apply_probe_flags(json& doc, const ProbeFlags& f) {
  if (f.task) doc["eval"]["task"] = *f.task;
  if (f.setting) doc["eval"]["setting"] = *f.setting;
  if (f.train) doc["eval"]["train_sessions"] = split_list(*f.train);
  if (f.test) doc["eval"]["test_sessions"] = split_list(*f.test);
  if (f.label_ratio) doc["eval"]["label_ratio"] = *f.label_ratio;
}

void cmd_probe(const GlobalOptions& g, const fs::path& emb_path, const fs::path& data, const fs::path& out,
               const ProbeFlags& flags) {
  const json ej = read_json_file(emb_path);
  auto cfg = load_config(g, [&](json& doc) { apply_probe_flags(doc, flags); });
  const auto emb = embeddings_from_json(ej);
  const auto recs = load_dataset(data);
  std::vector<std::string> pre, pre_subj;
  try {
    pre = ej.at("pretrain_sessions").get<std::vector<std::string>>();
    pre_subj = ej.at("pretrain_subjects").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("embeddings file lacks the pretrain manifest: ") + e.what());
  }
  const auto split = cfg.eval.split();
  validate_split(split, recs, pre, pre_subj);
  auto rep = probe_embeddings(emb, recs, split, cfg.eval.task, cfg.eval.seed, cfg.eval.probe);
  rep.checkpoint_id = ej.value("checkpoint_id", "");
  rep.config = {{"run", to_json(cfg)}, {"embeddings", emb_path.string()}, {"tool_version", NUCLR_VERSION}};
  write_json_file(out, to_json(rep));
  std::printf("%s %s macro_f1 %.4f\n", to_string(rep.setting), to_string(rep.task), rep.macro_f1);
}

void cmd_ablate(const GlobalOptions& g, const fs::path& data, const fs::path& out, const std::string& variant,
                const ProbeFlags& flags) {
  auto cfg = load_config(g, [&](json& doc) { apply_probe_flags(doc, flags); });
  const auto recs = load_dataset(data);
  fit_encoder_to_data(cfg, recs);
  std::vector<Variant> variants;
  if (variant == "all") variants = {Variant::Full, Variant::NoSpatial, Variant::NoNeuronDropout};
  else variants = {parse_variant(variant)};
  // Validate the split before any pretraining starts.
  validate_split(cfg.eval.split(), recs, pretrain_sessions_for(recs, cfg.eval), {});
  json reports = json::array();
  for (Variant v : variants) {
    const auto r = run_ablation(recs, cfg, v, {cfg.eval.task});
    for (const auto& rep : r.reports) {
      reports.push_back(to_json(rep));
      std::printf("%s %s macro_f1 %.4f\n", to_string(v), to_string(rep.task), rep.macro_f1);
    }
  }
  fs::create_directories(out);
  write_json_file(out / "ablation.json", {{"tool_version", NUCLR_VERSION}, {"reports", reports}});
  write_json_file(out / "run.json", run_echo("ablate", cfg, {{"variant", variant}}));
}

void cmd_sweep(const GlobalOptions& g, const fs::path& data, const fs::path& out, const std::string& bins_arg,
               std::optional<std::string> cache, const ProbeFlags& flags) {
  auto cfg = load_config(g, [&](json& doc) { apply_probe_flags(doc, flags); });
  const auto recs = load_dataset(data);
  fit_encoder_to_data(cfg, recs);
  std::vector<double> bins;
  for (const auto& b : split_list(bins_arg)) {
    try {
      bins.push_back(std::stod(b));
    } catch (const std::exception&) {
      fail(ErrorCode::ConfigError, "bad bin size '" + b + "'");
    }
  }
  validate_split(cfg.eval.split(), recs, pretrain_sessions_for(recs, cfg.eval), {});
  const fs::path cache_dir = cache ? fs::path(*cache) : out / "cache";
  const auto entries = sweep_bin_size(recs, bins, cfg, cache_dir);
  json per_bin = json::array(), curve = json::array();
  for (const auto& e : entries) {
    per_bin.push_back(to_json(e.report));
    json per_class = json::object();
    for (std::size_t c = 0; c < e.report.classes.size(); ++c) per_class[e.report.classes[c]] = e.report.per_class_f1[c];
    curve.push_back({{"bin_size_s", e.bin_size_s},
                     {"macro_f1", e.report.macro_f1},
                     {"per_class_f1", per_class},
                     {"cache_hit", e.cache_hit}});
    std::printf("bin %.4g s macro_f1 %.4f%s\n", e.bin_size_s, e.report.macro_f1, e.cache_hit ? " (cached)" : "");
  }
  fs::create_directories(out);
  write_json_file(out / "sweep.json", {{"tool_version", NUCLR_VERSION}, {"curve", curve}, {"reports", per_bin}});
  write_json_file(out / "run.json", run_echo("sweep-binsize", cfg, {{"bins", bins}}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nuclr: contrastive neuron identity representations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NUCLR_VERSION);
  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key, e.g. trainer.total_steps=100");
  app.add_option("--seed", g.seed, "Seed for synthesis, training and probes (falls back to NUCLR_SEED)");
  app.add_option("--threads", g.threads, "Worker threads; 1 gives bitwise-reproducible runs")->check(CLI::PositiveNumber);

  std::string out, data, ckpt, emb, variant = "full", bins;
  std::optional<std::size_t> steps, tap;
  std::optional<std::string> cache;
  ProbeFlags pf;
  auto add_probe_flags = [&](CLI::App* s) {
    s->add_option("--task", pf.task, "cell_type or region");
    s->add_option("--setting", pf.setting, "transductive, transductive_zero_shot or inductive_zero_shot");
    s->add_option("--train-sessions", pf.train, "Comma-separated probe-train sessions");
    s->add_option("--test-sessions", pf.test, "Comma-separated test sessions");
    s->add_option("--label-ratio", pf.label_ratio, "Fraction of probe-train labels kept");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out, "Output dataset directory")->required();

  auto* pre = app.add_subcommand("pretrain", "Pretrain an encoder");
  pre->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", out, "Run directory")->required();
  pre->add_option("--steps", steps, "Training steps (0 writes the initialization)");

  auto* embed = app.add_subcommand("embed", "Extract frozen neuron embeddings");
  embed->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  embed->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  embed->add_option("--out", out, "Embeddings JSON file")->required();
  embed->add_option("--layer-tap", tap, "Encoder layer to read out (default: encoder output)");

  auto* probe = app.add_subcommand("probe", "Fit and score a linear probe");
  probe->add_option("--embeddings", emb, "Embeddings JSON file")->required()->check(CLI::ExistingFile);
  probe->add_option("--data", data, "Dataset directory with labels")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--out", out, "Report JSON file")->required();
  add_probe_flags(probe);

  auto* ablate = app.add_subcommand("ablate", "Pretrain and probe an architecture variant");
  ablate->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", out, "Run directory")->required();
  ablate->add_option("--variant", variant, "full, no_spatial, no_neuron_dropout or all");
  add_probe_flags(ablate);

  auto* sweep = app.add_subcommand("sweep-binsize", "Pretrain and probe across bin sizes");
  sweep->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--out", out, "Run directory")->required();
  sweep->add_option("--bins", bins, "Comma-separated bin sizes in seconds")->required();
  sweep->add_option("--cache", cache, "Checkpoint cache directory (default <out>/cache)");
  add_probe_flags(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc != 0) std::cerr << "error_code: UsageError\n";
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) cmd_synth(g, out);
    else if (*pre) cmd_pretrain(g, data, out, steps);
    else if (*embed) cmd_embed(g, ckpt, data, out, tap);
    else if (*probe) cmd_probe(g, emb, data, out, pf);
    else if (*ablate) cmd_ablate(g, data, out, variant, pf);
    else if (*sweep) cmd_sweep(g, data, out, bins, cache, pf);
  } catch (const Error& e) {
    std::cerr << "error: " << e.message() << "\nerror_code: " << to_string(e.code()) << "\n";
    return is_validation_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\nerror_code: Internal\n";
    return 2;
  }
  return 0;
}
