#pragma once

// Command-line front end. execute() is the whole program minus process
// plumbing, so tests drive it in-process.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "veille/augment.hpp"
#include "veille/config.hpp"
#include "veille/corpus.hpp"
#include "veille/error.hpp"
#include "veille/evalkit.hpp"
#include "veille/fewshot.hpp"
#include "veille/llmgate.hpp"
#include "veille/pipelines.hpp"
#include "veille/promptkit.hpp"

namespace veille {

namespace cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kConfig = 2 };

struct Flags {
  std::string config;
  std::string mode;
  std::optional<std::size_t> k;
  std::string templates;
  std::string merge_policy;
  std::string match;
  std::optional<std::size_t> jobs;
  std::string seed_corpus;
  std::string out;
  std::string input;
  std::string pool;
  std::string entities;
  std::string report;
  std::string gold;
  std::string pred;
  std::string level = "entity";
  std::string inventory;
  std::optional<std::size_t> variants;
  std::vector<std::string> reports;
};

inline std::filesystem::path require_file(const std::string& path, std::string_view flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError(std::string(flag) + ": file not found: " + path);
  }
  return path;
}

inline Corpus read_corpus(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return load_corpus(in);
  } catch (const ValidationError& err) {
    throw ValidationError(p.string() + ": " + err.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& content) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << content;
  if (!out) throw ConfigError("failed writing " + p.string());
}

/// out.json -> out.report.json
inline std::filesystem::path sidecar_path(const std::filesystem::path& out, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  auto p = out;
  p.replace_extension();
  p += ".report.json";
  return p;
}

inline std::string usage_table(const UsageReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %10s %10s %9s %12s %12s\n", "stage", "input", "output", "requests",
                "wall_ms", "cost");
  out += buf;
  auto row = [&](const std::string& name, const StageUsage& s) {
    std::snprintf(buf, sizeof buf, "%-10s %10llu %10llu %9llu %12lld %12.6f\n", name.c_str(),
                  static_cast<unsigned long long>(s.input_tokens), static_cast<unsigned long long>(s.output_tokens),
                  static_cast<unsigned long long>(s.requests), static_cast<long long>(s.wall_time.count()), s.cost);
    out += buf;
  };
  for (const auto& [name, s] : r.stages) row(name, s);
  row("total", r.total);
  return out;
}

struct Session {
  CliConfig cfg;
  TemplateSet templates;
  std::unique_ptr<Gateway> gateway;
};

inline CliConfig resolve_config(const Flags& f) {
  CliConfig cfg = f.config.empty() ? default_config() : load_config(require_file(f.config, "--config"));
  apply_environment(cfg);
  if (!f.mode.empty()) cfg.gateway.mode = parse_gateway_mode(f.mode);
  if (f.k) cfg.run.fewshot.k = *f.k;
  if (!f.templates.empty()) cfg.paths.templates = f.templates;
  if (!f.merge_policy.empty()) cfg.run.merge = parse_merge_policy(f.merge_policy);
  if (!f.match.empty()) cfg.match = parse_match_mode(f.match);
  if (!f.pool.empty()) cfg.paths.pool = f.pool;
  if (f.jobs) {
    if (*f.jobs == 0) throw ConfigError("--jobs must be positive");
    cfg.run.jobs = cfg.augment.jobs = *f.jobs;
  }
  if (f.variants) cfg.augment.variants_per_seed = *f.variants;
  if (!f.inventory.empty()) {
    if (f.inventory == "present") cfg.inventory = LabelInventory::present;
    else if (f.inventory == "fixed") cfg.inventory = LabelInventory::fixed;
    else throw ConfigError("--inventory must be 'present' or 'fixed'");
  }
  return cfg;
}

inline Session open_session(const Flags& f) {
  Session s;
  s.cfg = resolve_config(f);
  s.templates = s.cfg.paths.templates.empty() ? TemplateSet::defaults() : TemplateSet::load(s.cfg.paths.templates);
  if (s.cfg.gateway.mode == GatewayMode::replay) {
    if (!std::filesystem::is_directory(s.cfg.gateway.fixtures)) {
      throw ConfigError("fixture store not found: " + s.cfg.gateway.fixtures.string());
    }
  } else if (s.cfg.gateway.api_key.empty()) {
    throw ConfigError(std::string(to_string(s.cfg.gateway.mode)) + " mode needs EXTRACT_API_KEY in the environment");
  }
  s.gateway = std::make_unique<Gateway>(s.cfg.gateway);
  return s;
}

inline void finish_run(const Flags& f, const RunReport& rep, const Gateway& gw, nlohmann::ordered_json& summary,
                       std::ostream& err) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const std::filesystem::path out_path = f.out;
  const auto side = sidecar_path(out_path, f.report);
  write_text(out_path, dump_corpus(rep.output));
  write_text(side, report_json(rep).dump(2) + "\n");
  const auto t = totals(rep);
  summary["documents"] = t.documents;
  summary["entities"] = t.entities;
  summary["events"] = t.events;
  summary["rejections"] = t.rejections;
  summary["violations"] = t.violations;
  summary["warnings"] = t.warnings;
  summary["requests"] = rep.usage.total.requests;
  summary["live_calls"] = gw.live_calls();
  summary["out"] = out_path.string();
  summary["report"] = side.string();
  err << rep.stage << ": " << t.documents << " documents, " << t.entities << " entities, " << t.events
      << " events, " << t.rejections << " rejected spans, " << t.violations << " event violations\n";
  err << usage_table(rep.usage);
}

inline std::unique_ptr<ExampleIndex> open_pool(const Session& s, Corpus& storage) {
  storage = read_corpus(require_file(s.cfg.paths.pool.string(), "--pool"));
  return std::make_unique<ExampleIndex>(storage, make_embedder(s.cfg));
}

inline void cmd_ner(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  auto s = open_session(f);
  const Corpus input = read_corpus(require_file(f.input, "--input"));
  Corpus pool;
  auto index = open_pool(s, pool);
  auto rep = run_ner_corpus(input, *index, s.cfg.run, s.templates, *s.gateway);
  finish_run(f, rep, *s.gateway, summary, err);
}

inline void cmd_verify(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  auto s = open_session(f);
  const Corpus first_pass = read_corpus(require_file(f.input, "--input"));
  auto rep = run_verify_corpus(first_pass, s.cfg.run, s.templates, *s.gateway);
  std::size_t added = 0, relabeled = 0, dropped = 0;
  for (const auto& d : rep.documents) {
    if (!d.diff) continue;
    added += d.diff->added.size();
    relabeled += d.diff->relabeled.size();
    dropped += d.diff->dropped.size();
  }
  summary["merge_policy"] = to_string(s.cfg.run.merge);
  summary["added"] = added;
  summary["relabeled"] = relabeled;
  summary["dropped"] = dropped;
  finish_run(f, rep, *s.gateway, summary, err);
}

inline void cmd_events(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  const auto entities_path = require_file(f.entities, "--entities");
  auto s = open_session(f);
  const Corpus input = read_corpus(entities_path);
  Corpus pool;
  auto index = open_pool(s, pool);
  auto rep = run_events_corpus(input, *index, s.cfg.run, s.templates, *s.gateway);
  finish_run(f, rep, *s.gateway, summary, err);
}

inline void cmd_augment(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  auto s = open_session(f);
  const Corpus seeds = read_corpus(require_file(f.seed_corpus, "--seed-corpus"));
  if (f.out.empty()) throw ConfigError("--out is required");
  auto rep = augment_corpus(seeds, s.cfg.augment, s.templates, *s.gateway);
  const std::filesystem::path out_path = f.out;
  const auto side = sidecar_path(out_path, f.report);
  write_text(out_path, dump_corpus(rep.accepted));
  ojson rejections = ojson::array();
  for (const auto& r : rep.rejections) rejections.push_back(to_json(r));
  const auto usage = s.gateway->usage();
  write_text(side, ojson{{"stage", "augment"}, {"rejections", rejections}, {"usage", to_json(usage)}}.dump(2) + "\n");
  summary["seeds"] = seeds.documents.size();
  summary["attempts"] = rep.attempts;
  summary["accepted"] = rep.accepted.documents.size();
  summary["rejected"] = rep.rejections.size();
  summary["live_calls"] = s.gateway->live_calls();
  summary["out"] = out_path.string();
  summary["report"] = side.string();
  err << "augment: " << seeds.documents.size() << " seeds, " << rep.accepted.documents.size() << " accepted, "
      << rep.rejections.size() << " rejected\n";
  err << stats_table(corpus_stats(rep.accepted));
  err << usage_table(usage);
}

inline void cmd_stats(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  const Corpus c = read_corpus(require_file(f.input, "--input"));
  const auto st = corpus_stats(c);
  summary["stats"] = to_json(st);
  if (!f.out.empty()) write_text(f.out, to_json(st).dump(2) + "\n");
  err << stats_table(st);
}

inline void cmd_score(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  const CliConfig cfg = resolve_config(f);
  const Corpus gold = read_corpus(require_file(f.gold, "--gold"));
  const Corpus pred = read_corpus(require_file(f.pred, "--pred"));
  const Level level = parse_level(f.level);
  MetricsReport r;
  switch (level) {
    case Level::entity: r = score_entities(gold, pred, cfg.match, cfg.inventory); break;
    case Level::event: r = score_events(gold, pred, cfg.match); break;
    case Level::document: r = score_documents(gold, pred, cfg.match); break;
  }
  const auto j = to_json(r);
  if (!f.out.empty()) write_text(f.out, j.dump(2) + "\n");
  summary["level"] = j["level"];
  summary["match"] = j["match"];
  summary["micro"] = j["micro"];
  summary["macro"] = j["macro"];
  summary["counts"] = j["counts"];
  err << metrics_table(r);
}

inline void cmd_report_usage(const Flags& f, nlohmann::ordered_json& summary, std::ostream& err) {
  const CliConfig cfg = resolve_config(f);
  if (f.reports.empty()) throw ConfigError("--input is required");
  std::map<std::string, StageUsage> stages;
  for (const auto& path : f.reports) {
    std::ifstream in(require_file(path, "--input"), std::ios::binary);
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& [name, s] : stages_from_json(j.at("usage"))) {
        auto& acc = stages[name];
        acc.input_tokens += s.input_tokens;
        acc.output_tokens += s.output_tokens;
        acc.requests += s.requests;
        acc.wall_time += s.wall_time;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ": not a run report: " + e.what());
    }
  }
  const auto rep = report_usage(stages, cfg.gateway.prices);
  summary["usage"] = to_json(rep);
  if (!f.out.empty()) write_text(f.out, to_json(rep).dump(2) + "\n");
  err << usage_table(rep);
}

}  // namespace cli

/// Runs one command line (without the program name). Returns the exit status.
inline int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli;
  CLI::App app{"Health-event entity and event extraction toolkit", "veille"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "TOML configuration file");
    sub->add_option("--mode", f.mode, "Gateway mode")->check(CLI::IsMember({"live", "replay", "record"}));
    sub->add_option("--k", f.k, "Few-shot examples per prompt");
    sub->add_option("--template", f.templates, "Directory of prompt templates overriding the defaults");
    sub->add_option("--jobs", f.jobs, "Concurrent documents");
    sub->add_option("--out", f.out, "Output file");
    sub->add_option("--report", f.report, "Sidecar report file (default: <out>.report.json)");
  };

  auto* ner = app.add_subcommand("ner", "Tag entities with few-shot prompting");
  common(ner);
  ner->add_option("--input", f.input, "Corpus to annotate")->required();
  ner->add_option("--pool", f.pool, "Annotated example pool");

  auto* verify = app.add_subcommand("verify", "Review first-pass entities and merge the corrections");
  common(verify);
  verify->add_option("--input", f.input, "First-pass prediction corpus")->required();
  verify->add_option("--merge-policy", f.merge_policy, "union or verifier")
      ->check(CLI::IsMember({"union", "verifier"}));

  auto* events = app.add_subcommand("events", "Extract events over anchored entities");
  common(events);
  events->add_option("--entities", f.entities, "Corpus with entities")->required();
  events->add_option("--pool", f.pool, "Annotated example pool");

  auto* augment = app.add_subcommand("augment", "Generate annotated variants of seed documents");
  common(augment);
  augment->add_option("--seed-corpus", f.seed_corpus, "Seed documents")->required();
  augment->add_option("--variants", f.variants, "Variants per seed");

  auto* stats = app.add_subcommand("stats", "Entity counts per label");
  stats->add_option("--input", f.input, "Corpus")->required();
  stats->add_option("--out", f.out, "Write the counts as JSON");

  auto* score = app.add_subcommand("score", "Score predictions against gold");
  score->add_option("--config", f.config, "TOML configuration file");
  score->add_option("--gold", f.gold, "Gold corpus")->required();
  score->add_option("--pred", f.pred, "Predicted corpus")->required();
  score->add_option("--level", f.level, "entity, event or document")
      ->check(CLI::IsMember({"entity", "event", "document"}));
  score->add_option("--match", f.match, "strict or relaxed")->check(CLI::IsMember({"strict", "relaxed"}));
  score->add_option("--inventory", f.inventory, "Macro average over present labels or all labels")
      ->check(CLI::IsMember({"present", "fixed"}));
  score->add_option("--out", f.out, "Write the report as JSON");

  auto* usage = app.add_subcommand("report-usage", "Token, time and cost totals from run reports");
  usage->add_option("--config", f.config, "TOML configuration file (for prices)");
  usage->add_option("--input", f.reports, "Run report files")->required();
  usage->add_option("--out", f.out, "Write the usage report as JSON");

  std::vector<const char*> argv{"veille"};
  for (const auto& a : args) argv.push_back(a.c_str());

  nlohmann::ordered_json summary;
  auto fail = [&](int code, const std::string& msg) {
    err << "error: " << msg << "\n";
    summary["status"] = "error";
    summary["exit_code"] = code;
    summary["error"] = msg;
    out << summary.dump() << "\n";
    return code;
  };

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    summary["command"] = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
    return fail(kConfig, e.what());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  summary["command"] = command;
  try {
    summary["status"] = "ok";
    if (command == "ner") cmd_ner(f, summary, err);
    else if (command == "verify") cmd_verify(f, summary, err);
    else if (command == "events") cmd_events(f, summary, err);
    else if (command == "augment") cmd_augment(f, summary, err);
    else if (command == "stats") cmd_stats(f, summary, err);
    else if (command == "score") cmd_score(f, summary, err);
    else cmd_report_usage(f, summary, err);
  } catch (const ValidationError& e) {
    return fail(kValidation, e.what());
  } catch (const Error& e) {
    return fail(kConfig, e.what());
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  out << summary.dump() << "\n";
  return kOk;
}

}  // namespace veille
