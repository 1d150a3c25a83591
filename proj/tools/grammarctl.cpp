// Copyright 2026 The grammarctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <csignal>
#include <iostream>
#include <mutex>
#include <thread>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli_support.hpp"

#include "grammarctl/analysis/cooccurrence.hpp"
#include "grammarctl/analysis/intervention.hpp"
#include "grammarctl/detector/curation.hpp"
#include "grammarctl/detector/evaluation.hpp"
#include "grammarctl/detector/training.hpp"
#include "grammarctl/eval/report.hpp"
#include "grammarctl/eval/suites.hpp"
#include "grammarctl/service/config.hpp"
#include "grammarctl/service/server.hpp"

namespace gc = grammarctl;
using namespace grammarctl::cli;

namespace {

struct Globals {
  std::string config;
  std::string out = "runs";
  std::string run_id;
  std::uint64_t seed = 1;
  bool quiet = false;
  std::vector<std::string> argv;
};

struct Context {
  const Globals& g;
  const json& cfg;
  RunDir* run;  // null for serve

  void emit(const std::string& table_name, const std::string& table) const {
    run->write(table_name, table);
    if (!g.quiet) std::cout << table;
  }
};

struct Command {
  std::string name;
  std::unique_ptr<Binder> binder;
  std::function<void(const json&)> settle = [](const json&) {};
  std::function<void(Context&)> run;
  bool run_dir = true;
};

using Commands = std::vector<std::unique_ptr<Command>>;

Command& add(Commands& all, CLI::App* parent, const std::string& name, const std::string& full,
             const std::string& section, const std::string& help) {
  auto* sub = parent->add_subcommand(name, help);
  auto c = std::make_unique<Command>();
  c->name = full;
  c->binder = std::make_unique<Binder>(sub, section);
  all.push_back(std::move(c));
  return *all.back();
}

std::string skills_key() { return "egp.skills"; }

std::vector<std::string> read_sentences(const std::string& sentences_file, const std::string& corpus_file) {
  std::vector<std::string> out;
  if (!sentences_file.empty()) {
    std::ifstream in(sentences_file);
    if (!in) throw gc::LookupError("cannot open " + sentences_file);
    for (std::string line; std::getline(in, line);)
      if (!gc::text::trim(line).empty()) out.emplace_back(gc::text::trim(line));
  } else {
    for (const auto& d : load_corpus(corpus_file))
      for (const auto& t : d.turns)
        for (auto& s : gc::text::split_sentences(t.text)) out.push_back(std::move(s));
  }
  if (out.empty()) throw gc::ValidationError("no sentences to work on");
  return out;
}

std::map<gc::SkillId, std::size_t> turn_counts(std::span<const gc::corpus::Dialogue> dialogues, std::size_t* labeled) {
  std::map<gc::SkillId, std::size_t> per;
  std::size_t n = 0;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns)
      if (t.skills) {
        ++n;
        for (auto id : *t.skills) ++per[id];
      }
  if (labeled) *labeled = n;
  return per;
}

json counts_json(const std::map<gc::SkillId, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

// ----------------------------------------------------------------- egp, corpus

void register_egp(CLI::App& app, Commands& all) {
  auto* egp = app.add_subcommand("egp", "grammar skill repository");
  egp->require_subcommand(1);
  auto input = std::make_shared<std::string>();
  auto& c = add(all, egp, "import", "egp import", "egp", "validate a skill table and write the normalized copy");
  c.binder->option("--input", *input, "input", "skill table (TSV with the standard header)");
  c.run = [input](Context& ctx) {
    const auto repo = gc::egp::SkillRepository::load(need(*input, "--input"));
    std::ostringstream tsv;
    repo.write_tsv(tsv);
    ctx.run->write("skills.tsv", tsv.str());
    std::map<std::string, std::map<std::string, std::size_t>> grid;
    for (const auto& s : repo.skills()) ++grid[s.subcategory][std::string(gc::to_string(s.level))];
    json by = json::object();
    std::vector<std::vector<std::string>> rows;
    for (const auto& [sub, levels] : grid) {
      by[sub] = levels;
      std::vector<std::string> row{sub};
      for (auto l : gc::kAllLevels) {
        auto it = levels.find(std::string(gc::to_string(l)));
        row.push_back(std::to_string(it == levels.end() ? 0 : it->second));
      }
      rows.push_back(row);
    }
    ctx.run->write_json("summary.json", {{"skills", repo.size()}, {"by_subcategory", by}});
    ctx.emit("table.txt", render_rows({"subcategory", "A1", "A2", "B1", "B2", "C1", "C2"}, rows));
  };
}

void register_corpus(CLI::App& app, Commands& all) {
  auto* corpus = app.add_subcommand("corpus", "dialogue corpora");
  corpus->require_subcommand(1);

  {
    struct O {
      std::string source, input;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, corpus, "ingest", "corpus ingest", "corpus", "normalize a raw corpus into dialogue JSON lines");
    c.binder->option("--source", o->source, "source", "dailydialog | dialogsum | wow | topicalchat | cmudog | normalized");
    c.binder->option("--input", o->input, "input", "raw corpus file or directory");
    c.run = [o](Context& ctx) {
      auto res = gc::corpus::ingest(gc::corpus::parse_source(need(o->source, "--source")), need(o->input, "--input"));
      std::ostringstream out;
      gc::corpus::write_jsonl(out, res.dialogues);
      ctx.run->write("dialogues.jsonl", out.str());
      const auto st = gc::corpus::compute_stats(res.dialogues);
      ctx.run->write_json("ingest.json", {{"source", o->source},
                                          {"dialogues", res.dialogues.size()},
                                          {"skipped", res.skipped},
                                          {"warnings", res.warnings}});
      ctx.emit("table.txt", render_rows({"source", "dialogues", "skipped", "mean turns", "mean words/turn"},
                                        {{o->source, std::to_string(st.dialogues), std::to_string(res.skipped),
                                          fixed(st.mean_turns, 2), fixed(st.mean_words_per_turn, 2)}}));
    };
  }
  {
    struct O {
      std::string corpus;
      DetectorOptions det;
      std::size_t threads = 0;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, corpus, "label", "corpus label", "corpus", "detect skills in every turn");
    c.binder->option("--corpus", o->corpus, "corpus", "dialogue JSON lines");
    c.binder->option("--threads", o->threads, "threads", "worker threads (0: all cores)");
    o->det.bind(*c.binder);
    c.settle = [o](const json& cfg) { o->det.settle(cfg); };
    c.run = [o](Context& ctx) {
      auto dialogues = load_corpus(o->corpus);
      const auto dets = load_detectors(o->det);
      if (dets.empty()) throw gc::ValidationError("no detectors: give --detectors or --patterns");
      gc::corpus::LabelOptions lo;
      lo.threads = o->threads;
      lo.checkpoint = *ctx.run / "partial.jsonl";
      auto labeled = gc::corpus::label_corpus(std::move(dialogues), dets, lo);
      std::ostringstream out;
      gc::corpus::write_jsonl(out, labeled);
      ctx.run->write("labeled.jsonl", out.str());
      std::size_t turns = 0;
      const auto per = turn_counts(labeled, &turns);
      ctx.run->write_json("label.json", {{"dialogues", labeled.size()},
                                         {"turns", turns},
                                         {"detectors", dets.size()},
                                         {"provenance", detector_provenance(o->det)},
                                         {"turns_per_skill", counts_json(per)}});
      std::vector<std::vector<std::string>> rows;
      for (const auto& [id, n] : per) rows.push_back({std::to_string(id), std::to_string(n)});
      ctx.emit("table.txt", render_rows({"skill", "turns"}, rows));
    };
  }
  {
    auto path = std::make_shared<std::string>();
    auto& c = add(all, corpus, "stats", "corpus stats", "corpus", "corpus size and skill counts");
    c.binder->option("--corpus", *path, "corpus", "dialogue JSON lines");
    c.run = [path](Context& ctx) {
      const auto d = load_corpus(*path);
      const auto st = gc::corpus::compute_stats(d);
      std::size_t labeled = 0;
      const auto per = turn_counts(d, &labeled);
      ctx.run->write_json("stats.json", {{"dialogues", st.dialogues},
                                         {"mean_turns", st.mean_turns},
                                         {"mean_words_per_turn", st.mean_words_per_turn},
                                         {"labeled_turns", labeled},
                                         {"turns_per_skill", counts_json(per)}});
      ctx.emit("table.txt", render_rows({"dialogues", "mean turns", "mean words/turn", "labeled turns", "skills seen"},
                                        {{std::to_string(st.dialogues), fixed(st.mean_turns, 2),
                                          fixed(st.mean_words_per_turn, 2), std::to_string(labeled),
                                          std::to_string(per.size())}}));
    };
  }
}

// ----------------------------------------------------------------- detector

void register_detector(CLI::App& app, Commands& all) {
  auto* det = app.add_subcommand("detector", "grammar skill detectors");
  det->require_subcommand(1);

  {
    struct O {
      std::vector<std::string> sets;
      std::string kind = "detector";
      std::size_t folds = 5, epochs = 20, threads = 0;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, det, "train", "detector train", "detector", "train detector heads or future discriminators");
    c.binder->option("--sets", o->sets, "training_sets", "training set JSON files, one per skill");
    c.binder->option("--kind", o->kind, "kind", "detector | discriminator")->check(CLI::IsMember({"detector", "discriminator"}));
    c.binder->option("--folds", o->folds, "folds", "cross-validation folds");
    c.binder->option("--epochs", o->epochs, "epochs", "maximum epochs");
    c.binder->option("--threads", o->threads, "threads", "parallel skills (0: all cores)");
    c.run = [o](Context& ctx) {
      std::vector<gc::detector::SkillTrainingSet> sets;
      for (const auto& f : need(o->sets, "--sets")) sets.push_back(gc::detector::load_training_set(f));
      gc::detector::TrainOptions opt;
      opt.folds = o->folds;
      opt.max_epochs = o->epochs;
      opt.seed = ctx.g.seed;
      const auto encoder = gc::detector::HashingEncoder::shared();
      std::vector<std::vector<std::string>> rows;
      json report = json::array();
      if (o->kind == "discriminator") {
        gc::control::DiscriminatorSet out;
        for (const auto& s : sets) {
          std::size_t instances = 0;
          out[s.skill] = gc::control::train_future_discriminator(s, encoder, opt, &instances);
          report.push_back({{"skill_id", s.skill}, {"prefix_instances", instances}});
          rows.push_back({std::to_string(s.skill), std::to_string(s.positives.size()), std::to_string(s.negatives.size()),
                          std::to_string(instances)});
        }
        gc::control::save_discriminators(*ctx.run / "discriminators", out);
        ctx.run->note("discriminators/");
        ctx.run->write_json("train.json", report);
        ctx.emit("table.txt", render_rows({"skill", "positives", "negatives", "prefix instances"}, rows));
        return;
      }
      const auto reports = gc::detector::train_detectors(sets, encoder, opt, o->threads);
      gc::detector::ModelSet models;
      for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        models[sets[i].skill] = r.model;
        report.push_back({{"skill_id", sets[i].skill},
                          {"validation_precision", gc::detector::optional_json(r.validation_precision)},
                          {"validation_recall", gc::detector::optional_json(r.validation_recall)},
                          {"epochs", r.epochs},
                          {"provenance", gc::detector::to_string(sets[i].provenance)}});
        rows.push_back({std::to_string(sets[i].skill), std::to_string(sets[i].positives.size()),
                        std::to_string(sets[i].negatives.size()), fixed(r.validation_precision),
                        fixed(r.validation_recall)});
      }
      gc::detector::save_bundle(*ctx.run / "bundle", models);
      ctx.run->note("bundle/");
      ctx.run->write_json("train.json", report);
      ctx.emit("table.txt", render_rows({"skill", "positives", "negatives", "val precision", "val recall"}, rows));
    };
  }
  {
    struct O {
      std::string skills, sentences, corpus, annotations, mode = "manual", oracle;
      gc::SkillId skill = 0;
      std::vector<std::string> regexes;
      std::size_t iterations = 30;
      ModelOptions model;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, det, "curate", "detector curate", "detector", "build a training set by iterative annotation");
    c.binder->option("--skill", o->skill, "skill", "skill id")->required();
    c.binder->option("--skills", o->skills, skills_key(), "skill table (TSV)");
    c.binder->option("--sentences", o->sentences, "sentences", "candidate sentences, one per line");
    c.binder->option("--corpus", o->corpus, "corpus", "dialogue JSON lines (alternative to --sentences)");
    c.binder->option("--regex", o->regexes, "regexes", "candidate regexes (manual mode)");
    c.binder->option("--annotations", o->annotations, "annotations", "existing annotation JSON lines");
    c.binder->option("--oracle", o->oracle, "oracle", "regex acting as the annotator (synthetic skills)");
    c.binder->option("--mode", o->mode, "mode", "manual | automatized")->check(CLI::IsMember({"manual", "automatized"}));
    c.binder->option("--iterations", o->iterations, "iterations", "maximum rounds");
    o->model.bind(*c.binder);
    c.settle = [o](const json& cfg) { o->model.settle(cfg); };
    c.run = [o](Context& ctx) {
      const auto sentences = read_sentences(o->sentences, o->corpus);
      const auto store_path = *ctx.run / "annotations.jsonl";
      if (!o->annotations.empty()) {
        if (!fs::exists(o->annotations)) throw gc::LookupError("cannot open " + o->annotations);
        fs::copy_file(o->annotations, store_path, fs::copy_options::overwrite_existing);
      }
      gc::detector::AnnotationStore store(store_path);
      ctx.run->note("annotations.jsonl");
      gc::detector::CurationOptions opt;
      opt.max_iterations = o->iterations;
      opt.seed = ctx.g.seed;
      opt.train.seed = ctx.g.seed;
      const auto encoder = gc::detector::HashingEncoder::shared();
      gc::detector::CurationResult result;
      std::vector<std::string> regexes = o->regexes;
      if (o->mode == "manual") {
        std::regex oracle;
        if (!o->oracle.empty()) oracle = std::regex(o->oracle, std::regex::ECMAScript | std::regex::icase);
        gc::detector::FunctionAnnotator source(
            o->oracle.empty() ? "file" : "regex-oracle",
            [&](const std::string& s, gc::SkillId) { return std::regex_search(s, oracle); },
            o->oracle.empty() ? std::optional<std::size_t>(0) : std::nullopt);
        result = gc::detector::curate_manual(o->skill, sentences, need(regexes, "--regex"), store, source, encoder, opt);
      } else {
        const auto repo = load_skills(o->skills);
        ctx.run->sidecar("audit.jsonl");
        ModelHub hub(o->model, repo, *ctx.run / "audit.jsonl");
        gc::detector::AutomatizedOptions ao;
        ao.loop = opt;
        auto r = gc::detector::curate_automatized(repo.at(o->skill), *hub.chat(), sentences, store, encoder, ao);
        result = std::move(r.curation);
        regexes = std::move(r.regexes);
      }
      gc::detector::save_training_set(*ctx.run / "training_set.json", result.set);
      ctx.run->note("training_set.json");
      ctx.run->write_json("curation.json", gc::detector::to_json(result, regexes));
      ctx.emit("table.txt",
               render_rows({"skill", "status", "iterations", "best precision", "positives", "negatives"},
                           {{std::to_string(o->skill), std::string(gc::detector::to_string(result.status)),
                             std::to_string(result.iterations), fixed(result.best_precision),
                             std::to_string(result.set.positives.size()), std::to_string(result.set.negatives.size())}}));
    };
  }
  {
    struct O {
      std::string sentences, corpus, annotations, oracle_patterns, skill_ids;
      std::size_t sample = gc::detector::kTestSample;
      DetectorOptions det;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, det, "eval", "detector eval", "detector", "test precision on a held-out corpus");
    c.binder->option("--sentences", o->sentences, "sentences", "test sentences, one per line");
    c.binder->option("--corpus", o->corpus, "test_corpus", "dialogue JSON lines (alternative to --sentences)");
    c.binder->option("--annotations", o->annotations, "annotations", "annotation JSON lines");
    c.binder->option("--oracle-patterns", o->oracle_patterns, "oracle_patterns", "JSON skill id -> regex annotators");
    c.binder->option("--only", o->skill_ids, "only", "comma-separated skill ids to evaluate");
    c.binder->option("--sample", o->sample, "sample", "detections judged per skill");
    o->det.bind(*c.binder);
    c.settle = [o](const json& cfg) { o->det.settle(cfg); };
    c.run = [o](Context& ctx) {
      gc::detector::ModelSet models;
      const auto dets = load_detectors(o->det, &models);
      if (dets.empty()) throw gc::ValidationError("no detectors: give --detectors or --patterns");
      const auto sentences = read_sentences(o->sentences, o->corpus);
      const auto store_path = *ctx.run / "annotations.jsonl";
      if (!o->annotations.empty()) {
        if (!fs::exists(o->annotations)) throw gc::LookupError("cannot open " + o->annotations);
        fs::copy_file(o->annotations, store_path, fs::copy_options::overwrite_existing);
      }
      gc::detector::AnnotationStore store(store_path);
      ctx.run->note("annotations.jsonl");
      std::map<gc::SkillId, std::regex> oracles;
      if (!o->oracle_patterns.empty()) {
        DetectorOptions tmp;
        tmp.patterns_file = o->oracle_patterns;
        for (const auto& [id, re] : read_patterns(tmp))
          oracles.emplace(id, std::regex(re, std::regex::ECMAScript | std::regex::icase));
      }
      const auto only = parse_ids(o->skill_ids);
      json lines = json::array();
      std::vector<std::vector<std::string>> rows;
      std::string out;
      for (const auto& [id, d] : dets) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        std::unique_ptr<gc::detector::FunctionAnnotator> source;
        if (auto it = oracles.find(id); it != oracles.end())
          source = std::make_unique<gc::detector::FunctionAnnotator>(
              "regex-oracle", [re = it->second](const std::string& s, gc::SkillId) { return std::regex_search(s, re); });
        const auto tp = gc::detector::evaluate_test_precision(*d, id, sentences, store, source.get(), o->sample, ctx.g.seed);
        if (auto m = models.find(id); m != models.end()) m->second->set_test_precision(tp.precision);
        auto j = gc::detector::to_json(tp);
        j["skill_id"] = id;
        out += j.dump() + "\n";
        rows.push_back({std::to_string(id), std::to_string(tp.detections), std::to_string(tp.sampled),
                        fixed(tp.precision), tp.no_support ? "no-support" : ""});
      }
      ctx.run->write("eval.jsonl", out);
      if (!models.empty()) {
        gc::detector::save_bundle(*ctx.run / "bundle", models);
        ctx.run->note("bundle/");
      }
      ctx.emit("table.txt", render_rows({"skill", "detections", "sampled", "test precision", "flag"}, rows));
    };
  }
}

// ----------------------------------------------------------------- data, models

void register_dataset(CLI::App& app, Commands& all) {
  auto* ds = app.add_subcommand("dataset", "fine-tuning data");
  ds->require_subcommand(1);
  struct O {
    std::string corpus, skills;
    std::size_t cap = gc::control::kDemonstrationCap;
    DetectorOptions det;
  };
  auto o = std::make_shared<O>();
  auto& c = add(all, ds, "build-sft", "dataset build-sft", "dataset", "demonstrations from a labeled corpus");
  c.binder->option("--corpus", o->corpus, "corpus", "labeled dialogue JSON lines");
  c.binder->option("--skills", o->skills, skills_key(), "skill table (TSV)");
  c.binder->option("--cap", o->cap, "cap", "demonstrations per skill");
  o->det.bind(*c.binder);
  c.settle = [o](const json& cfg) { o->det.settle(cfg); };
  c.run = [o](Context& ctx) {
    const auto repo = load_skills(o->skills);
    const auto dialogues = load_corpus(o->corpus);
    const auto dets = load_detectors(o->det);
    const auto ds = gc::control::build_finetune_dataset(dialogues, dets, repo, o->cap, ctx.g.seed);
    ctx.run->write("sft.jsonl", jsonl(ds.examples, [](const auto& e) { return gc::control::to_json(e); }));
    std::string csv = "skill_id,examples\n";
    std::vector<std::vector<std::string>> rows;
    for (const auto& [id, n] : ds.per_skill) {
      csv += std::to_string(id) + "," + std::to_string(n) + "\n";
      rows.push_back({std::to_string(id), std::to_string(n)});
    }
    ctx.run->write("per_skill.csv", csv);
    ctx.run->write_json("summary.json", {{"examples", ds.examples.size()},
                                         {"cap", o->cap},
                                         {"dropped_on_recheck", ds.dropped_on_recheck},
                                         {"per_skill", counts_json(ds.per_skill)}});
    ctx.emit("table.txt", render_rows({"skill", "examples"}, rows));
  };
}

// Mean share of listed skills found in the greedy completion.
double heldout_satisfaction(const gc::llm::LogitModel& lm, std::span<const gc::control::FinetuneExample> data,
                            const gc::detector::DetectorSet& dets, std::size_t max_tokens) {
  if (data.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& e : data) {
    const auto prompt = lm.vocab().encode(gc::control::local_prompt_text(e.prompt));
    const auto text = lm.vocab().decode(gc::llm::greedy_decode(lm, prompt, max_tokens));
    std::size_t hit = 0;
    for (auto id : e.skill_ids)
      if (auto d = dets.find(id); d != dets.end() && gc::corpus::detect_in_turn(*d->second, text)) ++hit;
    sum += static_cast<double>(hit) / static_cast<double>(e.skill_ids.size());
  }
  return sum / static_cast<double>(data.size());
}

void register_model(CLI::App& app, Commands& all) {
  auto* model = app.add_subcommand("model", "local language models");
  model->require_subcommand(1);
  {
    struct O {
      std::string corpus, skills, id = "tiny-lm";
      std::size_t epochs = 8, max_context = 512;
      int dim = 32, hidden = 128;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, model, "pretrain", "model pretrain", "model", "train a small next-turn model on a corpus");
    c.binder->option("--corpus", o->corpus, "corpus", "dialogue JSON lines");
    c.binder->option("--skills", o->skills, skills_key(), "skill table (TSV)");
    c.binder->option("--id", o->id, "id", "model id");
    c.binder->option("--epochs", o->epochs, "epochs", "training epochs");
    c.binder->option("--dim", o->dim, "dim", "embedding width");
    c.binder->option("--hidden", o->hidden, "hidden", "hidden width");
    c.binder->option("--max-context", o->max_context, "max_context", "prompt plus response token limit");
    c.run = [o](Context& ctx) {
      const auto repo = load_skills(o->skills);
      const auto dialogues = load_corpus(o->corpus);
      auto vocab = gc::llm::Vocabulary::build(gc::control::vocabulary_texts(dialogues, repo));
      std::vector<gc::llm::LmExample> data;
      for (const auto& [p, r] : gc::control::pretraining_pairs(dialogues))
        data.push_back(gc::llm::make_example(vocab, gc::control::local_prompt_text(p), r));
      gc::llm::TinyLM lm(o->id, std::move(vocab), {o->dim, o->hidden, 3}, o->max_context, ctx.g.seed);
      const double before = gc::llm::lm_loss(lm, data);
      gc::llm::LmTrainOptions opt;
      opt.epochs = o->epochs;
      opt.seed = ctx.g.seed;
      gc::llm::train_lm(lm, data, opt);
      const double after = gc::llm::lm_loss(lm, data);
      lm.save(*ctx.run / "model");
      ctx.run->note("model/");
      ctx.run->write_json("summary.json", {{"id", o->id},
                                           {"vocabulary", lm.vocab().size()},
                                           {"parameters", lm.parameter_count()},
                                           {"examples", data.size()},
                                           {"loss_before", before},
                                           {"loss_after", after}});
      ctx.emit("table.txt", render_rows({"model", "vocabulary", "examples", "loss before", "loss after"},
                                        {{o->id, std::to_string(lm.vocab().size()), std::to_string(data.size()),
                                          fixed(before), fixed(after)}}));
    };
  }
  {
    struct O {
      std::string base, data;
      double validation_share = 0.1;
      std::size_t steps = 1000, every = 200, batch = 8, max_tokens = 48;
      int rank = 64;
      float lr = 5e-4f;
      DetectorOptions det;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, model, "finetune", "model finetune", "finetune", "low-rank adaptation on demonstrations");
    c.binder->option("--base", o->base, "base", "saved base model directory");
    c.binder->option("--data", o->data, "data", "demonstration JSON lines from dataset build-sft");
    c.binder->option("--validation-share", o->validation_share, "validation_share", "held-out share for checkpoint scoring");
    c.binder->option("--steps", o->steps, "steps", "optimizer steps");
    c.binder->option("--checkpoint-every", o->every, "checkpoint_every", "steps between checkpoints");
    c.binder->option("--batch", o->batch, "batch_examples", "examples per step");
    c.binder->option("--rank", o->rank, "rank", "adapter rank");
    c.binder->option("--lr", o->lr, "learning_rate", "learning rate");
    c.binder->option("--max-tokens", o->max_tokens, "max_tokens", "completion limit when scoring checkpoints");
    o->det.bind(*c.binder);
    c.settle = [o](const json& cfg) { o->det.settle(cfg); };
    c.run = [o](Context& ctx) {
      auto base = gc::llm::TinyLM::load(need(o->base, "--base"));
      auto data = gc::control::read_finetune_jsonl(need(o->data, "--data"));
      const auto dets = load_detectors(o->det);
      if (!(o->validation_share > 0.0 && o->validation_share < 1.0))
        throw gc::ValidationError("validation share must lie in (0, 1)");
      std::mt19937_64 rng(ctx.g.seed);
      std::shuffle(data.begin(), data.end(), rng);
      const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(o->validation_share * data.size()));
      if (data.size() < n_val + 1) throw gc::PreconditionError("too few demonstrations to hold out a validation split");
      const std::vector<gc::control::FinetuneExample> val(data.begin(), data.begin() + n_val);
      const std::vector<gc::control::FinetuneExample> train(data.begin() + n_val, data.end());
      const auto examples = gc::control::to_lm_examples(train, base->vocab());
      gc::llm::LoraConfig cfg;
      cfg.rank = o->rank;
      cfg.learning_rate = o->lr;
      cfg.steps = o->steps;
      cfg.checkpoint_every = o->every;
      cfg.batch_examples = o->batch;
      cfg.seed = ctx.g.seed;
      auto scorer = [&](const gc::llm::TinyLM& m) { return heldout_satisfaction(m, val, dets, o->max_tokens); };
      const double before = scorer(*base);
      const auto r = gc::llm::finetune(*base, examples, scorer, cfg);
      gc::llm::save_adapter(*ctx.run / "adapter", r, *base, cfg);
      ctx.run->note("adapter/");
      auto m = gc::llm::manifest(r, *base, cfg);
      m["validation_examples"] = val.size();
      m["base_score"] = before;
      ctx.run->write_json("finetune.json", m);
      std::vector<std::vector<std::string>> rows{{"base", fixed(before), "-"}};
      for (const auto& cp : r.checkpoints)
        rows.push_back({std::to_string(cp.step) + (r.best_step == cp.step ? " *" : ""), fixed(cp.score), fixed(cp.loss)});
      ctx.emit("table.txt", render_rows({"step", "held-out satisfaction", "train loss"}, rows));
    };
  }
}

// ----------------------------------------------------------------- generation

struct GenInputs {
  std::string skills, corpus, cases, constraints;
  std::size_t snippets = 20;
  DetectorOptions det;
  ModelOptions model;

  void bind(Binder& b) {
    b.option("--skills", skills, "egp.skills", "skill table (TSV)");
    b.option("--corpus", corpus, "corpus", "labeled dialogue JSON lines");
    b.option("--cases", cases, "cases", "test cases JSON lines (overrides suite building)");
    b.option("--snippets", snippets, "snippets", "dialogue snippets to sample");
    det.bind(b);
    model.bind(b);
  }
  void settle(const json& cfg) {
    det.settle(cfg);
    model.settle(cfg);
  }
};

std::vector<gc::eval::TestCase> read_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw gc::LookupError("cannot open " + path);
  std::vector<gc::eval::TestCase> out;
  std::size_t row = 0;
  for (std::string line; std::getline(in, line);) {
    ++row;
    if (gc::text::trim(line).empty()) continue;
    try {
      out.push_back(gc::eval::test_case_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw gc::ParseError(path + ": " + e.what(), row);
    }
  }
  return out;
}

// Moves clock readings out of the records into a sidecar so the records
// themselves are reproducible.
json strip_timing(std::vector<gc::control::GenerationRecord>& records) {
  json lat = json::array();
  for (auto& r : records) {
    lat.push_back(r.latency_seconds);
    r.latency_seconds = 0.0;
  }
  return {{"latency_seconds", lat}};
}

gc::SkillSet steerable_pool(const gc::detector::DetectorSet& dets, gc::control::Strategy s, ModelHub& hub) {
  gc::SkillSet pool;
  for (const auto& [id, _] : dets) pool.insert(id);
  if (s == gc::control::Strategy::Decode || s == gc::control::Strategy::Hybrid) {
    const auto sc = hub.scorers();
    std::erase_if(pool, [&](gc::SkillId id) { return !sc.count(id); });
  }
  return pool;
}

void register_generate(CLI::App& app, Commands& all) {
  auto o = std::make_shared<GenInputs>();
  auto& c = add(all, &app, "generate", "generate", "generate", "constrained responses for dialogue snippets");
  o->bind(*c.binder);
  c.binder->option("--constraints", o->constraints, "constraints", R"(constraint JSON, e.g. {"explicit":[22]})");
  c.settle = [o](const json& cfg) { o->settle(cfg); };
  c.run = [o](Context& ctx) {
    const auto repo = load_skills(o->skills);
    const auto dets = load_detectors(o->det);
    ctx.run->sidecar("audit.jsonl");
    ModelHub hub(o->model, repo, *ctx.run / "audit.jsonl");
    const auto strategy = o->model.parsed_strategy();
    auto gen = hub.generator(strategy, o->model.params(), dets);
    std::vector<gc::eval::TestCase> cases;
    if (!o->cases.empty()) {
      cases = read_cases(o->cases);
    } else {
      json cj;
      try {
        cj = json::parse(need(o->constraints, "--constraints or --cases"));
      } catch (const json::parse_error& e) {
        throw gc::ParseError(std::string("--constraints: ") + e.what());
      }
      const auto cs = gc::egp::constraints_from_json(cj);
      cs.check_against(repo);
      const auto dialogues = load_corpus(o->corpus);
      for (auto& s : gc::corpus::sample_snippets(dialogues, o->snippets, ctx.g.seed)) cases.push_back({std::move(s), cs, false});
    }
    auto records = gc::eval::run_cases(*gen, cases, repo, dets);
    ctx.run->write("timing.json", strip_timing(records).dump(2) + "\n");
    ctx.run->sidecar("timing.json");
    ctx.run->write("records.jsonl", jsonl(records, [](const auto& r) { return gc::control::to_json(r); }));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      std::string sat = "-";
      if (r.failed) sat = "failed";
      else if (r.constraints.is_explicit()) sat = fixed(gc::eval::satisfaction_task1(r));
      else sat = std::to_string(gc::eval::satisfaction_task2(r, repo).satisfied) + "/" + std::to_string(r.constraints.size());
      rows.push_back({std::to_string(i), r.constraints.key(), sat, r.response.substr(0, 60)});
    }
    ctx.emit("table.txt", render_rows({"case", "constraints", "satisfied", "response"}, rows));
  };
}

void register_eval(CLI::App& app, Commands& all) {
  auto* ev = app.add_subcommand("eval", "constraint satisfaction benchmarks");
  ev->require_subcommand(1);
  for (const std::string task : {"task1", "task2"}) {
    struct O {
      GenInputs in;
      bool no_augment = false;
      std::string audit;
      json judge;
    };
    auto o = std::make_shared<O>();
    auto& c = add(all, ev, task, "eval " + task, "eval",
                  task == "task1" ? "explicit skill constraints (sizes 1, 2, 3, 4, 6)" : "category and level constraints");
    o->in.bind(*c.binder);
    c.binder->flag("--no-augment", o->no_augment, "no_augment", "do not add constraints satisfied by the reference turn");
    c.binder->option("--audit-detectors", o->audit, "audit_detectors", "second, disjoint detector bundle");
    c.settle = [o](const json& cfg) {
      o->in.settle(cfg);
      if (cfg.contains("eval") && cfg["eval"].contains("judge")) o->judge = cfg["eval"]["judge"];
    };
    c.run = [o, task](Context& ctx) {
      const auto repo = load_skills(o->in.skills);
      const auto dets = load_detectors(o->in.det);
      if (dets.empty()) throw gc::ValidationError("no detectors: give --detectors or --patterns");
      ctx.run->sidecar("audit.jsonl");
      ModelHub hub(o->in.model, repo, *ctx.run / "audit.jsonl");
      const auto strategy = o->in.model.parsed_strategy();
      auto gen = hub.generator(strategy, o->in.model.params(), dets);
      std::vector<gc::eval::TestCase> cases;
      if (!o->in.cases.empty()) {
        cases = read_cases(o->in.cases);
      } else {
        const auto dialogues = load_corpus(o->in.corpus);
        gc::eval::SuiteOptions so;
        so.snippets = o->in.snippets;
        so.seed = ctx.g.seed;
        so.augment = !o->no_augment;
        so.pool = steerable_pool(dets, strategy, hub);
        cases = task == "task1" ? gc::eval::build_task1_suite(dialogues, repo, so)
                                : gc::eval::build_task2_suite(dialogues, repo, so);
      }
      ctx.run->write("cases.jsonl", jsonl(cases, [](const auto& c) { return gc::eval::to_json(c); }));
      auto records = gc::eval::run_cases(*gen, cases, repo, dets, [&](std::size_t done, std::size_t total) {
        if (done % 50 == 0 || done == total) spdlog::info("{} / {} cases", done, total);
      });

      gc::eval::SummaryOptions so;
      so.detector_provenance = detector_provenance(o->in.det);
      gc::detector::DetectorSet audit;
      if (!o->audit.empty()) {
        audit = gc::detector::as_detector_set(gc::detector::load_bundle(o->audit));
        so.audit = &audit;
      }
      std::unique_ptr<gc::llm::QualityJudge> judge;
      if (!o->judge.is_null()) {
        judge = std::make_unique<gc::llm::QualityJudge>(chat_from_json(o->judge));
        so.judge = judge.get();
      }
      gc::eval::EvaluationReport report{task, {gc::eval::summarize(records, repo, so)}};
      auto timing = strip_timing(records);
      const auto wpm = report.strategies[0].speed_wpm;
      timing["speed_wpm"] = wpm ? json(*wpm) : json(nullptr);
      report.strategies[0].speed_wpm.reset();
      ctx.run->write("timing.json", timing.dump(2) + "\n");
      ctx.run->sidecar("timing.json");
      ctx.run->write("records.jsonl", jsonl(records, [](const auto& r) { return gc::control::to_json(r); }));
      ctx.run->write_json("report.json", gc::eval::to_json(report));
      ctx.run->write("per_skill.csv", gc::eval::per_skill_csv(report));
      ctx.emit("table.txt", gc::eval::render_table(report));
      if (wpm && !ctx.g.quiet) std::cout << "generation speed " << fixed(*wpm, 0) << " wpm (timing.json)\n";
    };
  }
}

// ----------------------------------------------------------------- analysis

void register_cooccur(CLI::App& app, Commands& all) {
  auto* co = app.add_subcommand("cooccur", "skill co-occurrence across speakers");
  co->require_subcommand(1);
  struct O {
    std::string corpus, only;
    double alpha = 0.05;
  };
  auto o = std::make_shared<O>();
  auto& c = add(all, co, "run", "cooccur run", "cooccur", "Fisher tests over all adjacency pairs");
  c.binder->option("--corpus", o->corpus, "corpus", "labeled dialogue JSON lines");
  c.binder->option("--alpha", o->alpha, "alpha", "family-wise significance level");
  c.binder->option("--only", o->only, "only", "comma-separated skill ids to restrict to");
  c.run = [o](Context& ctx) {
    const auto dialogues = load_corpus(o->corpus);
    const auto ids = parse_ids(o->only);
    const auto rep = gc::analysis::test_all_pairs(gc::analysis::count_adjacency(dialogues, {ids.begin(), ids.end()}), o->alpha);
    ctx.run->write("pairs.csv", gc::analysis::pairs_csv(rep.pairs));
    std::string lines;
    std::vector<const gc::analysis::CoOccurrencePair*> sig;
    for (const auto& p : rep.pairs) {
      if (p.tested) lines += gc::analysis::to_json(p).dump() + "\n";
      if (p.significant) sig.push_back(&p);
    }
    ctx.run->write("pairs.jsonl", lines);
    ctx.run->write_json("summary.json", gc::analysis::to_json(rep.summary));
    std::stable_sort(sig.begin(), sig.end(), [](auto* a, auto* b) { return a->p_value < b->p_value; });
    std::vector<std::vector<std::string>> rows;
    for (const auto* p : sig)
      rows.push_back({std::to_string(p->g_pre), std::to_string(p->g_post), std::to_string(p->count_with) + "/" +
                      std::to_string(p->exposure_with), std::to_string(p->count_without) + "/" +
                      std::to_string(p->exposure_without), fixed(p->odds_ratio, 2), fixed(p->freq_difference),
                      fixed(p->p_value, 6)});
    std::string table = render_rows({"g_pre", "g_post", "with", "without", "odds ratio", "freq diff", "p"}, rows);
    table += std::to_string(rep.summary.significant) + " of " + std::to_string(rep.summary.tests) +
             " tested pairs significant at p < " + fixed(rep.summary.threshold, 8) + "\n";
    ctx.emit("table.txt", table);
  };
}

std::vector<std::pair<gc::SkillId, gc::SkillId>> parse_pairs(const std::string& csv) {
  std::vector<std::pair<gc::SkillId, gc::SkillId>> out;
  for (const auto& part : gc::text::split(csv, ',')) {
    const auto t = std::string(gc::text::trim(part));
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw gc::ValidationError("pair '" + t + "' is not pre:post");
    const auto a = parse_ids(t.substr(0, colon)), b = parse_ids(t.substr(colon + 1));
    if (a.size() != 1 || b.size() != 1) throw gc::ValidationError("pair '" + t + "' is not pre:post");
    out.emplace_back(a[0], b[0]);
  }
  return out;
}

void register_simulate(CLI::App& app, Commands& all) {
  auto* sim = app.add_subcommand("simulate", "simulated learner experiments");
  sim->require_subcommand(1);
  struct O {
    GenInputs in;
    std::string pairs, from_pairs, levels = "none", learner_stub, learner_model;
    std::size_t n = 100;
    double floor = 0.1, alpha = 0.05;
    json learner;
  };
  auto o = std::make_shared<O>();
  auto& c = add(all, sim, "intervention", "simulate intervention", "intervention",
                "steer bot turns towards g_pre and count g_post in learner replies");
  o->in.bind(*c.binder);
  c.binder->option("--pairs", o->pairs, "pairs", "pre:post skill pairs, comma-separated");
  c.binder->option("--from-pairs", o->from_pairs, "from_pairs", "pairs.jsonl from cooccur run; significant pairs are used");
  c.binder->option("--levels", o->levels, "levels", "learner levels, e.g. none,A2,B1");
  c.binder->option("--n", o->n, "n", "kept turns per condition");
  c.binder->option("--floor", o->floor, "success_floor", "minimum keep rate");
  c.binder->option("--significance", o->alpha, "alpha", "family-wise significance level");
  c.binder->option("--learner-stub", o->learner_stub, "learner_stub", "stub learner reply");
  c.binder->option("--learner-model", o->learner_model, "learner_model", "local model directory for the learner");
  c.settle = [o](const json& cfg) {
    o->in.settle(cfg);
    if (cfg.contains("intervention") && cfg["intervention"].contains("learner")) o->learner = cfg["intervention"]["learner"];
  };
  c.run = [o](Context& ctx) {
    const auto repo = load_skills(o->in.skills);
    const auto dets = load_detectors(o->in.det);
    const auto dialogues = load_corpus(o->in.corpus);
    auto pairs = parse_pairs(o->pairs);
    if (!o->from_pairs.empty()) {
      std::ifstream in(o->from_pairs);
      if (!in) throw gc::LookupError("cannot open " + o->from_pairs);
      for (std::string line; std::getline(in, line);) {
        if (gc::text::trim(line).empty()) continue;
        const auto j = json::parse(line);
        if (j.value("significant", false)) pairs.emplace_back(j.at("g_pre").get<gc::SkillId>(), j.at("g_post").get<gc::SkillId>());
      }
    }
    if (pairs.empty()) throw gc::ValidationError("no pairs: give --pairs or --from-pairs");
    gc::analysis::InterventionOptions opt;
    opt.n = o->n;
    opt.success_floor = o->floor;
    opt.alpha = o->alpha;
    opt.seed = ctx.g.seed;
    opt.levels.clear();
    for (const auto& l : gc::text::split(o->levels, ',')) {
      const auto t = gc::text::trim(l);
      if (gc::text::iequals(t, "none")) opt.levels.push_back(std::nullopt);
      else opt.levels.push_back(gc::parse_level(t));
    }
    std::shared_ptr<gc::llm::ChatModel> learner;
    if (!o->learner_stub.empty()) learner = std::make_shared<gc::llm::StubChatModel>("stub-learner", o->learner_stub);
    else if (!o->learner_model.empty()) learner = chat_from_json({{"local_model", o->learner_model}});
    else if (!o->learner.is_null()) learner = chat_from_json(o->learner);
    else throw gc::ValidationError("no learner model: give --learner-stub, --learner-model or intervention.learner");

    ctx.run->sidecar("audit.jsonl");
    ModelHub hub(o->in.model, repo, *ctx.run / "audit.jsonl");
    auto gen = hub.generator(o->in.model.parsed_strategy(), o->in.model.params(), dets);
    const auto bot = gc::analysis::generator_bot(*gen, hub.chat());
    const auto results = gc::analysis::run_intervention(pairs, dialogues, bot, *learner, repo, dets, opt);
    ctx.run->write("results.jsonl", jsonl(results, [](const auto& r) { return gc::analysis::to_json(r); }));
    ctx.run->write("intervention.csv", gc::analysis::intervention_csv(results));
    ctx.emit("grid.txt", gc::analysis::intervention_grid(results));
  };
}

// ----------------------------------------------------------------- serve

void register_serve(CLI::App& app, Commands& all) {
  struct O {
    std::string host, data_dir;
    int port = -1;
  };
  auto o = std::make_shared<O>();
  auto& c = add(all, &app, "serve", "serve", "service", "HTTP session service");
  c.run_dir = false;
  c.binder->cmd()->add_option("--host", o->host, "bind address (overrides config and environment)");
  c.binder->cmd()->add_option("--port", o->port, "port (overrides config and environment)");
  c.binder->cmd()->add_option("--data-dir", o->data_dir, "event log directory");
  c.run = [o](Context& ctx) {
    auto sc = gc::service::load_service_config(
        ctx.g.config.empty() ? std::nullopt : std::optional<fs::path>(ctx.g.config));
    if (!o->host.empty()) sc.host = o->host;
    if (o->port >= 0) sc.port = o->port;
    if (!o->data_dir.empty()) sc.data_dir = o->data_dir;

    const auto repo = gc::egp::SkillRepository::load(need(sc.skills.string(), "service.skills"));
    DetectorOptions dopt;
    dopt.bundle = sc.detectors.string();
    for (const auto& [id, re] : sc.patterns) dopt.patterns[std::to_string(id)] = re;
    const auto dets = load_detectors(dopt);
    ModelOptions mopt;
    mopt.local_model = sc.local_model.string();
    mopt.adapter = sc.adapter.string();
    mopt.discriminators = sc.discriminators.string();
    mopt.stub_reply = sc.stub_reply;
    if (sc.remote) {
      mopt.remote = {{"model", sc.remote->model},
                     {"base_url", sc.remote->base_url},
                     {"api_key_env", sc.remote->api_key_env},
                     {"max_in_flight", sc.remote->max_in_flight},
                     {"max_retries", sc.remote->max_retries},
                     {"backoff_ms", sc.remote->backoff.count()},
                     {"timeout_s", sc.remote->timeout.count()}};
    }
    ModelHub hub(mopt, repo, fs::path(sc.data_dir) / "audit.jsonl");
    std::mutex hub_mutex;
    gc::service::JsonlEventStore store(sc.data_dir);
    gc::service::SessionManager sessions(
        store, repo, dets,
        [&](gc::control::Strategy s, const gc::control::DecodingParams& p) {
          std::lock_guard lock(hub_mutex);
          return hub.generator(s, p, dets);
        },
        gc::service::SessionDefaults{sc.strategy, sc.decoding});
    gc::service::HttpService http(sessions);
    if (!http.bind(sc.host, sc.port)) throw gc::RuntimeFailure("cannot bind " + sc.host + ":" + std::to_string(sc.port));

    sigset_t sigs;
    sigemptyset(&sigs);
    sigaddset(&sigs, SIGINT);
    sigaddset(&sigs, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
    std::jthread stopper([&] {
      int sig = 0;
      sigwait(&sigs, &sig);
      spdlog::info("signal {}, stopping", sig);
      http.stop();
    });
    spdlog::info("listening on {}:{} ({} sessions restored)", sc.host, sc.port, sessions.ids().size());
    http.listen();
    pthread_kill(stopper.native_handle(), SIGTERM);
  };
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("grammarctl");
  spdlog::set_default_logger(logger);

  CLI::App app{"grammarctl: grammar-controlled dialogue generation, evaluation and analysis"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  app.add_option("--config", g.config, "JSON config with one section per module")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "root directory for run outputs");
  app.add_option("--run-id", g.run_id, "run directory name (default: timestamped)");
  app.add_option("--seed", g.seed, "random seed");
  app.add_flag("-q,--quiet", g.quiet, "do not print result tables");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  Commands commands;
  register_egp(app, commands);
  register_corpus(app, commands);
  register_detector(app, commands);
  register_dataset(app, commands);
  register_model(app, commands);
  register_generate(app, commands);
  register_eval(app, commands);
  register_cooccur(app, commands);
  register_simulate(app, commands);
  register_serve(app, commands);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  Command* chosen = nullptr;
  for (auto& c : commands)
    if (c->binder->cmd()->parsed()) chosen = c.get();
  if (!chosen) {
    std::cerr << app.help();
    return 1;
  }

  std::unique_ptr<RunDir> run;
  try {
    const json cfg = load_config(g.config);
    chosen->binder->settle(cfg);
    chosen->settle(cfg);
    if (chosen->run_dir) run = std::make_unique<RunDir>(g.out, g.run_id, chosen->name, g.seed, g.argv);
    Context ctx{g, cfg, run.get()};
    chosen->run(ctx);
    if (run) {
      run->finish("ok");
      spdlog::info("{} done: {}", chosen->name, run->path().string());
    }
    return 0;
  } catch (const std::exception& e) {
    const bool input = gc::is_input_error(e);
    spdlog::error("{}: {}", chosen->name, e.what());
    if (run) run->finish(input ? "invalid-input" : "failed", {{"error", e.what()}});
    return input ? 1 : 2;
  }
}
