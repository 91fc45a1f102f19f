// Copyright 2026 The slidealign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// slidealign command-line driver. Every subcommand reads and writes files
// under --work and leaves a manifest in <work>/manifests.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "slidealign/config.hpp"
#include "slidealign/image.hpp"
#include "slidealign/langgraft.hpp"
#include "slidealign/manifest.hpp"
#include "slidealign/match_oracle.hpp"
#include "slidealign/patch_embedder.hpp"
#include "slidealign/qformer.hpp"
#include "slidealign/report_corpus.hpp"
#include "slidealign/retrieval_eval.hpp"
#include "slidealign/slide_synth.hpp"
#include "slidealign/task_eval.hpp"
#include "slidealign/tiler.hpp"

namespace fs = std::filesystem;
using namespace slidealign;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

struct Globals {
  std::string work = "work";
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::string rules;
};

struct Context {
  std::string work;
  RunConfig cfg;
  RuleSet rules;
  RunManifest manifest;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string path(const std::string& rel) const { return (fs::path(work) / rel).string(); }

  void write(const std::string& rel, const std::string& contents) const {
    fs::create_directories(fs::path(path(rel)).parent_path());
    write_text_file_atomic(path(rel), contents);
  }

  void finish(const std::vector<std::string>& artifacts) {
    record_artifacts(manifest, work, artifacts);
    manifest.timings["total"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(work, manifest);
  }
};

Context make_context(const Globals& g, const std::string& subcommand,
                     const std::vector<std::string>& flag_overrides) {
  Context c;
  c.work = g.work;
  for (const auto& path : g.configs) c.cfg = load_config(path, c.cfg);
  apply_overrides(c.cfg, g.sets);
  apply_overrides(c.cfg, flag_overrides);
  c.rules = g.rules.empty() ? RuleSet::defaults() : RuleSet::load(g.rules);
  fs::create_directories(c.work);
  c.manifest.subcommand = subcommand;
  c.manifest.config_hash = c.cfg.hash();
  c.manifest.config_text = c.cfg.to_text();
  c.manifest.versions["rules"] = c.rules.version();
  c.manifest.versions["oracle"] = MatchOracle::version();
  return c;
}

std::vector<std::string> jsonl_lines(const std::string& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) out.push_back(line);
  }
  return out;
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw data_error("BadJson", where + ": " + e.what());
  }
}

struct Truth {
  int class_id = 0;
  int severity = 1;
  std::string keyword;
};

std::map<std::string, Truth> read_truth(const Context& c) {
  std::map<std::string, Truth> out;
  for (const auto& line : jsonl_lines(c.path("truth.jsonl"))) {
    const auto j = parse_json(line, "truth.jsonl");
    out[j.at("slide_id")] = {j.at("class_id"), j.at("severity"), j.at("keyword")};
  }
  return out;
}

std::string embedding_rel(const std::string& slide_id) { return "embeddings/" + slide_id + ".saem"; }

std::vector<PairedExample> pairs_in(const Context& c, Split split) {
  std::vector<PairedExample> out;
  for (auto& p : read_pairs_jsonl(c.path("pairs.jsonl"))) {
    if (p.split == split) out.push_back(std::move(p));
  }
  return out;
}

std::vector<TrainExample> load_examples(const Context& c, const std::vector<PairedExample>& pairs) {
  std::vector<TrainExample> out;
  for (const auto& p : pairs) {
    out.push_back({p.slide_id, with_positions(read_embeddings(c.path(embedding_rel(p.slide_id)))), p.text});
  }
  return out;
}

std::vector<const MatrixF*> image_ptrs(const std::vector<TrainExample>& ex) {
  std::vector<const MatrixF*> out;
  for (const auto& e : ex) out.push_back(&e.patches);
  return out;
}

MatchOracle fit_oracle(const Context& c) {
  std::vector<std::string> texts;
  for (const auto& p : pairs_in(c, Split::Train)) texts.push_back(p.text);
  return MatchOracle(texts, c.cfg.eval.match_threshold);
}

// --- subcommands -----------------------------------------------------------

void run_synth(Context& c) {
  const SynthSpec spec = c.cfg.synth_spec();
  c.manifest.seeds["synth"] = spec.seed;
  const auto corpus = generate_corpus(spec);
  std::vector<ReportDocument> docs;
  std::vector<SlideRecord> slides;
  std::string truth;
  std::vector<std::string> artifacts{"reports.jsonl", "slides.jsonl", "truth.jsonl"};
  fs::create_directories(c.path("images"));
  for (const auto& k : corpus) {
    docs.push_back(k.report);
    for (const auto& s : k.slides) {
      slides.push_back(s);
      const auto& cls = spec.classes.at(static_cast<std::size_t>(k.part_class.at(static_cast<std::size_t>(s.part_index))));
      ojson t;
      t["slide_id"] = s.slide_id;
      t["class_id"] = cls.class_id;
      t["severity"] = cls.severity;
      t["keyword"] = cls.keyword;
      truth += t.dump() + "\n";
      write_png(c.path(s.image_uri), render_slide(spec, k, s));
      artifacts.push_back(s.image_uri);
    }
  }
  c.write("reports.jsonl", reports_to_jsonl(docs));
  c.write("slides.jsonl", slides_to_jsonl(slides));
  c.write("truth.jsonl", truth);
  c.finish(artifacts);
  std::cout << "synth: " << docs.size() << " reports, " << slides.size() << " slides\n";
}

void run_parse(Context& c) {
  const auto docs = read_reports_jsonl(c.path("reports.jsonl"));
  const auto slides = read_slides_jsonl(c.path("slides.jsonl"));
  std::vector<PartRecord> parts;
  for (const auto& d : docs) {
    auto p = parse_report(d, c.rules);
    parts.insert(parts.end(), p.begin(), p.end());
  }
  const auto sets = build_pair_sets(parts, slides);
  c.write("pairs_clean.jsonl", pairs_to_jsonl(sets.clean));
  c.write("pairs_noisy.jsonl", pairs_to_jsonl(sets.noisy));
  c.finish({"pairs_clean.jsonl", "pairs_noisy.jsonl"});
  std::cout << "parse: " << parts.size() << " parts, " << sets.clean.size() << " clean and " << sets.noisy.size()
            << " noisy pairs\n";
}

std::map<std::string, SlideRecord> slide_index(const Context& c);

// Pair records carry no case_id; it is recovered from the slide manifest.
std::vector<PairedExample> read_pairs_with_cases(const Context& c, const std::string& rel,
                                                 const std::map<std::string, SlideRecord>& slides) {
  auto pairs = read_pairs_jsonl(c.path(rel));
  for (auto& p : pairs) {
    const auto it = slides.find(p.slide_id);
    if (it == slides.end()) throw data_error("OrphanSlide", "pair references unknown slide " + p.slide_id);
    p.case_id = it->second.case_id;
  }
  return pairs;
}

void run_split(Context& c) {
  const auto slides = slide_index(c);
  auto clean = read_pairs_with_cases(c, "pairs_clean.jsonl", slides);
  const auto noisy = read_pairs_with_cases(c, "pairs_noisy.jsonl", slides);
  c.manifest.seeds["split"] = c.cfg.split.seed;
  const auto assignment = split_cases(clean, c.cfg.split.seed, c.cfg.split.fractions);
  apply_split(clean, assignment);
  c.write("pairs.jsonl", pairs_to_jsonl(clean));
  c.write("noisy_train.jsonl", pairs_to_jsonl(noisy_training_pairs(noisy, assignment)));
  c.finish({"pairs.jsonl", "noisy_train.jsonl"});
  std::map<Split, int> n;
  for (const auto& p : clean) ++n[p.split];
  std::cout << "split: train " << n[Split::Train] << ", validation " << n[Split::Validation] << ", test "
            << n[Split::Test] << "\n";
}

std::vector<std::string> slides_to_process(const Context& c) {
  std::set<std::string> ids;
  for (const auto& p : read_pairs_jsonl(c.path("pairs.jsonl"))) ids.insert(p.slide_id);
  for (const auto& p : read_pairs_jsonl(c.path("noisy_train.jsonl"))) ids.insert(p.slide_id);
  return {ids.begin(), ids.end()};
}

std::map<std::string, SlideRecord> slide_index(const Context& c) {
  std::map<std::string, SlideRecord> out;
  for (auto& s : read_slides_jsonl(c.path("slides.jsonl"))) out[s.slide_id] = std::move(s);
  return out;
}

void run_tile(Context& c) {
  const auto slides = slide_index(c);
  c.manifest.seeds["tile"] = c.cfg.tile.seed;
  std::vector<PatchManifestRecord> records;
  for (const auto& id : slides_to_process(c)) {
    const auto img = read_png(c.path(slides.at(id).image_uri));
    const auto all = tile(tissue_mask(img, c.cfg.tile.mask), c.cfg.tile.geometry);
    PatchManifestRecord r;
    r.slide_id = id;
    r.n_candidates = static_cast<std::uint32_t>(all.size());
    r.coords = sample_budget(all, c.cfg.tile.geometry.budget, c.cfg.tile.seed);
    records.push_back(std::move(r));
  }
  write_patch_manifest(c.path("patches.bin"), c.cfg.tile.mask, records);
  c.finish({"patches.bin"});
  std::cout << "tile: " << records.size() << " slides\n";
}

void run_embed(Context& c) {
  const auto slides = slide_index(c);
  const PatchEmbedder embedder(c.cfg.embed_seed);
  c.manifest.seeds["embed"] = c.cfg.embed_seed;
  std::vector<std::string> artifacts;
  fs::create_directories(c.path("embeddings"));
  for (const auto& r : read_patch_manifest(c.path("patches.bin"))) {
    if (r.coords.empty()) throw data_error("EmptyPatchSequence", "no tissue patches on " + r.slide_id);
    const auto img = read_png(c.path(slides.at(r.slide_id).image_uri));
    write_embeddings(c.path(embedding_rel(r.slide_id)), embedder.embed_slide(r.slide_id, img, r.coords));
    artifacts.push_back(embedding_rel(r.slide_id));
  }
  c.finish(artifacts);
  std::cout << "embed: " << artifacts.size() << " slides\n";
}

void run_train_stage1(Context& c) {
  // noisy_train already contains every clean training pair
  const auto train = load_examples(c, read_pairs_jsonl(c.path("noisy_train.jsonl")));
  const auto val = load_examples(c, pairs_in(c, Split::Validation));
  const MatchOracle oracle = fit_oracle(c);
  c.manifest.seeds["stage1"] = c.cfg.stage1.seed;
  fs::create_directories(c.path("logs"));
  std::ofstream log(c.path("logs/stage1.jsonl"));
  const auto res = train_stage1(train, val, c.cfg.stage1_model, c.cfg.stage1, oracle, &log);
  log.close();
  const QFormerEncoder enc(res.config, res.tokenizer, res.params);
  ojson extra;
  extra["steps_run"] = res.steps_run;
  extra["best_step"] = res.best_step;
  extra["best_score"] = res.best_score;
  write_checkpoint(c.path("stage1.ckpt"), enc.to_checkpoint(extra.dump()));
  c.manifest.versions["tokenizer"] = res.tokenizer.hash();
  c.finish({"stage1.ckpt", "logs/stage1.jsonl"});
  std::cout << "train-stage1: " << res.steps_run << " steps, best step " << res.best_step << " score "
            << res.best_score << "\n";
}

void run_train_stage2(Context& c) {
  const auto stage1 = QFormerEncoder::from_checkpoint(read_checkpoint(c.path("stage1.ckpt")));
  const auto train = load_examples(c, pairs_in(c, Split::Train));
  const auto val = load_examples(c, pairs_in(c, Split::Validation));
  const auto truth = read_truth(c);
  auto texts = [&](const std::vector<TrainExample>& ex) {
    std::vector<DecoderText> out;
    for (const auto& e : ex) out.push_back({e.text, truth.at(e.id).severity});
    return out;
  };
  fs::create_directories(c.path("logs"));
  std::ofstream dlog(c.path("logs/decoder.jsonl"));
  const FrozenDecoder decoder =
      pretrain_decoder(texts(train), texts(val), c.cfg.decoder, c.cfg.decoder_train, kPrioritizationPrompt, &dlog);
  dlog.close();
  write_checkpoint(c.path("decoder.ckpt"), decoder.to_checkpoint());
  std::ofstream log(c.path("logs/stage2.jsonl"));
  const auto res = train_stage2(stage1, decoder, train, val, c.cfg.stage2, &log);
  log.close();
  write_checkpoint(c.path("stage2.ckpt"), res.model.to_checkpoint());
  c.manifest.seeds["decoder"] = c.cfg.decoder_train.seed;
  c.manifest.seeds["stage2"] = c.cfg.stage2.seed;
  c.manifest.versions["decoder_checksum"] = res.decoder_checksum_after;
  c.finish({"decoder.ckpt", "stage2.ckpt", "logs/decoder.jsonl", "logs/stage2.jsonl"});
  std::cout << "train-stage2: " << res.steps_run << " steps, best val loss " << res.best_val_loss
            << ", decoder checksum " << res.decoder_checksum_before << " -> " << res.decoder_checksum_after << "\n";
}

Split parse_split(const std::string& s) {
  try {
    return split_from_string(s);
  } catch (const Error&) {
    throw config_error("BadValue", "unknown split '" + s + "'");
  }
}

void run_retrieve(Context& c, const std::string& direction, int k, const std::string& split_name) {
  const auto enc = QFormerEncoder::from_checkpoint(read_checkpoint(c.path("stage1.ckpt")));
  const auto ex = load_examples(c, pairs_in(c, parse_split(split_name)));
  const MatchOracle oracle = fit_oracle(c);
  std::vector<std::string> ids, texts;
  std::vector<MatrixD> embs;
  const auto img = enc.encode_images(image_ptrs(ex));
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ids.push_back(ex[i].id);
    texts.push_back(ex[i].text);
    embs.push_back(img[i].cast<double>());
  }
  auto corpus = make_cross_modal_corpus(ids, embs, texts);
  const MatrixF te = enc.encode_texts(corpus.texts);
  for (Eigen::Index i = 0; i < te.rows(); ++i) corpus.text_embeddings.push_back(te.row(i).cast<double>());

  RetrievalReport rep;
  std::string top;
  if (direction == "image2text") {
    rep = image_to_text(corpus, oracle);
    std::vector<RetrievalItem> items;
    for (std::size_t i = 0; i < corpus.texts.size(); ++i) items.push_back({corpus.texts[i], corpus.text_embeddings[i]});
    const RetrievalIndex index(items, Modality::Text);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      ojson j;
      j["query"] = ids[q];
      j["results"] = index.query(embs[q], static_cast<std::size_t>(k));
      top += j.dump() + "\n";
    }
  } else if (direction == "text2image") {
    rep = text_to_image(corpus, oracle);
    std::vector<RetrievalItem> items;
    for (std::size_t i = 0; i < ids.size(); ++i) items.push_back({ids[i], embs[i]});
    const RetrievalIndex index(items, Modality::Image);
    for (std::size_t q = 0; q < corpus.texts.size(); ++q) {
      ojson j;
      j["query"] = corpus.texts[q];
      j["results"] = index.query(corpus.text_embeddings[q], static_cast<std::size_t>(k));
      top += j.dump() + "\n";
    }
  } else if (direction == "image2image") {
    rep = image_to_image(corpus, oracle);
    std::vector<RetrievalItem> items;
    for (std::size_t i = 0; i < ids.size(); ++i) items.push_back({ids[i], embs[i]});
    const RetrievalIndex index(items, Modality::Image);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      ojson j;
      j["query"] = ids[q];
      auto res = index.query(embs[q], static_cast<std::size_t>(k) + 1);
      std::erase_if(res, [&](const auto& r) { return r.first == ids[q]; });
      if (res.size() > static_cast<std::size_t>(k)) res.resize(static_cast<std::size_t>(k));
      j["results"] = res;
      top += j.dump() + "\n";
    }
  } else {
    throw config_error("BadValue", "direction must be image2text, text2image or image2image");
  }
  rep.dataset = split_name;
  const std::string base = "retrieval_" + direction;
  c.write(base + ".json", report_to_json_line(rep) + "\n");
  c.write(base + "_top" + std::to_string(k) + ".jsonl", top);
  c.manifest.subcommand = "retrieve-" + direction;
  c.finish({base + ".json", base + "_top" + std::to_string(k) + ".jsonl"});
  std::cout << format_report_table({rep});
}

void run_classify(Context& c, const std::string& split_name, const std::string& prompts, const std::string& task_name) {
  const auto enc = QFormerEncoder::from_checkpoint(read_checkpoint(c.path("stage1.ckpt")));
  const auto ex = load_examples(c, pairs_in(c, parse_split(split_name)));
  ClassificationTask task;
  bool synthetic = prompts.empty();
  if (synthetic) {
    task = synthetic_classification_task(c.cfg.synth_spec().classes);
  } else {
    bool found = false;
    for (auto& t : load_classification_tasks(prompts)) {
      if (t.name == task_name) {
        task = std::move(t);
        found = true;
      }
    }
    if (!found) throw config_error("UnknownTask", "no task '" + task_name + "' in " + prompts);
  }
  std::vector<MatrixD> slides;
  for (const auto& m : enc.encode_images(image_ptrs(ex))) slides.push_back(m.cast<double>());
  const auto scores = classify(slides, task.classes, [&](const std::vector<std::string>& t) {
    return MatrixD(enc.encode_texts(t).cast<double>());
  });
  std::string lines;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ojson j;
    j["slide_id"] = ex[i].id;
    j["predicted"] = task.classes[static_cast<std::size_t>(scores.predicted[i])].class_id;
    std::vector<double> row(scores.scores.row(static_cast<Eigen::Index>(i)).begin(),
                            scores.scores.row(static_cast<Eigen::Index>(i)).end());
    j["scores"] = row;
    lines += j.dump() + "\n";
  }
  c.write("classification.jsonl", lines);
  std::vector<std::string> artifacts{"classification.jsonl"};
  if (synthetic) {
    const auto truth = read_truth(c);
    std::vector<int> labels;
    for (const auto& e : ex) labels.push_back(truth.at(e.id).class_id);
    c.manifest.seeds["bootstrap"] = c.cfg.eval.bootstrap_seed;
    auto subset = [&](const std::vector<std::size_t>& idx, MatrixD& s, std::vector<int>& l, std::vector<int>& p) {
      s.resize(static_cast<Eigen::Index>(idx.size()), scores.scores.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        s.row(static_cast<Eigen::Index>(r)) = scores.scores.row(static_cast<Eigen::Index>(idx[r]));
        l.push_back(labels[idx[r]]);
        p.push_back(scores.predicted[idx[r]]);
      }
    };
    auto guarded = [](auto f) {
      try {
        return f();
      } catch (const Error& e) {
        if (e.code() == "SingleClassLabels") return std::numeric_limits<double>::quiet_NaN();
        throw;
      }
    };
    ClassificationRow row;
    row.task = task.name;
    row.auc = bootstrap_ci(
        ex.size(),
        [&](const std::vector<std::size_t>& idx) {
          MatrixD s;
          std::vector<int> l, p;
          subset(idx, s, l, p);
          return guarded([&] { return auc_macro(s, l); });
        },
        c.cfg.eval.bootstrap_replicates, c.cfg.eval.bootstrap_seed);
    row.balanced_accuracy = bootstrap_ci(
        ex.size(),
        [&](const std::vector<std::size_t>& idx) {
          MatrixD s;
          std::vector<int> l, p;
          subset(idx, s, l, p);
          return guarded([&] { return balanced_accuracy(p, l); });
        },
        c.cfg.eval.bootstrap_replicates, c.cfg.eval.bootstrap_seed);
    ojson j;
    j["task"] = row.task;
    j["auc"] = {{"point", row.auc.point}, {"lower", row.auc.lower}, {"upper", row.auc.upper}};
    j["balanced_accuracy"] = {{"point", row.balanced_accuracy.point},
                              {"lower", row.balanced_accuracy.lower},
                              {"upper", row.balanced_accuracy.upper}};
    j["replicates"] = row.auc.replicates;
    j["n_slides"] = ex.size();
    c.write("classification_summary.json", j.dump(2) + "\n");
    artifacts.push_back("classification_summary.json");
    std::cout << format_classification_table({row});
  } else {
    std::cout << "classify: scored " << ex.size() << " slides against " << task.classes.size()
              << " classes (no labels for this task)\n";
  }
  c.finish(artifacts);
}

GraftedModel load_stage2(const Context& c) {
  return GraftedModel::from_checkpoint(read_checkpoint(c.path("stage2.ckpt")));
}

void run_generate(Context& c, const std::string& split_name) {
  const auto model = load_stage2(c);
  const auto ex = load_examples(c, pairs_in(c, parse_split(split_name)));
  const auto gen = generate(model, image_ptrs(ex), c.cfg.eval.max_generation_len);
  std::string lines;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ojson j;
    j["slide_id"] = ex[i].id;
    j["reference"] = ex[i].text;
    j["generated"] = gen[i];
    lines += j.dump() + "\n";
  }
  c.write("generations.jsonl", lines);
  c.manifest.versions["decoder_checksum"] = model.decoder.checksum();
  c.finish({"generations.jsonl"});
  std::cout << "generate: " << ex.size() << " slides\n";
}

void run_prioritize(Context& c, const std::string& split_name) {
  const auto model = load_stage2(c);
  const auto ex = load_examples(c, pairs_in(c, parse_split(split_name)));
  std::vector<std::string> ids;
  for (const auto& e : ex) ids.push_back(e.id);
  const auto scores = prioritize(model, ids, image_ptrs(ex), kPrioritizationPrompt, c.cfg.eval.max_generation_len);
  std::string lines;
  int flagged = 0;
  for (const auto& s : scores) {
    lines += priority_to_json_line(s) + "\n";
    flagged += s.flagged;
  }
  c.write("priorities.jsonl", lines);
  c.finish({"priorities.jsonl"});
  std::cout << "prioritize: " << scores.size() << " slides, " << flagged << " unparseable responses\n";
}

void run_eval_text(Context& c) {
  const auto truth = read_truth(c);
  double p = 0, r = 0, f = 0, meteor = 0, keyword = 0;
  std::size_t n = 0;
  for (const auto& line : jsonl_lines(c.path("generations.jsonl"))) {
    const auto j = parse_json(line, "generations.jsonl");
    const std::string gen = j.at("generated"), ref = j.at("reference");
    const auto rl = rouge_l(gen, ref);
    p += rl.precision;
    r += rl.recall;
    f += rl.f_measure;
    meteor += meteor_simplified(gen, ref);
    const auto it = truth.find(j.at("slide_id").get<std::string>());
    if (it != truth.end() && gen.find(it->second.keyword) != std::string::npos) ++keyword;
    ++n;
  }
  if (n == 0) throw data_error("EmptyData", "no generations to evaluate");
  const double dn = static_cast<double>(n);
  ojson j;
  j["n"] = n;
  j["rouge_l_precision"] = p / dn;
  j["rouge_l_recall"] = r / dn;
  j["rouge_l_f"] = f / dn;
  j["meteor"] = meteor / dn;
  j["keyword_rate"] = keyword / dn;
  c.write("text_metrics.json", j.dump(2) + "\n");
  c.finish({"text_metrics.json"});
  std::cout << j.dump(2) << "\n";
}

void run_report(Context& c, const std::string& config_of) {
  const fs::path dir = fs::path(c.work) / "manifests";
  if (!config_of.empty()) {
    std::cout << read_manifest(manifest_path(c.work, config_of)).config_text;
    return;
  }
  std::ostringstream os;
  os << "# slidealign report\n\n## Runs\n\n";
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (f.stem() == "report") continue;
    const auto m = read_manifest(f.string());
    const auto problems = verify_manifest(c.work, m);
    os << "- " << m.subcommand << ": config " << m.config_hash << ", " << m.artifacts.size() << " artifacts, "
       << (problems.empty() ? "verified" : std::to_string(problems.size()) + " problems") << "\n";
  }
  std::vector<RetrievalReport> reps;
  for (const char* d : {"image2text", "text2image", "image2image"}) {
    const auto p = c.path(std::string("retrieval_") + d + ".json");
    if (!fs::exists(p)) continue;
    const auto j = parse_json(read_text_file(p), p);
    RetrievalReport r;
    r.dataset = j.at("dataset");
    r.direction = j.at("direction");
    r.map = j.at("MAP");
    r.ndcg = j.at("NDCG");
    r.top1 = j.at("top1");
    r.top5 = j.at("top5");
    r.top10 = j.at("top10");
    r.n_queries = j.at("n_queries");
    r.n_corpus = j.at("n_corpus");
    reps.push_back(r);
  }
  if (!reps.empty()) os << "\n## Retrieval\n\n```\n" << format_report_table(reps) << "```\n";
  if (fs::exists(c.path("classification_summary.json"))) {
    const auto j = parse_json(read_text_file(c.path("classification_summary.json")), "classification_summary.json");
    ClassificationRow row;
    row.task = j.at("task");
    row.auc = {j["auc"]["point"], j["auc"]["lower"], j["auc"]["upper"]};
    row.balanced_accuracy = {j["balanced_accuracy"]["point"], j["balanced_accuracy"]["lower"],
                             j["balanced_accuracy"]["upper"]};
    os << "\n## Classification\n\n```\n" << format_classification_table({row}) << "```\n";
  }
  if (fs::exists(c.path("text_metrics.json"))) {
    const auto j = parse_json(read_text_file(c.path("text_metrics.json")), "text_metrics.json");
    char line[256];
    std::snprintf(line, sizeof line, "ROUGE-L F %.4f  METEOR %.4f  keyword rate %.4f  (n = %d)\n",
                  j.at("rouge_l_f").get<double>(), j.at("meteor").get<double>(), j.at("keyword_rate").get<double>(),
                  j.at("n").get<int>());
    os << "\n## Generation\n\n" << line;
  }
  if (fs::exists(c.path("priorities.jsonl"))) {
    const auto truth = read_truth(c);
    std::map<int, std::map<int, int>> table;  // true severity -> score -> count
    for (const auto& line : jsonl_lines(c.path("priorities.jsonl"))) {
      const auto j = parse_json(line, "priorities.jsonl");
      ++table[truth.at(j.at("slide_id")).severity][j.at("score").get<int>()];
    }
    os << "\n## Prioritization (rows: true severity, columns: score 1 2 3)\n\n";
    for (const auto& [sev, row] : table) {
      os << "- " << sev << ":";
      for (int s = 1; s <= 3; ++s) os << " " << (row.count(s) ? row.at(s) : 0);
      os << "\n";
    }
  }
  c.write("report.md", os.str());
  c.finish({"report.md"});
  std::cout << os.str();
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
      return 2;
    case ErrorKind::Data:
      return 3;
    case ErrorKind::Numeric:
      return 4;
  }
  return 3;
}

void print_error(const std::string& code, const std::string& kind, const std::string& message) {
  ojson j;
  j["error"] = code;
  j["kind"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slide-text alignment pipeline"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--work", g.work, "work directory")->capture_default_str();
  app.add_option("--config", g.configs, "config file; later files override earlier ones");
  app.add_option("--set", g.sets, "section.key=value override");
  app.add_option("--rules", g.rules, "rule file for report parsing");

  std::vector<std::string> synth_flags;
  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
  synth->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { synth_flags.push_back("synth.seed=" + std::to_string(v)); });
  synth->add_option_function<int>("--classes", [&](int v) { synth_flags.push_back("synth.classes=" + std::to_string(v)); });
  synth->add_option_function<int>("--cases", [&](int v) { synth_flags.push_back("synth.cases=" + std::to_string(v)); });

  auto* parse = app.add_subcommand("parse", "parse reports into slide-text pairs");
  auto* split = app.add_subcommand("split", "case-level train/validation/test split");
  auto* tile_cmd = app.add_subcommand("tile", "tissue mask and patch grid per slide");
  auto* embed = app.add_subcommand("embed", "patch embeddings per slide");
  auto* train1 = app.add_subcommand("train-stage1", "train the Q-Former");
  auto* train2 = app.add_subcommand("train-stage2", "pretrain the decoder and train the graft");

  std::string direction = "image2text", split_name = "validation";
  int k = 10;
  auto* retrieve = app.add_subcommand("retrieve", "cross-modal retrieval evaluation");
  retrieve->add_option("--direction", direction)->check(CLI::IsMember({"image2text", "text2image", "image2image"}));
  retrieve->add_option("--k", k)->check(CLI::PositiveNumber);
  retrieve->add_option("--split", split_name);

  std::string prompts, task_name;
  auto* classify_cmd = app.add_subcommand("classify", "prompt-ensemble classification");
  classify_cmd->add_option("--split", split_name);
  classify_cmd->add_option("--prompts", prompts, "prompt file; default is the synthetic ensemble");
  classify_cmd->add_option("--task", task_name);

  auto* generate_cmd = app.add_subcommand("generate", "greedy report generation");
  generate_cmd->add_option("--split", split_name);
  auto* prioritize_cmd = app.add_subcommand("prioritize", "severity ranking via the prompt");
  prioritize_cmd->add_option("--split", split_name);
  auto* eval_text = app.add_subcommand("eval-text", "ROUGE-L, METEOR and keyword rate of generations");
  std::string config_of;
  auto* report = app.add_subcommand("report", "summarise all runs");
  report->add_option("--config-of", config_of, "print the configuration recorded for a subcommand");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("UsageError", "config", e.what());
    return 2;
  }

  try {
    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    Context c = make_context(g, name, name == "synth" ? synth_flags : std::vector<std::string>{});
    if (sub == synth) run_synth(c);
    else if (sub == parse) run_parse(c);
    else if (sub == split) run_split(c);
    else if (sub == tile_cmd) run_tile(c);
    else if (sub == embed) run_embed(c);
    else if (sub == train1) run_train_stage1(c);
    else if (sub == train2) run_train_stage2(c);
    else if (sub == retrieve) run_retrieve(c, direction, k, split_name);
    else if (sub == classify_cmd) run_classify(c, split_name, prompts, task_name);
    else if (sub == generate_cmd) run_generate(c, split_name);
    else if (sub == prioritize_cmd) run_prioritize(c, split_name);
    else if (sub == eval_text) run_eval_text(c);
    else if (sub == report) run_report(c, config_of);
  } catch (const Error& e) {
    const char* kinds[] = {"config", "data", "numeric"};
    print_error(e.code(), kinds[static_cast<int>(e.kind())], e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    print_error("IoError", "data", e.what());
    return 3;
  }
  return 0;
}
