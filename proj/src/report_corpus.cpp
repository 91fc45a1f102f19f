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

#include "slidealign/report_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace slidealign {

namespace {

// Mirrors data/rules.txt.
constexpr const char* kDefaultRules = R"(# slidealign-rules v1
indicator    lettered           ^\s*([a-z])\.\s+
indicator    numbered           ^\s*part\s+(\d+)\s*:\s*
redact       anatomic_location  \bat\s+\d+(\.\d+)?\s*cm(\s+from\s+the\s+anal\s+verge)?\b
redact       anatomic_location  \b\d{1,2}(:\d{2})?\s*o'?clock(\s+position)?\b
redact       laterality         \b(left|right|bilateral)\b
redact       size               \b\d+(\.\d+)?(\s*x\s*\d+(\.\d+)?)*\s*(cm|mm)\b
)";

struct Span {
  std::size_t begin;
  std::size_t end;
  std::string rule_id;
};

// Removes spans and tidies the punctuation left behind.
std::string remove_spans(const std::string& text, const std::vector<Span>& spans) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& s : spans) {
    out.append(text, pos, s.begin - pos);
    out.push_back(' ');
    pos = s.end;
  }
  out.append(text, pos, std::string::npos);

  out = normalize_whitespace_lower(out);
  std::string tidy;
  tidy.reserve(out.size());
  for (char c : out) {
    if ((c == ',' || c == '.' || c == ';' || c == ':') && !tidy.empty() && tidy.back() == ' ') {
      tidy.pop_back();
    }
    if (c == ',' && !tidy.empty() && tidy.back() == ',') continue;
    tidy.push_back(c);
  }
  // Collapse ", ," left by a removed list item.
  std::string collapsed;
  for (std::size_t i = 0; i < tidy.size(); ++i) {
    if (tidy[i] == ',' && !collapsed.empty()) {
      std::size_t k = collapsed.size();
      while (k > 0 && collapsed[k - 1] == ' ') --k;
      if (k > 0 && collapsed[k - 1] == ',') {
        collapsed.resize(k);
        continue;
      }
    }
    collapsed.push_back(tidy[i]);
  }
  std::size_t b = 0;
  std::size_t e = collapsed.size();
  while (b < e && (collapsed[b] == ',' || collapsed[b] == ' ')) ++b;
  while (e > b && (collapsed[e - 1] == ',' || collapsed[e - 1] == ' ')) --e;
  return collapsed.substr(b, e - b);
}

std::string redact_field(const std::string& field_name, const std::string& text,
                         const RuleSet& rules, std::vector<Redaction>& log) {
  std::vector<Span> spans;
  for (const auto& rule : rules.redactions()) {
    for (auto it = std::sregex_iterator(text.begin(), text.end(), rule.re);
         it != std::sregex_iterator(); ++it) {
      const auto b = static_cast<std::size_t>(it->position(0));
      const auto e = b + static_cast<std::size_t>(it->length(0));
      if (e == b) continue;
      const bool overlaps = std::any_of(spans.begin(), spans.end(), [&](const Span& s) {
        return b < s.end && s.begin < e;
      });
      if (!overlaps) spans.push_back({b, e, rule.id});
    }
  }
  if (spans.empty()) return text;
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (const auto& s : spans) {
    log.push_back({field_name, s.begin, s.end, text.substr(s.begin, s.end - s.begin), s.rule_id});
  }
  return remove_spans(text, spans);
}

PartRecord make_part(const std::string& case_id, int index, const std::string& body,
                     const RuleSet& rules) {
  const std::string text = normalize_whitespace_lower(body);
  std::size_t sep = text.find(" : ");
  std::size_t sep_len = 3;
  if (sep == std::string::npos) {
    sep = text.find(':');
    sep_len = 1;
  }
  if (sep == std::string::npos) {
    throw data_error("MalformedPart", "case " + case_id + " part " + std::to_string(index) +
                                          " lacks a 'label : finding' separator");
  }
  PartRecord rec;
  rec.case_id = case_id;
  rec.part_index = index;
  const std::string label = trim(text.substr(0, sep));
  const std::string finding = trim(text.substr(sep + sep_len));
  if (label.empty() || finding.empty()) {
    throw data_error("MalformedPart", "case " + case_id + " part " + std::to_string(index) +
                                          " has an empty label or finding");
  }
  rec.label = redact_field("label", label, rules, rec.redactions);
  rec.finding = redact_field("finding", finding, rules, rec.redactions);
  if (rec.label.empty() || rec.finding.empty()) {
    throw data_error("MalformedPart", "case " + case_id + " part " + std::to_string(index) +
                                          " is empty after redaction");
  }
  return rec;
}

}  // namespace

std::string to_string(AssociationCategory c) {
  switch (c) {
    case AssociationCategory::Cat1: return "Cat1";
    case AssociationCategory::Cat2: return "Cat2";
    case AssociationCategory::Cat3: return "Cat3";
  }
  return "?";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

std::string to_string(PairSource s) { return s == PairSource::Clean ? "clean" : "noisy"; }

AssociationCategory category_from_string(const std::string& s) {
  if (s == "Cat1") return AssociationCategory::Cat1;
  if (s == "Cat2") return AssociationCategory::Cat2;
  if (s == "Cat3") return AssociationCategory::Cat3;
  throw data_error("BadManifest", "unknown category " + s);
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "validation") return Split::Validation;
  if (s == "test") return Split::Test;
  throw data_error("BadManifest", "unknown split " + s);
}

PairSource source_from_string(const std::string& s) {
  if (s == "clean") return PairSource::Clean;
  if (s == "noisy") return PairSource::Noisy;
  throw data_error("BadManifest", "unknown source " + s);
}

RuleSet RuleSet::defaults() { return parse(kDefaultRules); }

RuleSet RuleSet::parse(const std::string& text) {
  RuleSet rs;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      if (!header_seen && t.rfind("# slidealign-rules ", 0) == 0) {
        rs.version_ = trim(t.substr(19));
        header_seen = true;
      }
      continue;
    }
    std::istringstream fields(t);
    std::string kind;
    std::string id;
    fields >> kind >> id;
    std::string pattern;
    std::getline(fields, pattern);
    pattern = trim(pattern);
    if (id.empty() || pattern.empty()) throw config_error("BadRuleFile", "incomplete rule: " + t);
    Rule rule{id, pattern, {}};
    try {
      rule.re = std::regex(pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw config_error("BadRuleFile", "invalid regex for " + id + ": " + e.what());
    }
    if (kind == "indicator") {
      rs.indicators_.push_back(std::move(rule));
    } else if (kind == "redact") {
      rs.redactions_.push_back(std::move(rule));
    } else {
      throw config_error("BadRuleFile", "unknown rule kind " + kind);
    }
  }
  if (!header_seen) throw config_error("BadRuleFile", "missing '# slidealign-rules' header");
  if (rs.version_ != "v1") throw config_error("BadRuleFile", "unsupported rule version " + rs.version_);
  return rs;
}

RuleSet RuleSet::load(const std::string& path) { return parse(read_text_file(path)); }

std::vector<PartRecord> parse_report(const ReportDocument& doc, const RuleSet& rules) {
  if (doc.case_id.empty()) throw data_error("MalformedReport", "empty case_id");
  if (trim(doc.raw_text).empty()) throw data_error("MalformedReport", "empty report text for " + doc.case_id);

  std::vector<std::string> bodies;
  bool any_indicator = false;
  std::istringstream in(doc.raw_text);
  std::string line;
  std::vector<std::string> nonempty_lines;
  while (std::getline(in, line)) {
    const std::string lower = normalize_whitespace_lower(line);
    if (lower.empty()) continue;
    nonempty_lines.push_back(lower);
    std::smatch m;
    bool matched = false;
    for (const auto& ind : rules.indicators()) {
      if (std::regex_search(lower, m, ind.re, std::regex_constants::match_continuous)) {
        bodies.push_back(m.suffix().str());
        matched = any_indicator = true;
        break;
      }
    }
    if (!matched && any_indicator) bodies.back() += " " + lower;
  }
  if (!any_indicator) {
    if (nonempty_lines.size() == 1) {
      bodies.push_back(nonempty_lines.front());
    } else {
      throw data_error("NoPartIndicators", "no part indicator in report " + doc.case_id);
    }
  }
  std::vector<PartRecord> parts;
  parts.reserve(bodies.size());
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    parts.push_back(make_part(doc.case_id, static_cast<int>(i), bodies[i], rules));
  }
  return parts;
}

AssociationCategory assign_category(const std::string& case_id, int part_index,
                                    const std::vector<SlideRecord>& slides) {
  if (slides.empty()) throw data_error("EmptySlideList", "no slides for " + case_id);
  std::set<int> blocks;
  for (const auto& s : slides) {
    if (s.case_id != case_id || s.part_index != part_index) {
      throw data_error("ForeignSlide", "slide " + s.slide_id + " does not belong to " + case_id +
                                           " part " + std::to_string(part_index));
    }
    blocks.insert(s.block_index);
  }
  if (blocks.size() > 1) return AssociationCategory::Cat3;
  return slides.size() == 1 ? AssociationCategory::Cat1 : AssociationCategory::Cat2;
}

PairSets build_pair_sets(const std::vector<PartRecord>& parts,
                         const std::vector<SlideRecord>& slides) {
  using Key = std::pair<std::string, int>;
  std::map<Key, std::vector<SlideRecord>> by_part;
  std::set<Key> known;
  for (const auto& p : parts) known.insert({p.case_id, p.part_index});
  for (const auto& s : slides) {
    Key k{s.case_id, s.part_index};
    if (!known.count(k)) {
      throw data_error("OrphanSlide", "slide " + s.slide_id + " has no part " + s.case_id + "/" +
                                          std::to_string(s.part_index));
    }
    by_part[k].push_back(s);
  }
  PairSets out;
  for (const auto& p : parts) {
    auto it = by_part.find({p.case_id, p.part_index});
    if (it == by_part.end()) continue;
    auto group = it->second;
    std::sort(group.begin(), group.end(), [](const SlideRecord& a, const SlideRecord& b) {
      return std::tie(a.block_index, a.slide_id) < std::tie(b.block_index, b.slide_id);
    });
    const auto cat = assign_category(p.case_id, p.part_index, group);
    const std::string text = p.serialize();
    for (const auto& s : group) {
      PairedExample ex{s.slide_id, p.case_id, text, cat, Split::Train, PairSource::Noisy};
      out.noisy.push_back(ex);
      if (group.size() == 1) {
        ex.source = PairSource::Clean;
        out.clean.push_back(ex);
      }
    }
  }
  return out;
}

std::map<std::string, Split> split_cases(const std::vector<PairedExample>& clean,
                                         std::uint64_t seed, SplitFractions f) {
  std::set<std::string> unique;
  for (const auto& p : clean) unique.insert(p.case_id);
  std::vector<std::string> cases(unique.begin(), unique.end());
  Rng rng(seed);
  shuffle_in_place(cases, rng);

  const double n = static_cast<double>(cases.size());
  auto round_half_up = [](double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); };
  std::size_t n_val = round_half_up(n * f.validation);
  std::size_t n_test = round_half_up(n * f.test);
  while (n_val + n_test > cases.size()) {
    if (n_test > 0) --n_test; else --n_val;
  }
  const std::size_t n_train = cases.size() - n_val - n_test;

  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    Split s = Split::Train;
    if (i >= n_train + n_val) s = Split::Test;
    else if (i >= n_train) s = Split::Validation;
    out[cases[i]] = s;
  }
  return out;
}

void apply_split(std::vector<PairedExample>& pairs, const std::map<std::string, Split>& assignment) {
  for (auto& p : pairs) {
    auto it = assignment.find(p.case_id);
    p.split = it == assignment.end() ? Split::Train : it->second;
  }
}

std::vector<PairedExample> noisy_training_pairs(const std::vector<PairedExample>& noisy,
                                                const std::map<std::string, Split>& assignment) {
  std::vector<PairedExample> out;
  for (const auto& p : noisy) {
    auto it = assignment.find(p.case_id);
    if (it != assignment.end() && it->second != Split::Train) continue;
    auto q = p;
    q.split = Split::Train;
    q.source = PairSource::Noisy;
    out.push_back(std::move(q));
  }
  return out;
}

SiteSplitResult split_by_site(const std::vector<SiteCount>& sites, double train_cap) {
  std::map<std::string, std::vector<SiteCount>> by_study;
  for (const auto& s : sites) by_study[s.study].push_back(s);
  SiteSplitResult result;
  for (auto& [study, list] : by_study) {
    long total = 0;
    for (const auto& s : list) total += s.n_cases;
    if (list.empty() || total <= 0) throw data_error("EmptyStudy", "study " + study + " has no cases");
    std::sort(list.begin(), list.end(), [](const SiteCount& a, const SiteCount& b) {
      if (a.n_cases != b.n_cases) return a.n_cases > b.n_cases;
      return a.site < b.site;
    });
    const double cap = train_cap * static_cast<double>(total);
    long running = 0;
    std::size_t i = 0;
    for (; i < list.size(); ++i) {
      if (static_cast<double>(running + list[i].n_cases) > cap) break;
      running += list[i].n_cases;
      result.assignment[{study, list[i].site}] = Split::Train;
    }
    if (i == 0) {
      // The largest site alone exceeds the cap; it still goes to train.
      result.assignment[{study, list[0].site}] = Split::Train;
      result.over_cap_studies.push_back(study);
      i = 1;
    }
    bool to_validation = true;
    for (; i < list.size(); ++i) {
      result.assignment[{study, list[i].site}] = to_validation ? Split::Validation : Split::Test;
      to_validation = !to_validation;
    }
  }
  return result;
}

namespace {

template <typename F>
void for_each_json_line(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw data_error("IoError", "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      f(j);
    } catch (const nlohmann::json::exception& e) {
      throw data_error("BadManifest", path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<ReportDocument> read_reports_jsonl(const std::string& path) {
  std::vector<ReportDocument> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("case_id").get<std::string>(), j.at("raw_text").get<std::string>()});
  });
  return out;
}

std::vector<SlideRecord> read_slides_jsonl(const std::string& path) {
  std::vector<SlideRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("slide_id").get<std::string>(), j.at("case_id").get<std::string>(),
                   j.at("part_index").get<int>(), j.at("block_index").get<int>(),
                   j.at("image_uri").get<std::string>()});
  });
  return out;
}

std::string reports_to_jsonl(const std::vector<ReportDocument>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::ordered_json j;
    j["case_id"] = d.case_id;
    j["raw_text"] = d.raw_text;
    out += j.dump() + "\n";
  }
  return out;
}

std::string slides_to_jsonl(const std::vector<SlideRecord>& slides) {
  std::string out;
  for (const auto& s : slides) {
    nlohmann::ordered_json j;
    j["slide_id"] = s.slide_id;
    j["case_id"] = s.case_id;
    j["part_index"] = s.part_index;
    j["block_index"] = s.block_index;
    j["image_uri"] = s.image_uri;
    out += j.dump() + "\n";
  }
  return out;
}

std::string pair_to_json_line(const PairedExample& p) {
  nlohmann::ordered_json j;
  j["slide_id"] = p.slide_id;
  j["text"] = p.text;
  j["category"] = to_string(p.category);
  j["split"] = to_string(p.split);
  j["source"] = to_string(p.source);
  return j.dump();
}

std::string pairs_to_jsonl(const std::vector<PairedExample>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += pair_to_json_line(p) + "\n";
  return out;
}

std::vector<PairedExample> read_pairs_jsonl(const std::string& path) {
  std::vector<PairedExample> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    PairedExample p;
    p.slide_id = j.at("slide_id").get<std::string>();
    p.text = j.at("text").get<std::string>();
    p.category = category_from_string(j.at("category").get<std::string>());
    p.split = split_from_string(j.at("split").get<std::string>());
    p.source = source_from_string(j.at("source").get<std::string>());
    out.push_back(std::move(p));
  });
  return out;
}

}  // namespace slidealign
