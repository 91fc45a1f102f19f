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

#pragma once

#include <map>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "slidealign/common.hpp"

namespace slidealign {

struct ReportDocument {
  std::string case_id;
  std::string raw_text;
};

/// A span removed from a label or finding. Offsets index the normalized
/// field text before any redaction was applied.
struct Redaction {
  std::string field;  // "label" or "finding"
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string text;
  std::string rule_id;

  bool operator==(const Redaction&) const = default;
};

struct PartRecord {
  std::string case_id;
  int part_index = 0;
  std::string label;
  std::string finding;
  std::vector<Redaction> redactions;

  /// Canonical part-level text, exactly "label : finding".
  std::string serialize() const { return label + " : " + finding; }
};

struct SlideRecord {
  std::string slide_id;
  std::string case_id;
  int part_index = 0;
  int block_index = 0;
  std::string image_uri;
};

enum class AssociationCategory { Cat1 = 1, Cat2 = 2, Cat3 = 3 };
enum class Split { Train, Validation, Test };
enum class PairSource { Clean, Noisy };

std::string to_string(AssociationCategory c);
std::string to_string(Split s);
std::string to_string(PairSource s);
AssociationCategory category_from_string(const std::string& s);
Split split_from_string(const std::string& s);
PairSource source_from_string(const std::string& s);

struct PairedExample {
  std::string slide_id;
  std::string case_id;
  std::string text;
  AssociationCategory category = AssociationCategory::Cat1;
  Split split = Split::Train;
  PairSource source = PairSource::Clean;
};

/// Part-indicator and redaction regexes. The plain-text rule file has one
/// rule per line: `<indicator|redact> <rule_id> <ECMAScript regex>`, with a
/// `# slidealign-rules v1` header and `#` comments.
class RuleSet {
 public:
  struct Rule {
    std::string id;
    std::string pattern;
    std::regex re;
  };

  static RuleSet defaults();
  static RuleSet parse(const std::string& text);
  static RuleSet load(const std::string& path);

  const std::vector<Rule>& indicators() const { return indicators_; }
  const std::vector<Rule>& redactions() const { return redactions_; }
  std::string version() const { return version_; }

 private:
  std::vector<Rule> indicators_;
  std::vector<Rule> redactions_;
  std::string version_;
};

/// One PartRecord per part indicator, in document order. A document with no
/// indicator is accepted only if it is a single line holding one part.
/// Throws NoPartIndicators / MalformedPart.
std::vector<PartRecord> parse_report(const ReportDocument& doc, const RuleSet& rules);

/// Throws EmptySlideList, ForeignSlide.
AssociationCategory assign_category(const std::string& case_id, int part_index,
                                    const std::vector<SlideRecord>& slides);

struct PairSets {
  std::vector<PairedExample> clean;
  std::vector<PairedExample> noisy;
};

/// Throws OrphanSlide when a slide has no matching part.
PairSets build_pair_sets(const std::vector<PartRecord>& parts,
                         const std::vector<SlideRecord>& slides);

struct SplitFractions {
  double train = 0.90;
  double validation = 0.05;
  double test = 0.05;
};

/// Case-level split keyed by case_id. Validation and test sizes are
/// round-half-up of n * fraction; train takes the remainder.
std::map<std::string, Split> split_cases(const std::vector<PairedExample>& clean,
                                         std::uint64_t seed, SplitFractions f = {});

/// Sets `split` on every example from its case assignment; cases without
/// an assignment are training cases.
void apply_split(std::vector<PairedExample>& pairs, const std::map<std::string, Split>& assignment);

/// Noisy pairs restricted to cases outside clean validation/test.
std::vector<PairedExample> noisy_training_pairs(const std::vector<PairedExample>& noisy,
                                                const std::map<std::string, Split>& assignment);

struct SiteCount {
  std::string study;
  std::string site;
  int n_cases = 0;
};

struct SiteSplitResult {
  std::map<std::pair<std::string, std::string>, Split> assignment;  // (study, site)
  /// Studies whose largest site alone exceeded the train cap and was
  /// assigned to train anyway.
  std::vector<std::string> over_cap_studies;
};

/// Greedy per-study site split: sites by descending case count go to train
/// until the next one would push train past 55% of the study, then the rest
/// alternate validation, test, validation, ... Throws EmptyStudy.
SiteSplitResult split_by_site(const std::vector<SiteCount>& sites, double train_cap = 0.55);

// Line-delimited JSON I/O. Pair manifests keep the field order
// slide_id, text, category, split, source.
std::vector<ReportDocument> read_reports_jsonl(const std::string& path);
std::vector<SlideRecord> read_slides_jsonl(const std::string& path);
std::string reports_to_jsonl(const std::vector<ReportDocument>& docs);
std::string slides_to_jsonl(const std::vector<SlideRecord>& slides);
std::string pair_to_json_line(const PairedExample& p);
std::string pairs_to_jsonl(const std::vector<PairedExample>& pairs);
std::vector<PairedExample> read_pairs_jsonl(const std::string& path);

}  // namespace slidealign
