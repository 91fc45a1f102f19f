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

#include "slidealign/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>
#include <variant>

namespace slidealign {

namespace {

using FieldPtr = std::variant<int*, long*, double*, std::uint64_t*, Variant*>;

struct Field {
  const char* key;
  FieldPtr ptr;
};

std::vector<Field> fields(RunConfig& c) {
  return {
      {"synth.classes", &c.synth.classes},
      {"synth.cases", &c.synth.cases},
      {"synth.seed", &c.synth.seed},
      {"synth.width", &c.synth.width},
      {"synth.height", &c.synth.height},
      {"synth.max_parts", &c.synth.max_parts},
      {"synth.cat1", &c.synth.cat1},
      {"synth.cat2", &c.synth.cat2},
      {"synth.cat3", &c.synth.cat3},
      {"split.train", &c.split.fractions.train},
      {"split.validation", &c.split.fractions.validation},
      {"split.test", &c.split.fractions.test},
      {"split.seed", &c.split.seed},
      {"tile.saturation_threshold", &c.tile.mask.saturation_threshold},
      {"tile.intensity_threshold", &c.tile.mask.intensity_threshold},
      {"tile.closing_radius", &c.tile.mask.closing_radius},
      {"tile.erosion_radius", &c.tile.mask.erosion_radius},
      {"tile.patch_px", &c.tile.geometry.patch_px},
      {"tile.stride_px", &c.tile.geometry.stride_px},
      {"tile.budget", &c.tile.geometry.budget},
      {"tile.min_tissue_fraction", &c.tile.geometry.min_tissue_fraction},
      {"tile.seed", &c.tile.seed},
      {"embed.seed", &c.embed_seed},
      {"stage1.variant", &c.stage1_model.variant},
      {"stage1.n_queries", &c.stage1_model.n_queries},
      {"stage1.query_dim", &c.stage1_model.query_dim},
      {"stage1.intermediate_dim", &c.stage1_model.intermediate_dim},
      {"stage1.itc_proj_dim", &c.stage1_model.itc_proj_dim},
      {"stage1.n_layers", &c.stage1_model.n_layers},
      {"stage1.n_heads", &c.stage1_model.n_heads},
      {"stage1.max_text_len", &c.stage1_model.max_text_len},
      {"stage1.lr", &c.stage1.lr},
      {"stage1.weight_decay", &c.stage1.weight_decay},
      {"stage1.beta1", &c.stage1.beta1},
      {"stage1.beta2", &c.stage1.beta2},
      {"stage1.warmup_steps", &c.stage1.warmup_steps},
      {"stage1.max_steps", &c.stage1.max_steps},
      {"stage1.batch_size", &c.stage1.batch_size},
      {"stage1.init_temperature", &c.stage1.init_temperature},
      {"stage1.itc_weight", &c.stage1.weights.itc},
      {"stage1.itm_weight", &c.stage1.weights.itm},
      {"stage1.itg_weight", &c.stage1.weights.itg},
      {"stage1.seed", &c.stage1.seed},
      {"stage1.eval_every", &c.stage1.eval_every},
      {"stage1.patience", &c.stage1.patience},
      {"stage1.fn_threshold", &c.stage1.fn_threshold},
      {"decoder.n_layers", &c.decoder.n_layers},
      {"decoder.dim", &c.decoder.dim},
      {"decoder.n_heads", &c.decoder.n_heads},
      {"decoder.ffn_dim", &c.decoder.ffn_dim},
      {"decoder.context", &c.decoder.context},
      {"decoder.lr", &c.decoder_train.lr},
      {"decoder.warmup_steps", &c.decoder_train.warmup_steps},
      {"decoder.max_steps", &c.decoder_train.max_steps},
      {"decoder.batch_size", &c.decoder_train.batch_size},
      {"decoder.seed", &c.decoder_train.seed},
      {"decoder.eval_every", &c.decoder_train.eval_every},
      {"decoder.patience", &c.decoder_train.patience},
      {"stage2.lr", &c.stage2.lr},
      {"stage2.beta1", &c.stage2.beta1},
      {"stage2.beta2", &c.stage2.beta2},
      {"stage2.warmup_steps", &c.stage2.warmup_steps},
      {"stage2.weight_decay", &c.stage2.weight_decay},
      {"stage2.max_steps", &c.stage2.max_steps},
      {"stage2.batch_size", &c.stage2.batch_size},
      {"stage2.grad_clip_norm", &c.stage2.grad_clip_norm},
      {"stage2.seed", &c.stage2.seed},
      {"stage2.eval_every", &c.stage2.eval_every},
      {"stage2.patience", &c.stage2.patience},
      {"eval.match_threshold", &c.eval.match_threshold},
      {"eval.bootstrap_replicates", &c.eval.bootstrap_replicates},
      {"eval.bootstrap_seed", &c.eval.bootstrap_seed},
      {"eval.max_generation_len", &c.eval.max_generation_len},
  };
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "tile.budget is stored as a u64 field");

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw config_error("BadValue", key + " = '" + v + "' is not a valid number");
  }
  return out;
}

std::string format_value(const FieldPtr& p) {
  return std::visit(
      [](auto* x) -> std::string {
        using V = std::remove_pointer_t<decltype(x)>;
        if constexpr (std::is_same_v<V, Variant>) {
          return to_string(*x);
        } else {
          char buf[64];
          const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *x);
          (void)ec;
          return std::string(buf, end);
        }
      },
      p);
}

Field* find(std::vector<Field>& fs, const std::string& key) {
  for (auto& f : fs) {
    if (key == f.key) return &f;
  }
  throw config_error("UnknownKey", "unknown config key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig()
    : stage1_model(QFormerConfig::for_variant(Variant::R)), stage1(TrainConfig::for_variant(Variant::R)) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto fs = fields(*this);
  Field* f = find(fs, key);
  std::visit(
      [&](auto* x) {
        using V = std::remove_pointer_t<decltype(x)>;
        if constexpr (std::is_same_v<V, Variant>) {
          try {
            *x = variant_from_string(value);
          } catch (const Error&) {
            throw config_error("BadValue", key + " must be R or G");
          }
        } else {
          *x = parse_number<V>(key, value);
        }
      },
      f->ptr);
}

std::vector<std::string> RunConfig::keys() const {
  auto fs = fields(const_cast<RunConfig&>(*this));
  std::vector<std::string> out;
  for (const auto& f : fs) out.emplace_back(f.key);
  return out;
}

std::string RunConfig::get(const std::string& key) const {
  auto fs = fields(const_cast<RunConfig&>(*this));
  return format_value(find(fs, key)->ptr);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "schema_version = " << kConfigSchemaVersion << "\n";
  std::string section;
  for (const auto& f : fields(const_cast<RunConfig&>(*this))) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      os << "\n[" << section << "]\n";
    }
    os << key.substr(dot + 1) << " = " << format_value(f.ptr) << "\n";
  }
  return os.str();
}

std::string RunConfig::hash() const {
  const std::string t = to_text();
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32_of(t.data(), t.size()));
  return buf;
}

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s = default_spec(synth.classes, synth.cases, synth.seed);
  s.width = synth.width;
  s.height = synth.height;
  s.max_parts_per_case = synth.max_parts;
  s.slides_per_part = {{AssociationCategory::Cat1, synth.cat1},
                       {AssociationCategory::Cat2, synth.cat2},
                       {AssociationCategory::Cat3, synth.cat3}};
  return s;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  bool have_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw config_error("ParseError", where + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error("ParseError", where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!have_version) {
      if (key != "schema_version" || !section.empty()) {
        throw config_error("SchemaVersion", "config must start with schema_version");
      }
      if (value != std::to_string(kConfigSchemaVersion)) {
        throw config_error("SchemaVersion", "unsupported schema_version " + value);
      }
      have_version = true;
      continue;
    }
    if (section.empty()) throw config_error("ParseError", where + ": key outside a section");
    base.set(section + "." + key, value);
  }
  if (!have_version) throw config_error("SchemaVersion", "config must start with schema_version");
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw config_error("MissingConfig", e.what());
  }
  return parse_config(text, std::move(base));
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw config_error("ParseError", "override '" + o + "' is not key=value");
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

}  // namespace slidealign
