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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "slidealign/checkpoint.hpp"
#include "slidealign/config.hpp"
#include "slidealign/manifest.hpp"
#include "slidealign/tokenizer.hpp"
#include "support/temp_dir.hpp"

using namespace slidealign;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

std::string config_dir() { return std::string(SLIDEALIGN_DATA_DIR) + "/../configs"; }

}  // namespace

TEST_CASE("config text round trips exactly") {
  RunConfig c;
  c.set("stage1.lr", "3e-4");
  c.set("stage1.variant", "G");
  c.set("synth.cases", "17");
  c.set("split.train", "0.7");
  const RunConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.hash() == c.hash());
  for (const auto& k : c.keys()) CHECK_MESSAGE(back.get(k) == c.get(k), k);
  CHECK(back.stage1.lr == 3e-4);
  CHECK(back.stage1_model.variant == Variant::G);
  CHECK(RunConfig().hash() != c.hash());
}

TEST_CASE("config errors") {
  RunConfig c;
  CHECK(error_code([&] { c.set("stage1.nope", "1"); }) == "UnknownKey");
  CHECK(error_code([&] { c.set("stage1.lr", "fast"); }) == "BadValue");
  CHECK(error_code([&] { c.set("synth.cases", "2.5"); }) == "BadValue");
  CHECK(error_code([] { parse_config("[stage1]\nlr = 1\n"); }) == "SchemaVersion");
  CHECK(error_code([] { parse_config("schema_version = 2\n"); }) == "SchemaVersion");
  CHECK(error_code([] { parse_config("schema_version = 1\nthis is not a line\n"); }) == "ParseError");
  CHECK(error_code([&] { apply_overrides(c, {"stage1.lr"}); }) != "");
  apply_overrides(c, {"stage1.max_steps=7", "stage1.max_steps=9"});
  CHECK(c.stage1.max_steps == 9);
}

TEST_CASE("shipped presets load and layer") {
  const auto r = load_config(config_dir() + "/stage1-R.cfg");
  CHECK(r.stage1_model.variant == Variant::R);
  CHECK(r.stage1_model.n_queries == 1);
  CHECK(r.stage1.batch_size == 1024);
  CHECK(r.stage1.init_temperature == 0.01);
  const auto g = load_config(config_dir() + "/stage1-G.cfg");
  CHECK(g.stage1_model.n_queries == 32);
  CHECK(g.stage1.weights.itm == 0.5);
  CHECK(g.stage2.grad_clip_norm == 10.0);
  const auto desk = load_config(config_dir() + "/desk.cfg", g);
  CHECK(desk.stage1_model.n_queries == 32);
  CHECK(desk.stage1.max_steps < g.stage1.max_steps);
  CHECK_NOTHROW(desk.stage1.validate());
  CHECK_NOTHROW(desk.stage2.validate());
}

TEST_CASE("manifest JSON round trip and verification") {
  testing_support::TempDir dir;
  std::filesystem::create_directories(dir.file("out"));
  std::ofstream(dir.file("out/a.txt")) << "hello";
  RunManifest m;
  m.subcommand = "synth";
  m.config_hash = "abcd";
  m.config_text = "schema_version = 1\n";
  m.seeds["synth"] = 13;
  m.versions["oracle"] = "v1";
  m.timings["total"] = 0.5;
  record_artifacts(m, dir.path().string(), {"out/a.txt"});
  REQUIRE(m.artifacts.size() == 1);
  CHECK(m.artifacts[0].crc32 == "3610a686");  // CRC-32 of "hello"

  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.subcommand == "synth");
  CHECK(back.seeds.at("synth") == 13);
  CHECK(back.artifacts[0].path == "out/a.txt");
  CHECK(back.timings.at("total") == 0.5);

  write_manifest(dir.path().string(), m);
  const auto read = read_manifest(manifest_path(dir.path().string(), "synth"));
  CHECK(verify_manifest(dir.path().string(), read).empty());
  std::ofstream(dir.file("out/a.txt")) << "changed";
  CHECK(verify_manifest(dir.path().string(), read).size() == 1);
  std::filesystem::remove(dir.file("out/a.txt"));
  CHECK(verify_manifest(dir.path().string(), read).size() == 1);
  CHECK(error_code([] { RunManifest::from_json("{"); }) == "CorruptManifest");
}

TEST_CASE("word tokenizer") {
  const auto t = WordTokenizer::fit({"Colon, biopsy : adenoma.", "lung adenoma"});
  CHECK(WordTokenizer::split("Colon, biopsy") == std::vector<std::string>{"colon", ",", "biopsy"});
  const auto ids = t.encode("colon adenoma zzz", WordTokenizer::kCls, 48);
  CHECK(ids.front() == WordTokenizer::kCls);
  CHECK(ids.back() == WordTokenizer::kSep);
  CHECK(ids[3] == WordTokenizer::kUnk);
  const auto cut = t.encode("colon colon colon colon", WordTokenizer::kDec, 3);
  CHECK(cut.size() == 3);
  CHECK(cut.back() == WordTokenizer::kSep);
  CHECK(WordTokenizer::from_vocabulary({t.vocabulary().begin() + 5, t.vocabulary().end()}).hash() == t.hash());
}

TEST_CASE("char tokenizer") {
  const auto t = CharTokenizer::fit({"abc", "cab."});
  CHECK(t.size() == 4 + 4);
  CHECK(t.decode(t.encode("cab")) == "cab");
  CHECK(t.encode("z")[0] == CharTokenizer::kUnk);
  CHECK(CharTokenizer::from_alphabet(t.alphabet()).encode("b.a") == t.encode("b.a"));
}

TEST_CASE("checkpoint round trip and corruption") {
  Checkpoint ck;
  ck.meta_json = "{\"k\":1}";
  ck.params.add("a.w", 2, 3) << 1, 2, 3, 4, 5, 6;
  ck.params.add("b", 1, 1) << -0.5f;
  const auto bytes = encode_checkpoint(ck);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.meta_json == ck.meta_json);
  CHECK((back.params.at("a.w").array() == ck.params.at("a.w").array()).all());
  CHECK(params_checksum(back.params) == params_checksum(ck.params));
  CHECK(params_checksum(ck.params, "a.") != params_checksum(ck.params, "b"));

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK(error_code([&] { decode_checkpoint(flipped); }) == "CorruptCheckpoint");
  CHECK(error_code([&] { decode_checkpoint(bytes.substr(0, 10)); }) == "CorruptCheckpoint");
  std::string version = bytes;
  version[4] = 7;
  CHECK(error_code([&] { decode_checkpoint(version); }) == "VersionMismatch");

  testing_support::TempDir dir;
  write_checkpoint(dir.file("c.ckpt"), ck);
  CHECK(params_checksum(read_checkpoint(dir.file("c.ckpt")).params) == params_checksum(ck.params));
}

TEST_CASE("command line exit codes and error JSON") {
  testing_support::TempDir dir;
  const std::string cli = SLIDEALIGN_CLI;
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" --work \"" + dir.path().string() + "\" " + args + " >/dev/null 2>\"" +
                            dir.file("err.txt") + "\"";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  auto err = [&] {
    std::ifstream in(dir.file("err.txt"));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(run("no-such-subcommand") == 2);
  CHECK(run("--set stage1.nope=1 synth") == 2);
  CHECK(err().find("\"kind\"") != std::string::npos);
  CHECK(err().find("UnknownKey") != std::string::npos);
  CHECK(run("parse") == 3);  // nothing synthesised yet
  CHECK(run("--set synth.cases=2 --set synth.classes=2 --set synth.width=448 --set synth.height=448 synth") == 0);
  CHECK(std::filesystem::exists(dir.file("manifests/synth.json")));
  CHECK(run("parse") == 0);
}
