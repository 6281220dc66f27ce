// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ssar_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run run(const std::string& args) {
  static const auto dir = scratch("io");
  const auto out = dir / "stdout", err = dir / "stderr";
  const std::string cmd = std::string("'") + SSAR_CLI_PATH + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> v;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) v.emplace_back(fs::relative(e.path(), root).string(), slurp(e.path()));
  std::sort(v.begin(), v.end());
  return v;
}

const std::string kSmall = " --classes 3 --train-per-class 2 --val-per-class 1 --test-per-class 1"
                           " --min-length 5 --max-length 7";

}  // namespace

TEST_CASE("help lists subcommands and flags") {
  const auto top = run("--help");
  CHECK(top.code == 0);
  for (const char* s : {"synth", "prep-masks", "split", "train", "embed-export", "eval", "gradcam", "infer",
                        "ablate", "--workers", "--log"})
    CHECK(top.out.find(s) != std::string::npos);
  const auto train = run("train --help");
  CHECK(train.code == 0);
  for (const char* s : {"--stage", "--manifest", "--embeddings", "--checkpoint-in", "--checkpoint-out",
                        "--metrics", "--config", "--preset", "--set", "--seed"})
    CHECK(train.out.find(s) != std::string::npos);
}

TEST_CASE("usage errors exit 2 with one stderr line") {
  for (const std::string args :
       {"", "synth", "train --stage 2 --checkpoint-out x.ckpt --preset tiny",
        "train --stage 4 --checkpoint-out x.ckpt", "train --stage 1 --checkpoint-out x.ckpt --set nope=1",
        "split --manifest m.csv --ratios 0.5,0.5,0.5 --seed 1 --out o.csv",
        "train --stage 1 --checkpoint-out x.ckpt --preset tiny --config c.cfg",
        "--workers 0 synth --out x"}) {
    INFO(args);
    const auto r = run(args);
    CHECK(r.code == 2);
    REQUIRE(lines(r.err).size() == 1);
    CHECK(r.err.rfind("error: usage: ", 0) == 0);
  }
}

TEST_CASE("runtime errors exit 1 with one stderr line") {
  const auto r = run("eval --manifest /nonexistent/m.csv --checkpoint-in /nonexistent/c.ckpt --preset tiny");
  CHECK(r.code == 1);
  CHECK(lines(r.err).size() == 1);
  CHECK(r.err.rfind("error: runtime: ", 0) == 0);
}

TEST_CASE("synth is reproducible") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  CHECK(run("synth --out '" + a.string() + "' --seed 3" + kSmall).code == 0);
  CHECK(run("synth --out '" + b.string() + "' --seed 3" + kSmall).code == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() > 20);
  CHECK(ta == tb);
}

TEST_CASE("mask preparation and splitting") {
  const auto d = scratch("prep");
  REQUIRE(run("synth --out '" + d.string() + "'" + kSmall).code == 0);
  const auto m = (d / "manifest.csv").string();
  const auto before = tree(d / "masks");
  fs::remove_all(d / "masks");
  CHECK(run("prep-masks --manifest '" + m + "' --near-mm 200 --far-mm 500 --min-area 16").code == 0);
  CHECK(tree(d / "masks") == before);

  const auto seq = (d / "split" / "seq.csv").string();
  CHECK(run("split --manifest '" + m + "' --ratios 0.6,0.2,0.2 --granularity sequence --seed 5 --out '" + seq + "'").code == 0);
  const auto rows = lines(slurp(seq));
  CHECK(rows.size() == 13);
  const auto frames = (d / "split" / "frames.csv").string();
  CHECK(run("split --manifest '" + m + "' --ratios 0.6,0.2,0.2 --granularity frame --seed 5 --out '" + frames + "'").code == 0);
  CHECK(lines(slurp(frames)).front() == "sequence_id,frame,split");
}

TEST_CASE("small end-to-end run") {
  const auto d = scratch("e2e");
  REQUIRE(run("synth --out '" + d.string() + "'" + kSmall).code == 0);
  const auto m = "'" + (d / "manifest.csv").string() + "'";
  const auto p = [&](const char* f) { return "'" + (d / f).string() + "'"; };
  const std::string tiny = " --preset tiny --set num_classes=3 --set embedding_dim=3";

  auto r = run("train --stage 1 --manifest " + m + " --checkpoint-out " + p("s1.ckpt") + " --metrics " +
               p("s1.jsonl") + " --max-steps 2" + tiny);
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(lines(slurp(d / "s1.jsonl")).size() == 2);
  CHECK(fs::exists(d / "s1.ckpt.config"));

  // resume up to four steps; the log is appended
  r = run("train --stage 1 --manifest " + m + " --checkpoint-in " + p("s1.ckpt") + " --checkpoint-out " +
          p("s1.ckpt") + " --metrics " + p("s1.jsonl") + " --max-steps 4" + tiny);
  REQUIRE(r.code == 0);
  const auto log = lines(slurp(d / "s1.jsonl"));
  REQUIRE(log.size() == 4);
  CHECK(nlohmann::json::parse(log[3])["step"] == 4);

  REQUIRE(run("embed-export --manifest " + m + " --checkpoint-in " + p("s1.ckpt") + " --split train --out " +
              p("train.emb") + tiny).code == 0);
  REQUIRE(run("embed-export --manifest " + m + " --checkpoint-in " + p("s1.ckpt") + " --split val --out " +
              p("val.emb") + tiny).code == 0);
  r = run("train --stage 2 --embeddings " + p("train.emb") + " --val-embeddings " + p("val.emb") +
          " --checkpoint-in " + p("s1.ckpt") + " --checkpoint-out " + p("s2.ckpt") + " --max-steps 3" + tiny);
  REQUIRE(r.code == 0);

  r = run("eval --manifest " + m + " --checkpoint-in " + p("s2.ckpt") + " --split test --out " + p("report") + tiny);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(d / "report" / "confusion.csv"));
  CHECK(fs::exists(d / "report" / "summary.json"));

  r = run("infer --checkpoint-in " + p("s2.ckpt") + " --frames " + p("frames/g00_000") + tiny);
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["probabilities"].size() == 3);
  CHECK(j["label"].get<int>() >= 0);

  r = run("gradcam --manifest " + m + " --checkpoint-in " + p("s2.ckpt") + " --sequence g00_000 --frame 0 --out " + p("cams") + tiny);
  REQUIRE(r.code == 0);
  CHECK(!fs::is_empty(d / "cams"));

  // checkpoint from another config is refused
  r = run("eval --manifest " + m + " --checkpoint-in " + p("s2.ckpt") + " --preset tiny");
  CHECK(r.code == 1);
}
