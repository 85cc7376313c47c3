// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests driving the tgm binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code;
  std::string output;  // stdout + stderr
};

CliResult runCli(const std::string& args) {
  const std::string cmd = std::string(TGM_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

const char* kSmallSpec = R"({
  "num_videos": 6, "d": 6, "t_range": [24, 30], "num_classes": 3,
  "delays": [0, 1, 2], "seed": 7
})";

const char* kSmallRunConfig = R"({
  "model": {
    "d": 6, "num_classes": 3, "classifier": "shared_linear",
    "layers": [
      {"form": "tgm_single", "c_in": 1, "c_out": 3, "L": 3, "M": 2, "d": 6},
      {"form": "tgm_grouped", "c_in": 3, "c_out": 3, "L": 3, "M": 2, "d": 6}
    ]
  },
  "train": {"epochs": 2, "base_lr": 0.01, "seed": 5}
})";

void writeFile(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

int countFiles(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) ++n;
  return n;
}

}  // namespace

TEST_CASE("gen-synth writes the dataset and is byte-reproducible") {
  testutil::TempDir tmp;
  writeFile(tmp.file("spec.json"), kSmallSpec);
  const CliResult r =
      runCli("gen-synth --config " + tmp.file("spec.json") + " --out " + tmp.file("data"));
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("videos=6") != std::string::npos);
  CHECK(countFiles(tmp.file("data"), ".tgmf") == 6);
  CHECK(countFiles(tmp.file("data"), ".tgml") == 6);
  CHECK(fs::exists(tmp.file("data/manifest.json")));

  const CliResult r2 =
      runCli("gen-synth --config " + tmp.file("spec.json") + " --out " + tmp.file("data2"));
  CHECK(r2.exit_code == 0);
  for (const char* name : {"video_0000.tgmf", "video_0003.tgml", "manifest.json"})
    CHECK(testutil::slurpBytes(tmp.file(std::string("data/") + name)) ==
          testutil::slurpBytes(tmp.file(std::string("data2/") + name)));

  SUBCASE("invalid spec exits 2") {
    writeFile(tmp.file("bad.json"), R"({"num_videos": 0})");
    const CliResult bad =
        runCli("gen-synth --config " + tmp.file("bad.json") + " --out " + tmp.file("x"));
    CHECK(bad.exit_code == 2);
  }
  SUBCASE("unwritable output directory exits 3") {
    // parent is a regular file, so the directory cannot be created
    writeFile(tmp.file("blocker"), "x");
    const CliResult bad = runCli("gen-synth --config " + tmp.file("spec.json") + " --out " +
                                 tmp.file("blocker/out"));
    CHECK(bad.exit_code == 3);
  }
}

TEST_CASE("train / eval / export-kernels round trip") {
  testutil::TempDir tmp;
  writeFile(tmp.file("spec.json"), kSmallSpec);
  writeFile(tmp.file("run.json"), kSmallRunConfig);
  REQUIRE(runCli("gen-synth --config " + tmp.file("spec.json") + " --out " + tmp.file("data"))
              .exit_code == 0);
  const std::string manifest = tmp.file("data/manifest.json");

  const CliResult train = runCli("train --config " + tmp.file("run.json") + " --manifest " +
                                 manifest + " --out " + tmp.file("run"));
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(tmp.file("run/ckpt_init.tgmm")));
  CHECK(fs::exists(tmp.file("run/ckpt_epoch_0001.tgmm")));
  CHECK(fs::exists(tmp.file("run/ckpt_epoch_0001.tgmo")));
  CHECK(fs::exists(tmp.file("run/train_log.ndjson")));
  CHECK(fs::exists(tmp.file("run/run_meta.json")));
  // NDJSON log: one record per epoch with the required fields
  std::ifstream log(tmp.file("run/train_log.ndjson"));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    for (const char* key : {"\"epoch\"", "\"lr\"", "\"mean_loss\"", "\"val_map\"", "\"wall_ms\""})
      CHECK(line.find(key) != std::string::npos);
  }
  CHECK(lines == 2);

  SUBCASE("eval prints a JSON report") {
    const CliResult eval =
        runCli("eval " + tmp.file("run/ckpt_epoch_0001.tgmm") + " --manifest " + manifest);
    CHECK(eval.exit_code == 0);
    CHECK(eval.output.find("\"map\"") != std::string::npos);
    CHECK(eval.output.find("\"per_class\"") != std::string::npos);
  }
  SUBCASE("eval with mismatched feature dimensionality exits 2") {
    writeFile(tmp.file("spec8.json"),
              R"({"num_videos": 2, "d": 8, "t_range": [20, 24], "num_classes": 3,
                  "delays": [0, 1, 2], "seed": 1})");
    REQUIRE(runCli("gen-synth --config " + tmp.file("spec8.json") + " --out " + tmp.file("d8"))
                .exit_code == 0);
    const CliResult eval = runCli("eval " + tmp.file("run/ckpt_epoch_0001.tgmm") +
                                  " --manifest " + tmp.file("d8/manifest.json"));
    CHECK(eval.exit_code == 2);
  }
  SUBCASE("empty manifest exits 2") {
    writeFile(tmp.file("empty.json"), "[]");
    const CliResult eval = runCli("eval " + tmp.file("run/ckpt_epoch_0001.tgmm") +
                                  " --manifest " + tmp.file("empty.json"));
    CHECK(eval.exit_code == 2);
  }
  SUBCASE("export-kernels writes unit-sum rows and re-exports identically") {
    const CliResult ek = runCli("export-kernels " + tmp.file("run/ckpt_epoch_0001.tgmm") +
                                " --out " + tmp.file("k.csv"));
    CHECK(ek.exit_code == 0);
    std::ifstream csv(tmp.file("k.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == "out_channel,in_channel,tap,value");
    double sum = 0.0;
    long rows = 0;
    while (std::getline(csv, line)) {
      int oc, ic;
      long tap;
      double value;
      REQUIRE(std::sscanf(line.c_str(), "%d,%d,%ld,%lf", &oc, &ic, &tap, &value) == 4);
      sum += value;
      ++rows;
    }
    CHECK(rows == (3 + 3) * 3);            // (c_out + c_out) kernels, L=3 taps each
    CHECK(sum == doctest::Approx(6.0).epsilon(1e-9));  // every kernel sums to 1
    REQUIRE(runCli("export-kernels " + tmp.file("run/ckpt_epoch_0001.tgmm") + " --out " +
                   tmp.file("k2.csv"))
                .exit_code == 0);
    CHECK(testutil::slurpBytes(tmp.file("k.csv")) == testutil::slurpBytes(tmp.file("k2.csv")));
  }
  SUBCASE("lr 0 leaves the final checkpoint equal to the initial one") {
    const CliResult frozen =
        runCli("train --config " + tmp.file("run.json") + " --manifest " + manifest +
               " --out " + tmp.file("frozen") + " --lr 0");
    CHECK(frozen.exit_code == 0);
    CHECK(testutil::slurpBytes(tmp.file("frozen/ckpt_init.tgmm")) ==
          testutil::slurpBytes(tmp.file("frozen/ckpt_epoch_0001.tgmm")));
  }
  SUBCASE("non-finite loss exits 4 with the last good checkpoint retained") {
    // unconstrained kernels times classifier weights can overflow; Gaussian
    // kernels cannot (always unit-sum), so the blow-up case uses a conv model
    writeFile(tmp.file("conv.json"), R"({
      "model": {
        "d": 6, "num_classes": 3, "classifier": "shared_linear",
        "layers": [{"form": "conv1d_standard", "c_in": 1, "c_out": 3, "L": 3, "d": 6}]
      },
      "train": {"epochs": 2, "seed": 1}
    })");
    const CliResult blown =
        runCli("train --config " + tmp.file("conv.json") + " --manifest " + manifest +
               " --out " + tmp.file("blown") + " --lr 1e200");
    CHECK(blown.exit_code == 4);
    CHECK(fs::exists(tmp.file("blown/ckpt_init.tgmm")));
  }
  SUBCASE("resuming reproduces the uninterrupted run") {
    writeFile(tmp.file("run4.json"), std::string(kSmallRunConfig).replace(
                                         std::string(kSmallRunConfig).find("\"epochs\": 2"),
                                         std::string("\"epochs\": 2").size(), "\"epochs\": 4"));
    const CliResult full = runCli("train --config " + tmp.file("run4.json") + " --manifest " +
                                  manifest + " --out " + tmp.file("full"));
    REQUIRE(full.exit_code == 0);
    const CliResult resumed =
        runCli("train --config " + tmp.file("run4.json") + " --manifest " + manifest +
               " --out " + tmp.file("resumed") + " --resume " +
               tmp.file("run/ckpt_epoch_0001.tgmm"));
    REQUIRE(resumed.exit_code == 0);
    CHECK(testutil::slurpBytes(tmp.file("full/ckpt_epoch_0003.tgmm")) ==
          testutil::slurpBytes(tmp.file("resumed/ckpt_epoch_0003.tgmm")));
  }
}

TEST_CASE("gradcheck subcommand") {
  const CliResult r = runCli("gradcheck");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
  CHECK(r.output.find("tgm_single / learned_gaussian_mixture") != std::string::npos);
  CHECK(r.output.find("per_row") != std::string::npos);
  // frozen tensors are listed as skipped
  const bool skipped_layer0 =
      r.output.find("skipped: layer0.mu_hat layer0.sigma_hat") != std::string::npos;
  const bool skipped_layer1 =
      r.output.find("skipped: layer1.mu_hat layer1.sigma_hat") != std::string::npos;
  CHECK((skipped_layer0 || skipped_layer1));

  SUBCASE("injected-bug self-test detects and names the tensor") {
    const CliResult st = runCli("gradcheck --self-test");
    CHECK(st.exit_code == 0);
    CHECK(st.output.find("self-test ok") != std::string::npos);
    CHECK(st.output.find("layer0.omega") != std::string::npos);
  }
}

TEST_CASE("params subcommand") {
  testutil::TempDir tmp;
  writeFile(tmp.file("paper.json"), R"({
    "model": {
      "d": 1024, "num_classes": 65, "classifier": "per_class_linear",
      "layers": [
        {"form": "tgm_single", "c_in": 1, "c_out": 65, "L": 15, "M": 16, "d": 1024}
      ]
    }
  })");
  const CliResult r = runCli("params --config " + tmp.file("paper.json"));
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("1072") != std::string::npos);

  writeFile(tmp.file("conv.json"), R"({
    "model": {
      "d": 1024, "num_classes": 65, "classifier": "per_class_linear",
      "layers": [
        {"form": "conv1d_standard", "c_in": 1, "c_out": 65, "L": 15, "d": 1024}
      ]
    }
  })");
  const CliResult conv = runCli("params --config " + tmp.file("conv.json"));
  CHECK(conv.exit_code == 0);
  CHECK(conv.output.find("998400") != std::string::npos);

  SUBCASE("Gaussian-mixture rows are identical under --L 5 and --L 50") {
    const CliResult a = runCli("params --config " + tmp.file("paper.json") + " --L 5");
    const CliResult b = runCli("params --config " + tmp.file("paper.json") + " --L 50");
    CHECK(a.exit_code == 0);
    CHECK(a.output == b.output);
    const CliResult ca = runCli("params --config " + tmp.file("conv.json") + " --L 5");
    const CliResult cb = runCli("params --config " + tmp.file("conv.json") + " --L 50");
    CHECK(ca.output != cb.output);  // standard conv scales with L
  }
  SUBCASE("missing config exits 2") {
    const CliResult bad = runCli("params --config " + tmp.file("nope.json"));
    CHECK(bad.exit_code == 3);  // unreadable file is an I/O failure
  }
  SUBCASE("unknown key exits 2") {
    writeFile(tmp.file("typo.json"), R"({"model": {"d": 4, "num_classes": 2, "lyrs": []}})");
    const CliResult bad = runCli("params --config " + tmp.file("typo.json"));
    CHECK(bad.exit_code == 2);
  }
}

TEST_CASE("one-epoch smoke run on the default synthetic dataset finishes quickly") {
  testutil::TempDir tmp;
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(runCli("gen-synth --out " + tmp.file("data")).exit_code == 0);  // default spec
  CHECK(countFiles(tmp.file("data"), ".tgmf") == 200);
  CHECK(countFiles(tmp.file("data"), ".tgml") == 200);
  CHECK(fs::exists(tmp.file("data/manifest.json")));
  writeFile(tmp.file("run.json"), R"({
    "model": {
      "d": 16, "num_classes": 5, "classifier": "shared_linear",
      "layers": [
        {"form": "tgm_single", "c_in": 1, "c_out": 8, "L": 5, "M": 8, "d": 16},
        {"form": "tgm_grouped", "c_in": 8, "c_out": 8, "L": 5, "M": 8, "d": 16},
        {"form": "tgm_grouped", "c_in": 8, "c_out": 8, "L": 5, "M": 8, "d": 16}
      ]
    },
    "train": {"seed": 3}
  })");
  const CliResult r = runCli("train --config " + tmp.file("run.json") + " --manifest " +
                             tmp.file("data/manifest.json") + " --out " + tmp.file("run") +
                             " --epochs 1");
  CHECK(r.exit_code == 0);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  CHECK(fs::exists(tmp.file("run/ckpt_epoch_0000.tgmm")));
}
