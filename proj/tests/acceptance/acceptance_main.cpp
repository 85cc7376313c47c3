// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one criterion per section, one PASS/FAIL line each, all
// tolerances pinned in code. Runs single-threaded. Exit code is the number
// of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../testutil.hpp"
#include "tgm/config.hpp"
#include "tgm/data.hpp"
#include "tgm/eval.hpp"
#include "tgm/model.hpp"
#include "tgm/train.hpp"

using namespace tgm;

namespace {

int g_failures = 0;

double secondsSince(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

// --- shared model builders -------------------------------------------------

ModelConfig tgm3Grouped(int L, int M, int C, int d, int num_classes, KernelSource source) {
  ModelConfig mc;
  mc.d = d;
  mc.num_classes = num_classes;
  mc.classifier = ClassifierKind::SharedLinear;
  LayerConfig l0;
  l0.form = LayerForm::TgmSingle;
  l0.source = source;
  l0.c_in = 1;
  l0.c_out = C;
  l0.L = L;
  l0.M = M;
  l0.d = d;
  LayerConfig l1 = l0;
  l1.form = LayerForm::TgmGrouped;
  l1.c_in = C;
  mc.layers = {l0, l1, l1};
  return mc;
}

ModelConfig tgm1Single(int L, int M, int C, int d, int num_classes) {
  ModelConfig mc;
  mc.d = d;
  mc.num_classes = num_classes;
  mc.classifier = ClassifierKind::SharedLinear;
  LayerConfig l0;
  l0.form = LayerForm::TgmSingle;
  l0.c_in = 1;
  l0.c_out = C;
  l0.L = L;
  l0.M = M;
  l0.d = d;
  mc.layers = {l0};
  return mc;
}

ModelConfig conv1Standard(int L, int C, int d, int num_classes) {
  ModelConfig mc;
  mc.d = d;
  mc.num_classes = num_classes;
  mc.classifier = ClassifierKind::SharedLinear;
  LayerConfig l0;
  l0.form = LayerForm::Conv1dStandard;
  l0.source = KernelSource::UnconstrainedFree;
  l0.c_in = 1;
  l0.c_out = C;
  l0.L = L;
  l0.M = 1;
  l0.d = d;
  mc.layers = {l0};
  return mc;
}

ModelConfig perFrameBaseline(int d, int num_classes) {
  ModelConfig mc;
  mc.d = d;
  mc.num_classes = num_classes;
  mc.classifier = ClassifierKind::SharedLinear;
  return mc;
}

double trainedValMap(const ModelConfig& mc, const Dataset& data, const TrainPlan& base_plan,
                     std::uint64_t seed) {
  Model model = initModel(mc, seed);
  TrainPlan plan = base_plan;
  plan.seed = seed;
  return fit(model, data, plan).log.back().val_map;
}

double medianOverSeeds(const std::function<double(std::uint64_t)>& run) {
  std::vector<double> v;
  for (std::uint64_t s = 1; s <= 5; ++s) v.push_back(run(s));
  std::sort(v.begin(), v.end());
  return v[2];
}

// --- criterion 1: gradient exactness ---------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  bool all_pass = true;
  double worst = 0.0;
  double worst_abs = 0.0;
  std::string worst_case;
  long combos = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<GradCheckCase> cases = gradCheckMatrix(seed * 7919);
    if (seed == 0) combos = static_cast<long>(cases.size());
    for (GradCheckCase& c : cases) {
      const GradCheckReport rep = gradCheck(c.model, c.features, c.labels);
      all_pass = all_pass && rep.pass;
      worst_abs = std::max(worst_abs, rep.max_abs_diff);
      if (rep.max_rel_err > worst) {
        worst = rep.max_rel_err;
        worst_case = c.name + " / " + rep.worst_parameter;
      }
      if (!rep.pass)
        std::printf("       gradient mismatch: %s (%s, rel err %.3e)\n", c.name.c_str(),
                    rep.worst_parameter.c_str(), rep.max_rel_err);
    }
  }
  const double secs = secondsSince(t0);
  const bool in_time = secs < 120.0;
  char detail[288];
  std::snprintf(detail, sizeof(detail),
                "%ld combinations x 20 seeds, h=1e-5, tol 1e-5; worst non-exempt rel err %.2e"
                " [%s], worst |analytic - numeric| %.1e; %.1fs < 120s %s",
                combos, worst, worst_case.empty() ? "none above the 1e-8 floor" : worst_case.c_str(),
                worst_abs, secs, in_time ? "yes" : "NO");
  report(1, all_pass && in_time, "gradient exactness for every LayerForm x KernelSource", detail);
}

// --- criterion 2: kernel normalization over 10,000 draws --------------------

void criterion2() {
  Rng rng(20240615);
  long draws = 0;
  double worst_sum_dev = 0.0;
  double min_entry = 1.0;
  bool ok = true;
  while (draws < 10000) {
    const int L = 1 + static_cast<int>(rng.bounded(30));
    const int M = 1 + static_cast<int>(rng.bounded(8));
    const int nr = 1 + static_cast<int>(rng.bounded(6));
    const bool per_row = rng.bounded(2) == 1;
    const int n_gauss = per_row ? nr * M : M;
    GaussianParams gp;
    gp.L = L;
    gp.M = M;
    gp.mu_hat = oracle::randomVector(rng, n_gauss, 4.0);
    gp.sigma_hat.resize(n_gauss);
    for (int i = 0; i < n_gauss; ++i) gp.sigma_hat(i) = rng.uniform(-12.0, 12.0);
    const Matrix omega = oracle::randomMatrix(rng, nr, M, 3.0);
    const KernelBank bank =
        buildGaussianBank(gp, omega, per_row ? MixLayout::PerRow : MixLayout::Shared, false);
    for (Index r = 0; r < bank.k_hat.rows(); ++r) {
      const double dev = std::abs(bank.k_hat.row(r).sum() - 1.0);
      worst_sum_dev = std::max(worst_sum_dev, dev);
      min_entry = std::min(min_entry, bank.k_hat.row(r).minCoeff());
      ok = ok && dev < 1e-9 && bank.k_hat.row(r).minCoeff() > 0.0;
    }
    for (Index r = 0; r < bank.rows.rows(); ++r) {
      const double dev = std::abs(bank.rows.row(r).sum() - 1.0);
      worst_sum_dev = std::max(worst_sum_dev, dev);
      min_entry = std::min(min_entry, bank.rows.row(r).minCoeff());
      ok = ok && dev < 1e-9 && bank.rows.row(r).minCoeff() > 0.0;
    }
    ++draws;
  }
  char detail[192];
  std::snprintf(detail, sizeof(detail),
                "10000 parameter draws; worst |row sum - 1| = %.2e (< 1e-9), smallest entry"
                " %.2e (> 0)",
                worst_sum_dev, min_entry);
  report(2, ok, "kernel rows and mixed kernels are unit-sum and strictly positive", detail);
}

// --- criterion 3: forward oracle equivalence -------------------------------

void criterion3() {
  Rng rng(33001);
  double worst = 0.0;
  bool ok = true;
  const LayerForm forms[] = {LayerForm::Conv1dStandard,      LayerForm::Conv1dSharedGaussian,
                             LayerForm::Conv1dPerChannelGaussian, LayerForm::TgmSingle,
                             LayerForm::TgmGrouped,          LayerForm::TgmChannelCombine1x1,
                             LayerForm::TgmChannelCombineSoft,    LayerForm::TcUnconstrained};
  for (LayerForm form : forms) {
    for (int it = 0; it < 100; ++it) {
      const int t = 2 + static_cast<int>(rng.bounded(15));   // <= 16
      const int d = 1 + static_cast<int>(rng.bounded(8));    // <= 8
      const int L = 1 + static_cast<int>(rng.bounded(5));    // <= 5
      const int c_out = 1 + static_cast<int>(rng.bounded(4));
      const int c_in = 1 + static_cast<int>(rng.bounded(4));
      LayerConfig c;
      c.form = form;
      c.source = (form == LayerForm::Conv1dStandard || form == LayerForm::TcUnconstrained)
                     ? KernelSource::UnconstrainedFree
                     : KernelSource::LearnedGaussianMixture;
      c.L = L;
      c.M = 2;
      c.d = d;
      c.c_in = (isConv1dForm(form) || form == LayerForm::TgmSingle) ? 1 : c_in;
      c.c_out = form == LayerForm::TgmGrouped ? c.c_in : c_out;
      LayerParams p = initLayerParams(c, rng);
      ChannelStack in;
      for (int j = 0; j < c.c_in; ++j) in.push_back(oracle::randomMatrix(rng, d, t));
      LayerCache cache;
      const ChannelStack out = layerForward(c, p, in, &cache);

      ChannelStack expect;
      switch (form) {
        case LayerForm::Conv1dStandard:
        case LayerForm::Conv1dPerChannelGaussian: {
          std::vector<Matrix> kernels;
          for (int i = 0; i < c.c_out; ++i) {
            Matrix k(d, L);
            for (int dd = 0; dd < d; ++dd) k.row(dd) = cache.rows.row(i * d + dd);
            kernels.push_back(std::move(k));
          }
          const Matrix o = oracle::conv1d(in[0], kernels);
          for (int i = 0; i < c.c_out; ++i) expect.push_back(o.row(i));
          break;
        }
        case LayerForm::Conv1dSharedGaussian: {
          std::vector<Matrix> kernels;
          for (int i = 0; i < c.c_out; ++i)
            kernels.push_back(Matrix(cache.rows.row(i).replicate(d, 1)));
          const Matrix o = oracle::conv1d(in[0], kernels);
          for (int i = 0; i < c.c_out; ++i) expect.push_back(o.row(i));
          break;
        }
        case LayerForm::TgmSingle:
          for (int i = 0; i < c.c_out; ++i)
            expect.push_back(oracle::tcCorrelate(in[0], cache.rows.row(i)));
          break;
        case LayerForm::TgmGrouped:
          for (int i = 0; i < c.c_out; ++i)
            expect.push_back(oracle::tcCorrelate(in[i], cache.rows.row(i)));
          break;
        default: {
          std::vector<Vector> kernels;
          for (int r = 0; r < c.c_out * c.c_in; ++r) kernels.push_back(cache.rows.row(r));
          expect = oracle::channelCombine(in, kernels, p.combine_w,
                                          form != LayerForm::TgmChannelCombineSoft);
          break;
        }
      }
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double diff = (out[i] - expect[i]).cwiseAbs().maxCoeff();
        worst = std::max(worst, diff);
        ok = ok && diff < 1e-12;
      }
    }
  }
  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "8 forms x 100 random instances; worst |impl - naive| = %.2e (< 1e-12)", worst);
  report(3, ok, "layer forwards match naive nested-loop references", detail);
}

// --- criterion 4: parameter-count claims ------------------------------------

void criterion4() {
  LayerConfig tgm;
  tgm.form = LayerForm::TgmSingle;
  tgm.c_in = 1;
  tgm.c_out = 65;
  tgm.L = 15;
  tgm.M = 16;
  tgm.d = 1024;
  const long tgm_params = paramCount(tgm);

  LayerConfig conv;
  conv.form = LayerForm::Conv1dStandard;
  conv.source = KernelSource::UnconstrainedFree;
  conv.c_in = 1;
  conv.c_out = 65;
  conv.L = 15;
  conv.d = 1024;
  const long conv_params = paramCount(conv);

  const double ratio = static_cast<double>(conv_params) / static_cast<double>(tgm_params);

  bool l_independent = true;
  for (LayerForm form :
       {LayerForm::Conv1dSharedGaussian, LayerForm::Conv1dPerChannelGaussian,
        LayerForm::TgmSingle, LayerForm::TgmGrouped, LayerForm::TgmChannelCombine1x1,
        LayerForm::TgmChannelCombineSoft})
    for (KernelSource source :
         {KernelSource::LearnedGaussianMixture, KernelSource::FixedGaussianMixture,
          KernelSource::FixedRandomFilters})
      for (bool per_row : {false, true}) {
        LayerConfig a;
        a.form = form;
        a.source = source;
        a.per_row_gaussians = per_row;
        a.c_in = (isConv1dForm(form) || form == LayerForm::TgmSingle) ? 1 : 7;
        a.c_out = 7;
        a.M = 16;
        a.d = 24;
        LayerConfig b = a;
        a.L = 5;
        b.L = 50;
        l_independent = l_independent && paramCount(a) == paramCount(b);
      }

  const bool ok = tgm_params == 1072 && conv_params == 998400 && ratio > 900.0 && l_independent;
  char detail[192];
  std::snprintf(detail, sizeof(detail),
                "tgm_single(M=16,C=65)=%ld (=1072), conv1d(D=1024,C=65,L=15)=%ld (=998400),"
                " ratio %.0fx (>900); L=5 vs L=50 identical in all Gaussian modes: %s",
                tgm_params, conv_params, ratio, l_independent ? "yes" : "NO");
  report(4, ok, "parameter-count claims", detail);
}

// --- criteria 5 and 6: temporal-structure learning and ablation ordering ----

void criteria5and6(const Dataset& default_data) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainPlan plan;
  plan.epochs = 16;
  plan.base_lr = 0.01;

  const double base_map = medianOverSeeds([&](std::uint64_t s) {
    return trainedValMap(perFrameBaseline(16, 5), default_data, plan, s);
  });
  const double tgm_map = medianOverSeeds([&](std::uint64_t s) {
    return trainedValMap(tgm3Grouped(5, 8, 8, 16, 5, KernelSource::LearnedGaussianMixture),
                         default_data, plan, s);
  });
  const double secs5 = secondsSince(t0);
  {
    const bool ok = tgm_map >= base_map + 0.20 && secs5 < 600.0;
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "median over 5 seeds: 3-layer TGM (L=5,M=8,C=8) mAP %.3f vs per-frame"
                  " baseline %.3f, gap %.3f (>= 0.20); %.0fs < 600s",
                  tgm_map, base_map, tgm_map - base_map, secs5);
    report(5, ok, "temporal-structure learning beats the per-frame baseline", detail);
  }

  const double fixed_gauss = medianOverSeeds([&](std::uint64_t s) {
    return trainedValMap(tgm3Grouped(5, 8, 8, 16, 5, KernelSource::FixedGaussianMixture),
                         default_data, plan, s);
  });
  const double fixed_random = medianOverSeeds([&](std::uint64_t s) {
    return trainedValMap(tgm3Grouped(5, 8, 8, 16, 5, KernelSource::FixedRandomFilters),
                         default_data, plan, s);
  });
  {
    const double spread = tgm_map - fixed_random;
    const bool ok = fixed_random <= fixed_gauss && fixed_gauss <= tgm_map && spread >= 0.02;
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "median mAP: random filters %.3f <= fixed Gaussians %.3f <= learned %.3f,"
                  " spread %.3f (>= 0.02)",
                  fixed_random, fixed_gauss, tgm_map, spread);
    report(6, ok, "ablation ordering of kernel sources", detail);
  }
}

// --- criterion 7: long-L robustness -----------------------------------------

void criterion7() {
  // Small-sample instantiation of the planted-offset task: at the 200-video
  // default both families saturate at every delay-covering L and the
  // contrast the criterion describes is not measurable. 30 videos puts the
  // 25-tap unconstrained kernels (3200 raw weights) against ~2400 training
  // frames while the Gaussian parameterization stays small.
  SynthSpec spec;
  spec.num_videos = 30;
  const Dataset data = genSynthetic(spec);

  TrainPlan plan;
  plan.epochs = 30;
  plan.base_lr = 0.03;

  const int grid[] = {9, 17, 25};
  double tgm_best = 0.0, tgm_25 = 0.0, conv_best = 0.0, conv_25 = 0.0;
  std::string grid_detail;
  for (int L : grid) {
    const double tgm = medianOverSeeds([&](std::uint64_t s) {
      return trainedValMap(tgm1Single(L, 16, 8, 16, 5), data, plan, s);
    });
    const double conv = medianOverSeeds([&](std::uint64_t s) {
      return trainedValMap(conv1Standard(L, 8, 16, 5), data, plan, s);
    });
    tgm_best = std::max(tgm_best, tgm);
    conv_best = std::max(conv_best, conv);
    if (L == 25) {
      tgm_25 = tgm;
      conv_25 = conv;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), " L=%d: tgm %.3f conv %.3f;", L, tgm, conv);
    grid_detail += buf;
  }
  const double tgm_drop = tgm_best - tgm_25;
  const double conv_drop = conv_best - conv_25;
  const bool ok = tgm_drop < 0.10 && conv_drop > tgm_drop;
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "medians over 5 seeds:%s TGM drop at L=25 %.3f (< 0.10), conv drop %.3f"
                " (> TGM)",
                grid_detail.c_str(), tgm_drop, conv_drop);
  report(7, ok, "long-L robustness: Gaussian kernels degrade less than raw taps", detail);
}

// --- criterion 8: metric oracle ----------------------------------------------

void criterion8() {
  Rng rng(88);
  bool ok = true;
  double worst = 0.0;
  long patterns = 0;
  for (int n = 1; n <= 8; ++n) {
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<int> labels(n);
      Vector lv(n);
      for (int i = 0; i < n; ++i) {
        labels[i] = (mask >> i) & 1;
        lv(i) = labels[i];
      }
      std::vector<double> distinct(n), tied(n);
      for (int i = 0; i < n; ++i) {
        distinct[i] = rng.normal();
        tied[i] = static_cast<double>(rng.bounded(3));
      }
      for (const auto& s : {distinct, tied}) {
        Vector sv(n);
        for (int i = 0; i < n; ++i) sv(i) = s[i];
        const double got = *averagePrecision(sv, lv);
        const double expect = *oracle::averagePrecision(s, labels);
        const double diff = std::abs(got - expect);
        worst = std::max(worst, diff);
        ok = ok && diff < 1e-14;  // summation order differs by at most an ulp
        ++patterns;
      }
    }
  }
  Vector scores(3), labels(3);
  scores << 0.9, 0.8, 0.1;
  labels << 0, 1, 1;
  const double worked = *averagePrecision(scores, labels);
  const bool worked_ok = std::abs(worked - 0.583333333333333333) <= 1e-9;
  ok = ok && worked_ok;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "%ld label patterns vs exhaustive reference, worst diff %.1e; worked example"
                " AP=%.9f (0.583333333 +- 1e-9)",
                patterns, worst, worked);
  report(8, ok, "average precision matches the exhaustive reference", detail);
}

// --- criterion 9: determinism and formats ------------------------------------

void criterion9() {
  testutil::TempDir tmp;
  bool ok = true;
  std::string notes;

  // bit-reproducible training: checkpoints byte for byte, logs byte for byte
  // up to the wall_ms diagnostic
  SynthSpec spec;
  spec.num_videos = 12;
  spec.t_min = 30;
  spec.t_max = 40;
  spec.seed = 9;
  const Dataset data = genSynthetic(spec);
  const ModelConfig mc = tgm3Grouped(5, 4, 4, 16, 5, KernelSource::LearnedGaussianMixture);
  TrainPlan plan;
  plan.epochs = 3;
  plan.seed = 4;
  std::vector<FitResult> results;
  for (const char* run : {"a", "b"}) {
    Model m = initModel(mc, plan.seed);
    FitOptions opts;
    opts.out_dir = tmp.file(run);
    results.push_back(fit(m, data, plan, opts));
  }
  bool logs_identical = results[0].log.size() == results[1].log.size();
  for (std::size_t e = 0; logs_identical && e < results[0].log.size(); ++e) {
    const EpochRecord& a = results[0].log[e];
    const EpochRecord& b = results[1].log[e];
    logs_identical = a.epoch == b.epoch && a.lr == b.lr && a.mean_loss == b.mean_loss &&
                     a.val_map == b.val_map;
  }
  const bool train_identical =
      logs_identical && testutil::slurpBytes(tmp.file("a/ckpt_epoch_0002.tgmm")) ==
                            testutil::slurpBytes(tmp.file("b/ckpt_epoch_0002.tgmm"));
  ok = ok && train_identical;
  notes += std::string("fixed-seed training bit-identical: ") + (train_identical ? "yes" : "NO");

  // TGMF/TGML round trips
  saveFeatures(tmp.file("x.tgmf"), data.features[0]);
  saveFeatures(tmp.file("y.tgmf"), loadFeatures(tmp.file("x.tgmf")));
  const bool tgmf_ok =
      testutil::slurpBytes(tmp.file("x.tgmf")) == testutil::slurpBytes(tmp.file("y.tgmf"));
  saveLabels(tmp.file("x.tgml"), data.labels[0]);
  saveLabels(tmp.file("y.tgml"), loadLabels(tmp.file("x.tgml")));
  const bool tgml_ok =
      testutil::slurpBytes(tmp.file("x.tgml")) == testutil::slurpBytes(tmp.file("y.tgml"));

  // TGMM round trip
  Model m = initModel(mc, 77);
  saveCheckpoint(m, tmp.file("x.tgmm"));
  saveCheckpoint(loadCheckpoint(tmp.file("x.tgmm")), tmp.file("y.tgmm"));
  const bool tgmm_ok =
      testutil::slurpBytes(tmp.file("x.tgmm")) == testutil::slurpBytes(tmp.file("y.tgmm"));

  ok = ok && tgmf_ok && tgml_ok && tgmm_ok;
  char detail[160];
  std::snprintf(detail, sizeof(detail), "%s; round-trips bit-exact: TGMF %s, TGML %s, TGMM %s",
                notes.c_str(), tgmf_ok ? "yes" : "NO", tgml_ok ? "yes" : "NO",
                tgmm_ok ? "yes" : "NO");
  report(9, ok, "determinism and file formats", detail);
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  if (argc > 2 && std::strcmp(argv[1], "--only") == 0) only = std::atoi(argv[2]);
  const auto t0 = std::chrono::steady_clock::now();

  const auto want = [&](int n) { return only == 0 || only == n; };

  if (want(1)) criterion1();
  if (want(2)) criterion2();
  if (want(3)) criterion3();
  if (want(4)) criterion4();
  if (want(5) || want(6)) {
    const Dataset default_data = genSynthetic(SynthSpec{});
    criteria5and6(default_data);
  }
  if (want(7)) criterion7();
  if (want(8)) criterion8();
  if (want(9)) criterion9();

  std::printf("%d criterion(s) failed; total %.1fs\n", g_failures, secondsSince(t0));
  return g_failures;
}
