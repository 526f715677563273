#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "usbrain/harness.hpp"
#include "usbrain/random.hpp"

using namespace usbrain;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::size_t> all_of(const Manifest& m) {
  std::vector<std::size_t> v(m.cases.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// In-memory manifest for split tests; no files are touched.
Manifest uniform_age_manifest(std::size_t n, std::uint64_t seed) {
  Manifest m;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    CaseRecord r;
    r.case_id = "c" + std::to_string(i);
    r.spec.ga_weeks = rng.uniform(14.0, 30.9);
    m.cases.push_back(r);
  }
  return m;
}

// A small dataset shared by the tests that read phantoms from disk.
class Dataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    DatasetOptions o;
    o.count = 24;
    o.seed = 11;
    manifest_ = new Manifest(make_dataset(o, dir_->path() / "data"));
  }
  static void TearDownTestSuite() {
    delete manifest_;
    delete dir_;
  }
  static TempDir* dir_;
  static Manifest* manifest_;
};

TempDir* Dataset::dir_ = nullptr;
Manifest* Dataset::manifest_ = nullptr;

}  // namespace

TEST(MakeDataset, RerunIsBitIdentical) {
  TempDir d;
  DatasetOptions o;
  o.count = 10;
  o.seed = 5;
  const Manifest a = make_dataset(o, d / "a");
  o.jobs = 3;
  const Manifest b = make_dataset(o, d / "b");
  EXPECT_EQ(slurp(d / "a" / "manifest.csv"), slurp(d / "b" / "manifest.csv"));
  for (const auto& c : a.cases)
    for (const auto& f : {c.volume_file, c.mask_file, c.pose_file})
      EXPECT_EQ(read_bytes(d / "a" / f), read_bytes(d / "b" / f)) << f;
  o.seed = 6;
  make_dataset(o, d / "c");
  EXPECT_NE(read_bytes(d / "a" / a.cases[0].volume_file), read_bytes(d / "c" / a.cases[0].volume_file));
}

TEST(MakeDataset, WeeksCycle) {
  TempDir d;
  DatasetOptions o;
  o.count = 17;
  o.ga_min = 14;
  o.ga_max = 30;
  o.grid = make_geometry(Dims{8, 8, 8}, 12.f, {-42.f, -42.f, -42.f});
  const Manifest m = make_dataset(o, d.path());
  std::multiset<int> weeks;
  for (const auto& c : m.cases) {
    weeks.insert(int(std::floor(c.spec.ga_weeks)));
    EXPECT_LT(c.spec.ga_weeks - std::floor(c.spec.ga_weeks), 0.9);
  }
  for (int w = 14; w <= 30; ++w) EXPECT_EQ(weeks.count(w), 1u) << w;
}

TEST(MakeDataset, ManifestMatchesSidecars) {
  TempDir d;
  DatasetOptions o;
  o.count = 6;
  o.seed = 9;
  make_dataset(o, d.path());
  const Manifest m = load_manifest(d.path());
  ASSERT_EQ(m.cases.size(), 6u);
  for (const auto& c : m.cases) {
    const PhantomSpec s = load_phantom_spec(d / c.pose_file);
    EXPECT_EQ(s.pose.euler().alpha, c.spec.pose.euler().alpha);
    EXPECT_EQ(s.pose.euler().beta, c.spec.pose.euler().beta);
    EXPECT_EQ(s.pose.euler().gamma, c.spec.pose.euler().gamma);
    EXPECT_EQ(s.ga_weeks, c.spec.ga_weeks);
    EXPECT_EQ(s.seed, c.spec.seed);
    // The stored truth is what the recorded spec regenerates.
    EXPECT_EQ(load_mask(d / c.mask_file).data, generate_phantom(s, desk_grid()).truth.data);
  }
}

TEST(MakeDataset, Errors) {
  TempDir d;
  DatasetOptions o;
  o.count = 0;
  EXPECT_ERRC(make_dataset(o, d.path()), Errc::InvalidConfig);
  o.count = 3;
  o.ga_min = 12;
  EXPECT_ERRC(make_dataset(o, d.path()), Errc::GaOutOfRange);
  EXPECT_ERRC(load_manifest(d / "nowhere"), Errc::IoFailure);
}

TEST(Split, DisjointAndBalanced) {
  const Manifest m = uniform_age_manifest(200, 1);
  const Split s = split_folds(m, SplitOptions{});
  ASSERT_EQ(s.folds.size(), 3u);
  EXPECT_EQ(s.holdout.size(), 50u);
  const std::set<std::size_t> held(s.holdout.begin(), s.holdout.end());
  EXPECT_EQ(held.size(), 50u);
  for (const auto& f : s.folds) {
    EXPECT_EQ(f.train.size(), 120u);
    EXPECT_EQ(f.val.size(), 30u);
    std::set<std::size_t> seen(held);
    for (auto i : f.train) EXPECT_TRUE(seen.insert(i).second) << i;
    for (auto i : f.val) EXPECT_TRUE(seen.insert(i).second) << i;
    EXPECT_GT(f.welch.p, 0.05);
  }
  EXPECT_NE(s.folds[0].train, s.folds[1].train);
}

TEST(Split, DeterministicAndPersisted) {
  const Manifest m = uniform_age_manifest(200, 2);
  SplitOptions o;
  o.seed = 3;
  const Split a = split_folds(m, o), b = split_folds(m, o);
  EXPECT_EQ(a.holdout, b.holdout);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(a.folds[f].train, b.folds[f].train);

  TempDir d;
  save_split(a, m, d / "split.csv");
  const Split c = load_split(m, d / "split.csv");
  EXPECT_EQ(c.holdout, a.holdout);
  ASSERT_EQ(c.folds.size(), 3u);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_EQ(c.folds[f].train, a.folds[f].train);
    EXPECT_EQ(c.folds[f].val, a.folds[f].val);
  }
}

TEST(Split, InsufficientCases) {
  const Manifest m = uniform_age_manifest(100, 4);
  EXPECT_ERRC(split_folds(m, SplitOptions{}), Errc::InsufficientCases);
  SplitOptions o;
  o.folds = 0;
  o.train = 10;
  EXPECT_ERRC(split_folds(m, o), Errc::InvalidConfig);
}

TEST(Preprocess, ShapesAndRange) {
  Volume v(make_geometry(Dims{20, 24, 28}, 2.f));
  Rng rng(1);
  for (auto& x : v.data) x = float(rng.uniform(-3, 7));
  const Tensor<float> t = preprocess_volume(v, 16);
  EXPECT_EQ(t.shape, (Shape{1, 1, 16, 16, 16}));
  for (float x : t.values) {
    EXPECT_GE(x, 0.f);
    EXPECT_LE(x, 1.f);
  }
  Mask m(v.geom);
  m.at(10, 12, 14) = 1;
  for (float x : preprocess_mask(m, 16).values) EXPECT_TRUE(x == 0.f || x == 1.f);
}

TEST(Preprocess, PostprocessRestoresGeometry) {
  const Geometry g = desk_grid();
  Tensor<float> p(Shape{1, 1, 16, 16, 16});
  for (auto& x : p.values) x = 0.25f;
  const Volume back = postprocess_probability(p, g);
  EXPECT_EQ(back.geom, g);
  for (float x : back.data) EXPECT_NEAR(x, 0.25f, 1e-6f);
  // At native size the map passes through untouched.
  Tensor<float> q(Shape{1, 1, 32, 32, 32});
  for (std::size_t i = 0; i < q.values.size(); ++i) q.values[i] = float(i % 7) / 7.f;
  EXPECT_EQ(postprocess_probability(q, g).data, q.values);
}

TEST_F(Dataset, TruthAsPredictionIsPerfect) {
  const auto idx = all_of(*manifest_);
  for (double t : {1e-6, 0.25, 0.5, 1.0}) {
    const FoldResult r = evaluate_truth(*manifest_, idx, t);
    for (const auto& c : r.cases) {
      EXPECT_EQ(c.dsc, 1.0) << t;
      ASSERT_TRUE(c.ed_mm && c.hd_mm);
      EXPECT_EQ(*c.ed_mm, 0.0);
      EXPECT_EQ(*c.hd_mm, 0.0);
    }
    EXPECT_EQ(r.summary.dsc.mean, 1.0);
    EXPECT_EQ(r.summary.dsc.std, 0.0);
  }
}

TEST_F(Dataset, AllOnesPrediction) {
  const auto idx = all_of(*manifest_);
  std::vector<Volume> probs;
  for (auto i : idx) {
    Volume v(load_mask(manifest_->dir / manifest_->cases[i].mask_file).geom);
    std::fill(v.data.begin(), v.data.end(), 1.f);
    probs.push_back(v);
  }
  const FoldResult r = evaluate_predictions(probs, *manifest_, idx, 0.5);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Mask truth = load_mask(manifest_->dir / manifest_->cases[idx[k]].mask_file);
    const double t = double(truth.count()), n = double(truth.data.size());
    EXPECT_NEAR(r.cases[k].dsc, 2 * t / (t + n), 1e-12);
  }
}

TEST_F(Dataset, EmptyPredictionIsExcludedFromDistances) {
  const std::vector<std::size_t> idx{0, 1};
  std::vector<Volume> probs{to_volume(load_mask(manifest_->dir / manifest_->cases[0].mask_file)),
                            Volume(desk_grid())};
  const FoldResult r = evaluate_predictions(probs, *manifest_, idx, 0.5);
  EXPECT_TRUE(r.cases[1].empty_prediction);
  EXPECT_FALSE(r.cases[1].ed_mm.has_value());
  EXPECT_EQ(r.cases[1].dsc, 0.0);
  EXPECT_EQ(r.summary.ed.count, 1u);
  EXPECT_EQ(r.summary.dsc.count, 2u);
  EXPECT_EQ(r.summary.dsc.mean, 0.5);
}

TEST_F(Dataset, CasesCsvRoundTrip) {
  const FoldResult r = evaluate_truth(*manifest_, all_of(*manifest_), 0.5);
  const fs::path p = dir_->path() / "cases.csv";
  write_cases_csv(p, r.cases);
  const auto back = read_cases_csv(p);
  ASSERT_EQ(back.size(), r.cases.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].case_id, r.cases[i].case_id);
    EXPECT_EQ(back[i].ga_weeks, r.cases[i].ga_weeks);
    EXPECT_EQ(back[i].euler, r.cases[i].euler);
    EXPECT_EQ(back[i].dsc, r.cases[i].dsc);
    EXPECT_EQ(back[i].sc, r.cases[i].sc);
    EXPECT_EQ(back[i].ed_mm, r.cases[i].ed_mm);
  }
}

TEST_F(Dataset, SweepIsAntitoneAndVerifies) {
  const auto idx = all_of(*manifest_);
  std::vector<Volume> probs;
  Rng rng(2);
  for (auto i : idx) {
    // Blur the truth into a soft map with noise.
    const Mask t = load_mask(manifest_->dir / manifest_->cases[i].mask_file);
    Volume v(t.geom);
    for (std::size_t k = 0; k < v.data.size(); ++k)
      v.data[k] = float(std::clamp(0.7 * t.data[k] + 0.3 * rng.uniform(), 0.0, 1.0));
    probs.push_back(v);
  }
  const fs::path out = dir_->path() / "sweep";
  const std::vector<double> ts{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto rows = threshold_sweep(probs, *manifest_, idx, ts, out);
  ASSERT_EQ(rows.size(), ts.size());
  for (std::size_t k = 1; k < rows.size(); ++k)
    for (std::size_t c = 0; c < idx.size(); ++c) EXPECT_LE(rows[k].voxels[c], rows[k - 1].voxels[c]);
  EXPECT_LT(rows[0].summary.dsc.mean, rows[2].summary.dsc.mean);
  std::size_t checked = 0;
  EXPECT_TRUE(verify_tables(out, &checked).empty());
  EXPECT_EQ(checked, 1u);
  EXPECT_ERRC(threshold_sweep(probs, *manifest_, idx, {1.5}, out), Errc::InvalidConfig);
}

TEST_F(Dataset, VerifyTablesDetectsTampering) {
  const fs::path out = dir_->path() / "tamper";
  fs::create_directories(out);
  const FoldResult r = evaluate_truth(*manifest_, all_of(*manifest_), 0.5);
  write_cases_csv(out / "cases.csv", r.cases);
  week_report(r.cases, out / "cases.csv", out);
  EXPECT_TRUE(verify_tables(out).empty());

  // Alter one per-case DSC: the week and pooled rows stop matching.
  std::string text = slurp(out / "cases.csv");
  const auto& victim = r.cases[3];
  const std::size_t at = text.find(victim.case_id + ",");
  ASSERT_NE(at, std::string::npos);
  std::size_t eol = text.find('\n', at);
  auto fields = std::string(text, at, eol - at);
  const std::size_t one = fields.find(",1,");
  ASSERT_NE(one, std::string::npos) << fields;
  fields.replace(one, 3, ",0.5,");
  text.replace(at, eol - at, fields);
  std::ofstream(out / "cases.csv", std::ios::trunc) << text;
  const auto issues = verify_tables(out);
  EXPECT_GE(issues.size(), 2u);
  for (const auto& i : issues) EXPECT_EQ(i.table.filename(), "week_report.csv");
}

TEST(Reports, PoseReportConstantDscIsNA) {
  TempDir d;
  std::vector<MetricsReport> rows(5);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].case_id = "c" + std::to_string(i);
    rows[i].euler = {double(i) * 10, -double(i), 3.0 * double(i * i)};
    rows[i].dsc = 0.9;
  }
  auto pc = pose_report(rows, d.path());
  for (const auto& r : pc.r) EXPECT_FALSE(r.has_value());
  EXPECT_NE(slurp(d / "pose_correlations.csv").find("alpha,NA,5"), std::string::npos);

  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].dsc = 0.8 + 0.01 * double(i);
  pc = pose_report(rows, d.path());
  ASSERT_TRUE(pc.r[0].has_value());
  EXPECT_NEAR(*pc.r[0], 1.0, 1e-12);
  EXPECT_NEAR(*pc.r[1], -1.0, 1e-12);
}

TEST(Reports, WeekMeansNearPooledMean) {
  TempDir d;
  Rng rng(8);
  std::vector<MetricsReport> rows;
  for (int i = 0; i < 170; ++i) {
    MetricsReport r;
    r.case_id = "c" + std::to_string(i);
    r.ga_weeks = 14 + i % 17 + 0.5;
    r.dsc = std::clamp(0.9 + 0.03 * rng.normal(), 0.0, 1.0);
    r.sc = r.dsc;
    r.ed_mm = 2.0 + rng.uniform();
    r.hd_mm = 6.0 + rng.uniform();
    rows.push_back(r);
  }
  write_cases_csv(d / "cases.csv", rows);
  const auto weeks = week_report(read_cases_csv(d / "cases.csv"), d / "cases.csv", d / "report");
  ASSERT_EQ(weeks.size(), 17u);
  const Summary pooled = summarize(rows);
  for (const auto& w : weeks) {
    EXPECT_EQ(w.summary.cases, 10u);
    EXPECT_LE(std::abs(w.summary.dsc.mean - pooled.dsc.mean), 2 * pooled.dsc.std) << w.week;
  }
  EXPECT_TRUE(verify_tables(d / "report").empty());
}

TEST(Reports, SummaryStatistics) {
  const Stat s = summarize(std::vector<double>{1, 2, 3, std::nan(""), 6});
  EXPECT_EQ(s.count, 4u);
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_NEAR(s.std, std::sqrt(14.0 / 3.0), 1e-12);
  EXPECT_EQ(summarize(std::vector<double>{4}).std, 0.0);
  EXPECT_EQ(summarize(std::vector<double>{}).count, 0u);
}

TEST(Reports, FormatDoubleRoundTrips) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1e3, 1e3) * std::pow(10.0, rng.uniform(-8, 8));
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Parallel, ResultIndependentOfJobs) {
  std::vector<double> a(100), b(100);
  parallel_for(100, 1, [&](std::size_t i) { a[i] = std::sqrt(double(i)); });
  parallel_for(100, 4, [&](std::size_t i) { b[i] = std::sqrt(double(i)); });
  EXPECT_EQ(a, b);
}

// ---------------------------------------------------------------- training

TEST(Train, ConfigErrors) {
  TrainConfig c;
  c.spec = NetworkSpec{16, 2, 3, 2};
  c.val_every = 0;
  EXPECT_ERRC(train(c, {}, {}), Errc::InvalidConfig);
  c.val_every = 10;
  c.patience_rounds = 0;
  EXPECT_ERRC(train(c, {}, {}), Errc::InvalidConfig);
  c.patience_rounds = 1;
  EXPECT_ERRC(train(c, {}, {}), Errc::InvalidConfig);
  Sample wrong{Tensor<float>(Shape{1, 1, 8, 8, 8}), Tensor<float>(Shape{1, 1, 8, 8, 8})};
  EXPECT_ERRC(train(c, {wrong}, {}), Errc::ShapeMismatch);
}

TEST_F(Dataset, TrainingConvergesAndIsDeterministic) {
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < manifest_->cases.size(); ++i) (i < 20 ? tr : va).push_back(i);
  const auto train_set = load_samples(*manifest_, tr, 32);
  const auto val_set = load_samples(*manifest_, va, 32);
  TrainConfig c;
  c.spec = NetworkSpec{32, 3, 3, 4};
  c.max_steps = 300;
  c.val_every = 100;
  c.patience_rounds = 10;
  c.seed = 1;
  std::size_t calls = 0;
  const TrainResult a = train(c, train_set, val_set, [&](std::size_t, double) { ++calls; });
  ASSERT_EQ(a.loss.size(), 300u);
  EXPECT_EQ(calls, 300u);
  for (double l : a.loss) {
    ASSERT_TRUE(std::isfinite(l));
    ASSERT_GE(l, 0.0);
    ASSERT_LE(l, 1.0);
  }
  double tail = 0.0;
  for (std::size_t i = 290; i < 300; ++i) tail += a.loss[i];
  tail /= 10.0;
  EXPECT_LT(tail, 0.15);
  EXPECT_LT(tail, a.loss.front());
  ASSERT_EQ(a.val_dsc.size(), 3u);
  EXPECT_EQ(a.val_dsc.back().first, 300u);

  // The kept network is the best validation round.
  const auto best = std::max_element(a.val_dsc.begin(), a.val_dsc.end(),
                                     [](auto& x, auto& y) { return x.second < y.second; });
  EXPECT_EQ(a.best_step, best->first);
  EXPECT_EQ(mean_dsc(a.best, val_set), best->second);

  c.max_steps = 120;
  const TrainResult b = train(c, train_set, val_set);
  EXPECT_TRUE(std::equal(b.loss.begin(), b.loss.end(), a.loss.begin()));
}

TEST_F(Dataset, EarlyStopping) {
  const auto s = load_samples(*manifest_, {0, 1}, 16);
  TrainConfig c;
  c.spec = NetworkSpec{16, 2, 3, 2};
  c.max_steps = 400;
  c.val_every = 1;
  c.patience_rounds = 1;
  const TrainResult r = train(c, s, s);
  // Patience 1 stops at the first round that fails to improve.
  ASSERT_TRUE(r.early_stopped);
  ASSERT_GE(r.val_dsc.size(), 2u);
  EXPECT_LE(r.val_dsc.back().second, r.val_dsc[r.val_dsc.size() - 2].second);
  EXPECT_LT(r.loss.size(), 400u);
}

TEST_F(Dataset, CrossvalDuplicateSpecsMatch) {
  const Split split = split_folds(*manifest_, SplitOptions{2, 6, 3, 4, 1});
  CrossvalConfig cfg;
  cfg.specs = {NamedSpec{'X', NetworkSpec{16, 2, 3, 2}, 0.0}, NamedSpec{'Y', NetworkSpec{16, 2, 3, 2}, 0.0}};
  cfg.train.max_steps = 20;
  cfg.train.val_every = 10;
  const fs::path out = dir_->path() / "cv";
  const auto rows = crossval_grid(cfg, *manifest_, split, out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].pooled.dsc.mean, rows[1].pooled.dsc.mean);
  EXPECT_EQ(rows[0].pooled.ed.mean, rows[1].pooled.ed.mean);
  ASSERT_EQ(rows[0].folds.size(), 2u);
  EXPECT_EQ(slurp(out / "0_X" / "fold1.csv"), slurp(out / "1_Y" / "fold1.csv"));
  std::set<std::size_t> ranks{rows[0].rank, rows[1].rank};
  EXPECT_EQ(ranks, (std::set<std::size_t>{1, 2}));
  std::size_t checked = 0;
  EXPECT_TRUE(verify_tables(out, &checked).empty());
  EXPECT_EQ(checked, 2u);
}

TEST_F(Dataset, BaselineTablesVerify) {
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  std::vector<Volume> probs;
  for (auto i : idx) probs.push_back(to_volume(load_mask(manifest_->dir / manifest_->cases[i].mask_file)));
  probs.push_back(Volume(desk_grid()));
  std::vector<std::size_t> with_empty = idx;
  with_empty.push_back(4);
  const fs::path out = dir_->path() / "baseline";
  const auto bc = compare_baseline(probs, *manifest_, with_empty, 0.5, out);
  EXPECT_EQ(bc.cnn.summary.dsc.mean, 0.8);
  EXPECT_TRUE(bc.ellipsoid.cases[4].empty_prediction);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_GT(bc.ellipsoid.cases[k].dsc, 0.7);
    EXPECT_LT(bc.ellipsoid.cases[k].dsc, 1.0);
    EXPECT_TRUE(fs::exists(out / "ellipsoids" / (manifest_->cases[k].case_id + ".ellipsoid.txt")));
  }
  EXPECT_TRUE(verify_tables(out).empty());
}

TEST_F(Dataset, HeatmapTruthHasNoErrors) {
  const std::vector<std::size_t> idx{0, 1, 2};
  std::vector<Mask> preds;
  for (auto i : idx) preds.push_back(load_mask(manifest_->dir / manifest_->cases[i].mask_file));
  const fs::path out = dir_->path() / "heat";
  const auto maps = heatmap_report(*manifest_, idx, preds, out);
  EXPECT_EQ(maps.back().first, "all");
  EXPECT_EQ(maps.back().second.count, 3u);
  for (const auto& [name, map] : maps)
    for (float v : map.fp.data) ASSERT_EQ(v, 0.f) << name;
  EXPECT_TRUE(fs::exists(out / "all.fp.axial.pgm"));
  EXPECT_TRUE(fs::exists(out / "heatmaps.csv"));
  EXPECT_ERRC(heatmap_report(*manifest_, idx, {}, out), Errc::LengthMismatch);
}

TEST(Pgm, HeaderAndPixels) {
  TempDir d;
  write_pgm(d / "x.pgm", 3, 2, {0.f, 0.5f, 1.f, 2.f, -1.f, 0.25f});
  const auto b = read_bytes(d / "x.pgm");
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(b.size(), head.size() + 6);
  EXPECT_EQ(std::string(b.begin(), b.begin() + std::ptrdiff_t(head.size())), head);
  const std::vector<unsigned char> px(b.begin() + std::ptrdiff_t(head.size()), b.end());
  EXPECT_EQ(px, (std::vector<unsigned char>{0, 128, 255, 255, 0, 64}));
  EXPECT_ERRC(write_pgm(d / "y.pgm", 2, 2, {0.f}), Errc::LengthMismatch);
}
