#pragma once

// Experiment orchestration: synthetic datasets, fold splits, training,
// evaluation, and the CSV reports built on top of them.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "usbrain/atlas.hpp"
#include "usbrain/metrics.hpp"
#include "usbrain/network.hpp"
#include "usbrain/volume.hpp"

namespace usbrain {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- dataset

struct CaseRecord {
  std::string case_id;
  PhantomSpec spec;
  std::string volume_file;  // relative to the dataset directory
  std::string mask_file;
  std::string pose_file;
};

struct Manifest {
  fs::path dir;
  std::vector<CaseRecord> cases;

  std::size_t index_of(const std::string& case_id) const;  // throws InvalidConfig
};

struct DatasetOptions {
  std::size_t count = 200;
  double ga_min = 14.0;  // integer weeks ga_min..ga_max are cycled
  double ga_max = 30.0;
  PoseRandomization pose;
  double noise_level = 0.3;
  double occlusion_strength = 0.5;
  std::uint64_t seed = 0;
  Geometry grid = desk_grid();
  unsigned jobs = 1;
};

// Writes case_XXXX.{vol,mask}.volb, case_XXXX.pose.txt and manifest.csv.
// Case i gets week ga_min + (i mod weeks) plus a seeded fraction below 0.9
// (dropped when it would leave the supported range).
Manifest make_dataset(const DatasetOptions& opts, const fs::path& outdir);
void save_manifest(const Manifest& m);
Manifest load_manifest(const fs::path& dir);

// ---------------------------------------------------------------- splits

struct SplitOptions {
  std::size_t folds = 3;
  std::size_t train = 120;
  std::size_t val = 30;
  std::size_t holdout = 50;
  std::uint64_t seed = 0;
};

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  WelchResult welch;  // hold-out vs train gestational ages
};

struct Split {
  std::vector<std::size_t> holdout;
  std::vector<Fold> folds;
};

// Hold-out drawn round-robin over integer weeks (seeded order within each
// week), then an independent seeded shuffle of the remaining cases per fold.
// Throws InsufficientCases.
Split split_folds(const Manifest& m, const SplitOptions& opts);
void save_split(const Split& s, const Manifest& m, const fs::path& path);
Split load_split(const Manifest& m, const fs::path& path);

// ---------------------------------------------------------------- training

struct Sample {
  Tensor<float> input;   // (1, 1, n, n, n), intensities in [0, 1]
  Tensor<float> target;  // same shape, {0, 1}
};

// Normalise, centre-crop to a cube, trilinear resample to n^3.
Tensor<float> preprocess_volume(const Volume& v, std::uint32_t n);
Tensor<float> preprocess_mask(const Mask& m, std::uint32_t n);
// Maps an n^3 probability map back onto the original grid.
Volume postprocess_probability(const Tensor<float>& prob, const Geometry& original);

Sample load_sample(const Manifest& m, std::size_t index, std::uint32_t n);
std::vector<Sample> load_samples(const Manifest& m, const std::vector<std::size_t>& idx,
                                 std::uint32_t n, unsigned jobs = 1);

struct TrainConfig {
  NetworkSpec spec;
  std::size_t max_steps = 3000;
  std::size_t val_every = 50;
  std::size_t patience_rounds = 1;  // validation rounds without improvement
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Network best;
  std::vector<double> loss;                             // per step
  std::vector<std::pair<std::size_t, double>> val_dsc;  // (step, mean DSC)
  std::size_t best_step = 0;
  bool early_stopped = false;
};

// Batch size 1, soft Dice loss, Adam. Samples are visited in a seeded
// permutation, reshuffled each epoch. Validation (mean DSC at 0.5) runs
// every val_every steps and at the end; the best round's weights are kept.
TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const std::function<void(std::size_t, double)>& on_step = {});

double mean_dsc(const Network& net, const std::vector<Sample>& set, double threshold = 0.5);

// ---------------------------------------------------------------- evaluation

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1); 0 for a single value
  std::size_t count = 0;
};

// NaN entries are treated as missing.
Stat summarize(const std::vector<double>& values);

struct Summary {
  Stat ed, hd, dsc, sc;
  std::size_t cases = 0;
};

Summary summarize(const std::vector<MetricsReport>& reports);

struct FoldResult {
  std::vector<MetricsReport> cases;
  Summary summary;
};

// Probability maps on each case's own grid.
std::vector<Volume> predict_cases(const Network& net, const Manifest& m,
                                  const std::vector<std::size_t>& idx, unsigned jobs = 1);

MetricsReport score_case(const Mask& pred, const Mask& truth, const CaseRecord& rec, double threshold);

FoldResult evaluate_predictions(const std::vector<Volume>& probs, const Manifest& m,
                                const std::vector<std::size_t>& idx, double threshold,
                                unsigned jobs = 1);
// Truth masks used as predictions: the pipeline identity check.
FoldResult evaluate_truth(const Manifest& m, const std::vector<std::size_t>& idx, double threshold);

// ---------------------------------------------------------------- tables

// Header comment lines ('# ...') written at the top of every CSV.
std::vector<std::string> protocol_notes();

void write_cases_csv(const fs::path& path, const std::vector<MetricsReport>& rows,
                     const std::vector<std::string>& notes = protocol_notes());
std::vector<MetricsReport> read_cases_csv(const fs::path& path);

// Aggregate tables share one layout: label, source, filter, cases, then
// mean/std/count for ed_mm, hd_mm, dsc, sc, then table-specific columns.
// `source` lists per-case CSVs (';'-separated, relative to the table);
// `filter` is empty, "threshold=<t>" or "week=<w>".
struct SummaryRow {
  std::string label;
  std::string source;
  std::string filter;
  Summary summary;
  std::vector<std::pair<std::string, std::string>> extra;
};

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows,
                       const std::vector<std::string>& notes = protocol_notes());

std::vector<MetricsReport> filter_reports(const std::vector<MetricsReport>& rows,
                                          const std::string& filter);

struct VerifyIssue {
  fs::path table;
  std::size_t row = 0;
  std::string message;
};

// Recomputes every aggregate table found under `dir` (recursively) from its
// per-case sources; returns the mismatches.
std::vector<VerifyIssue> verify_tables(const fs::path& dir, std::size_t* tables_checked = nullptr);

// ---------------------------------------------------------------- reports

struct CrossvalRow {
  NamedSpec spec;
  Summary pooled;
  std::vector<Summary> folds;
  std::size_t rank = 0;
};

struct CrossvalConfig {
  std::vector<NamedSpec> specs;
  std::optional<std::uint32_t> desk_n;  // replaces every spec's n
  TrainConfig train;                    // spec field ignored
  double threshold = 0.5;
  unsigned jobs = 1;
};

// Trains and evaluates every spec on every fold (validation cases as the
// test set), writes per-fold case CSVs under outdir/<label>/ and
// outdir/crossval.csv. Ranked by mean DSC, then lower HD, then lower ED.
std::vector<CrossvalRow> crossval_grid(const CrossvalConfig& cfg, const Manifest& m,
                                       const Split& split, const fs::path& outdir);

struct SweepRow {
  double threshold;
  Summary summary;
  std::vector<std::size_t> voxels;  // per case, predicted voxel count
};

std::vector<SweepRow> threshold_sweep(const std::vector<Volume>& probs, const Manifest& m,
                                      const std::vector<std::size_t>& idx,
                                      const std::vector<double>& thresholds,
                                      const fs::path& outdir, unsigned jobs = 1);

struct PoseCorrelation {
  std::array<std::optional<double>, 3> r;  // alpha, beta, gamma; empty when undefined
};

PoseCorrelation pose_report(const std::vector<MetricsReport>& rows, const fs::path& outdir);

struct WeekRow {
  int week;
  Summary summary;
};

// `cases_csv` is named as the source of every row of outdir/week_report.csv.
std::vector<WeekRow> week_report(const std::vector<MetricsReport>& rows, const fs::path& cases_csv,
                                 const fs::path& outdir);

// FP/FN maps per integer week and over all cases: VOLB1 + mid-slice PGMs.
std::vector<std::pair<std::string, FpFnMap>> heatmap_report(const Manifest& m,
                                                            const std::vector<std::size_t>& idx,
                                                            const std::vector<Mask>& preds,
                                                            const fs::path& outdir);

void write_pgm(const fs::path& path, std::uint32_t width, std::uint32_t height,
               const std::vector<float>& values);

struct BaselineComparison {
  FoldResult cnn;
  FoldResult ellipsoid;
};

// CNN thresholded at `threshold` vs an ellipsoid fitted to the same CNN
// probability map; writes cnn_cases.csv, ellipsoid_cases.csv, baseline.csv.
BaselineComparison compare_baseline(const std::vector<Volume>& probs, const Manifest& m,
                                    const std::vector<std::size_t>& idx, double threshold,
                                    const fs::path& outdir, unsigned jobs = 1);

// Runs fn(i) for i in [0, n) on `jobs` threads; results must be written to
// per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

std::string format_double(double v);

}  // namespace usbrain
