#include "usbrain/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "usbrain/adam.hpp"
#include "usbrain/baseline.hpp"
#include "usbrain/error.hpp"
#include "usbrain/random.hpp"

namespace usbrain {

namespace {

const char* const kManifestHeader =
    "case_id,ga_weeks,alpha,beta,gamma,scale,tx,ty,tz,noise_level,occlusion_strength,seed,volume,"
    "mask,pose";
const char* const kCasesHeader = "case_id,ga_weeks,alpha,beta,gamma,threshold,ed_mm,hd_mm,dsc,sc";
const char* const kSummaryHeadPrefix = "label,source,filter,cases,";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw Error(Errc::InvalidConfig, "bad number for " + what + ": '" + s + "'");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  return f;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return f;
}

// Data lines of a CSV, comments and blank lines dropped; the header first.
std::vector<std::string> csv_lines(const fs::path& path) {
  auto f = open_in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

int week_of(double ga) { return int(std::floor(ga)); }

std::string case_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04zu", i);
  return buf;
}

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

void append_stat(std::ostringstream& os, const Stat& s) {
  os << ',' << (s.count ? format_double(s.mean) : "") << ',' << (s.count ? format_double(s.std) : "")
     << ',' << s.count;
}

std::vector<double> values_of(const std::vector<MetricsReport>& rows,
                              double (*get)(const MetricsReport&)) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (const auto& r : rows) v.push_back(get(r));
  return v;
}

Dims cube_of(const Dims& d) {
  const std::uint32_t side = std::min({d.d, d.h, d.w});
  return Dims{side, side, side};
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = unsigned(std::min<std::size_t>(jobs, n));
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------- dataset

std::size_t Manifest::index_of(const std::string& case_id) const {
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (cases[i].case_id == case_id) return i;
  throw Error(Errc::InvalidConfig, "unknown case " + case_id);
}

Manifest make_dataset(const DatasetOptions& opts, const fs::path& outdir) {
  if (opts.count == 0) throw Error(Errc::InvalidConfig, "dataset count must be positive");
  const int first = int(std::ceil(opts.ga_min));
  const int last = int(std::floor(opts.ga_max));
  if (first < kGaMinWeeks || last > kGaMaxWeeks || last < first)
    throw Error(Errc::GaOutOfRange, "gestational week range must lie within [14, 31]");
  const int weeks = last - first + 1;
  opts.grid.validate();

  Manifest m;
  m.dir = outdir;
  m.cases.resize(opts.count);
  for (std::size_t i = 0; i < opts.count; ++i) {
    Rng rng(derive_seed(opts.seed, i));
    CaseRecord& rec = m.cases[i];
    rec.case_id = case_name(i);
    const int week = first + int(i % std::size_t(weeks));
    const double frac = 0.9 * rng.uniform();
    rec.spec.ga_weeks = week + frac <= kGaMaxWeeks ? week + frac : double(week);
    rec.spec.pose = random_pose(rng, opts.pose);
    rec.spec.noise_level = opts.noise_level;
    rec.spec.occlusion_strength = opts.occlusion_strength;
    rec.spec.seed = derive_seed(derive_seed(opts.seed, i), 1);
    rec.spec.validate();
    rec.volume_file = rec.case_id + ".vol.volb";
    rec.mask_file = rec.case_id + ".mask.volb";
    rec.pose_file = rec.case_id + ".pose.txt";
  }
  fs::create_directories(outdir);
  parallel_for(opts.count, opts.jobs, [&](std::size_t i) {
    const CaseRecord& rec = m.cases[i];
    const Phantom ph = generate_phantom(rec.spec, opts.grid);
    save_volume(ph.volume, outdir / rec.volume_file);
    save_mask(ph.truth, outdir / rec.mask_file);
    save_phantom_spec(rec.spec, outdir / rec.pose_file);
  });
  save_manifest(m);
  return m;
}

void save_manifest(const Manifest& m) {
  auto f = open_out(m.dir / "manifest.csv");
  f << "# euler: intrinsic Z-Y-X degrees; pose maps scan coordinates to canonical pose\n";
  f << kManifestHeader << '\n';
  for (const auto& c : m.cases) {
    const auto& e = c.spec.pose.euler();
    const auto& t = c.spec.pose.translation();
    f << c.case_id << ',' << format_double(c.spec.ga_weeks) << ',' << format_double(e.alpha) << ','
      << format_double(e.beta) << ',' << format_double(e.gamma) << ','
      << format_double(c.spec.pose.scale()) << ',' << format_double(t[0]) << ','
      << format_double(t[1]) << ',' << format_double(t[2]) << ','
      << format_double(c.spec.noise_level) << ',' << format_double(c.spec.occlusion_strength) << ','
      << c.spec.seed << ',' << c.volume_file << ',' << c.mask_file << ',' << c.pose_file << '\n';
  }
  if (!f) throw Error(Errc::IoFailure, "short write to manifest");
}

Manifest load_manifest(const fs::path& dir) {
  const auto lines = csv_lines(dir / "manifest.csv");
  if (lines.empty() || lines[0] != kManifestHeader)
    throw Error(Errc::InvalidConfig, "manifest header mismatch in " + dir.string());
  Manifest m;
  m.dir = dir;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv(lines[i]);
    if (f.size() != 15) throw Error(Errc::InvalidConfig, "manifest row " + std::to_string(i) + " malformed");
    CaseRecord rec;
    rec.case_id = f[0];
    rec.spec.ga_weeks = parse_double(f[1], "ga_weeks");
    const EulerAngles e{parse_double(f[2], "alpha"), parse_double(f[3], "beta"),
                        parse_double(f[4], "gamma"), false};
    rec.spec.pose = SimilarityTransform(
        e, parse_double(f[5], "scale"),
        Vec3(parse_double(f[6], "tx"), parse_double(f[7], "ty"), parse_double(f[8], "tz")));
    rec.spec.noise_level = parse_double(f[9], "noise_level");
    rec.spec.occlusion_strength = parse_double(f[10], "occlusion_strength");
    rec.spec.seed = std::stoull(f[11]);
    rec.volume_file = f[12];
    rec.mask_file = f[13];
    rec.pose_file = f[14];
    rec.spec.validate();
    m.cases.push_back(std::move(rec));
  }
  return m;
}

// ---------------------------------------------------------------- splits

namespace {

WelchResult ga_welch(const Manifest& m, const std::vector<std::size_t>& a,
                     const std::vector<std::size_t>& b) {
  std::vector<double> x, y;
  for (auto i : a) x.push_back(m.cases[i].spec.ga_weeks);
  for (auto i : b) y.push_back(m.cases[i].spec.ga_weeks);
  try {
    return welch_t(x, y);
  } catch (const Error&) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return WelchResult{nan, nan, nan};
  }
}

}  // namespace

Split split_folds(const Manifest& m, const SplitOptions& opts) {
  if (opts.folds == 0) throw Error(Errc::InvalidConfig, "at least one fold is required");
  if (opts.holdout + opts.train + opts.val > m.cases.size())
    throw Error(Errc::InsufficientCases, "hold-out + train + val exceeds the " +
                                             std::to_string(m.cases.size()) + " available cases");
  std::map<int, std::vector<std::size_t>> by_week;
  for (std::size_t i = 0; i < m.cases.size(); ++i) by_week[week_of(m.cases[i].spec.ga_weeks)].push_back(i);
  Rng rng(derive_seed(opts.seed, 0));
  for (auto& [w, v] : by_week) rng.shuffle(v);

  Split s;
  std::map<int, std::size_t> taken;
  while (s.holdout.size() < opts.holdout) {
    for (auto& [w, v] : by_week) {
      if (s.holdout.size() == opts.holdout) break;
      if (taken[w] < v.size()) s.holdout.push_back(v[taken[w]++]);
    }
  }
  std::sort(s.holdout.begin(), s.holdout.end());
  const std::set<std::size_t> held(s.holdout.begin(), s.holdout.end());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < m.cases.size(); ++i)
    if (!held.count(i)) pool.push_back(i);

  for (std::size_t f = 0; f < opts.folds; ++f) {
    Rng fr(derive_seed(opts.seed, 1 + f));
    std::vector<std::size_t> perm = pool;
    fr.shuffle(perm);
    Fold fold;
    fold.train.assign(perm.begin(), perm.begin() + std::ptrdiff_t(opts.train));
    fold.val.assign(perm.begin() + std::ptrdiff_t(opts.train),
                    perm.begin() + std::ptrdiff_t(opts.train + opts.val));
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
    fold.welch = ga_welch(m, s.holdout, fold.train);
    s.folds.push_back(std::move(fold));
  }
  return s;
}

void save_split(const Split& s, const Manifest& m, const fs::path& path) {
  auto f = open_out(path);
  f << "# hold-out: round-robin over integer gestational weeks; folds: seeded shuffles of the rest\n";
  for (std::size_t i = 0; i < s.folds.size(); ++i) {
    const auto& w = s.folds[i].welch;
    f << "# welch hold-out vs fold" << i << " train ga: t=" << format_double(w.t)
      << " p=" << format_double(w.p) << " df=" << format_double(w.df) << '\n';
  }
  f << "case_id,ga_weeks,holdout";
  for (std::size_t i = 0; i < s.folds.size(); ++i) f << ",fold" << i;
  f << '\n';
  const std::set<std::size_t> held(s.holdout.begin(), s.holdout.end());
  std::vector<std::map<std::size_t, const char*>> roles(s.folds.size());
  for (std::size_t i = 0; i < s.folds.size(); ++i) {
    for (auto c : s.folds[i].train) roles[i][c] = "train";
    for (auto c : s.folds[i].val) roles[i][c] = "val";
  }
  for (std::size_t c = 0; c < m.cases.size(); ++c) {
    f << m.cases[c].case_id << ',' << format_double(m.cases[c].spec.ga_weeks) << ','
      << (held.count(c) ? 1 : 0);
    for (std::size_t i = 0; i < s.folds.size(); ++i) {
      auto it = roles[i].find(c);
      f << ',' << (it == roles[i].end() ? "" : it->second);
    }
    f << '\n';
  }
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

Split load_split(const Manifest& m, const fs::path& path) {
  const auto lines = csv_lines(path);
  if (lines.empty()) throw Error(Errc::InvalidConfig, "empty split file " + path.string());
  const auto head = split_csv(lines[0]);
  if (head.size() < 3 || head[0] != "case_id" || head[2] != "holdout")
    throw Error(Errc::InvalidConfig, "split header mismatch in " + path.string());
  Split s;
  s.folds.resize(head.size() - 3);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = split_csv(lines[r]);
    if (f.size() != head.size()) throw Error(Errc::InvalidConfig, "split row malformed: " + lines[r]);
    const std::size_t c = m.index_of(f[0]);
    if (f[2] == "1") s.holdout.push_back(c);
    for (std::size_t i = 0; i < s.folds.size(); ++i) {
      if (f[3 + i] == "train") s.folds[i].train.push_back(c);
      else if (f[3 + i] == "val") s.folds[i].val.push_back(c);
    }
  }
  std::sort(s.holdout.begin(), s.holdout.end());
  for (auto& fold : s.folds) {
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.val.begin(), fold.val.end());
    fold.welch = ga_welch(m, s.holdout, fold.train);
  }
  return s;
}

// ---------------------------------------------------------------- training

Tensor<float> preprocess_volume(const Volume& v, std::uint32_t n) {
  Volume x = center_crop(normalize_intensity(v), cube_of(v.geom.dims));
  if (x.geom.dims.d != n) x = resample_to_dims(x, Dims{n, n, n});
  return Tensor<float>(Shape{1, 1, n, n, n}, std::move(x.data));
}

Tensor<float> preprocess_mask(const Mask& m, std::uint32_t n) {
  const Mask c = center_crop(m, cube_of(m.geom.dims));
  Tensor<float> t(Shape{1, 1, n, n, n});
  if (c.geom.dims.d == n) {
    for (std::size_t i = 0; i < c.data.size(); ++i) t.values[i] = c.data[i];
    return t;
  }
  const Volume r = resample_to_dims(to_volume(c), Dims{n, n, n});
  for (std::size_t i = 0; i < r.data.size(); ++i) t.values[i] = r.data[i] >= 0.5f ? 1.f : 0.f;
  return t;
}

Volume postprocess_probability(const Tensor<float>& prob, const Geometry& original) {
  const std::uint32_t n = std::uint32_t(prob.shape.d);
  const Dims cube = cube_of(original.dims);
  const Volume cropped = center_crop(Volume(original), cube);
  Volume out;
  if (cube.d == n) {
    out = Volume(cropped.geom);
    out.data = prob.values;
  } else {
    const Volume at_n = resample_to_dims(cropped, Dims{n, n, n});
    Volume p(at_n.geom);
    p.data = prob.values;
    out = resample_to_dims(p, cube);
  }
  out = center_crop(out, original.dims);
  out.geom = original;
  return out;
}

Sample load_sample(const Manifest& m, std::size_t index, std::uint32_t n) {
  const auto& rec = m.cases.at(index);
  Sample s;
  s.input = preprocess_volume(load_volume(m.dir / rec.volume_file), n);
  s.target = preprocess_mask(load_mask(m.dir / rec.mask_file), n);
  return s;
}

std::vector<Sample> load_samples(const Manifest& m, const std::vector<std::size_t>& idx,
                                 std::uint32_t n, unsigned jobs) {
  std::vector<Sample> out(idx.size());
  parallel_for(idx.size(), jobs, [&](std::size_t i) { out[i] = load_sample(m, idx[i], n); });
  return out;
}

double mean_dsc(const Network& net, const std::vector<Sample>& set, double threshold) {
  if (set.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : set) {
    const Tensor<float> p = net.predict(s.input);
    std::size_t np = 0, nt = 0, both = 0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const bool a = double(p.values[i]) >= threshold;
      const bool b = s.target.values[i] > 0.5f;
      np += a;
      nt += b;
      both += a && b;
    }
    sum += np + nt == 0 ? 1.0 : 2.0 * double(both) / double(np + nt);
  }
  return sum / double(set.size());
}

TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set,
                  const std::function<void(std::size_t, double)>& on_step) {
  cfg.spec.validate();
  if (cfg.val_every == 0 || cfg.patience_rounds == 0)
    throw Error(Errc::InvalidConfig, "val_every and patience_rounds must be positive");
  if (train_set.empty() && cfg.max_steps > 0) throw Error(Errc::InvalidConfig, "empty training set");
  const Shape want{1, 1, cfg.spec.n, cfg.spec.n, cfg.spec.n};
  for (const auto& s : train_set)
    if (!(s.input.shape == want) || !(s.target.shape == want))
      throw Error(Errc::ShapeMismatch, "training sample is " + s.input.shape.str() + ", network wants " + want.str());

  Network net = Network::build(cfg.spec, cfg.seed);
  const auto params = net.trainable();
  std::vector<AdamState> adam;
  adam.reserve(params.size());
  for (auto* p : params) adam.emplace_back(p->size(), cfg.lr);

  TrainResult res;
  res.best = net;
  double best_dsc = -1.0;
  std::size_t stale = 0;
  Rng order(derive_seed(cfg.seed, 0x7a11));
  std::vector<std::size_t> perm(train_set.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t pos = perm.size();

  auto validate = [&](std::size_t step) {
    if (val_set.empty()) {
      res.best = net;
      res.best_step = step;
      return false;
    }
    const double d = mean_dsc(net, val_set);
    res.val_dsc.emplace_back(step, d);
    if (d > best_dsc) {
      best_dsc = d;
      res.best = net;
      res.best_step = step;
      stale = 0;
      return false;
    }
    return ++stale >= cfg.patience_rounds;
  };

  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    if (pos == perm.size()) {
      order.shuffle(perm);
      pos = 0;
    }
    const Sample& s = train_set[perm[pos++]];
    Tape<float> tape;
    const Var in = tape.leaf(s.input);
    std::vector<Var> pv;
    const Var out = net.forward(tape, in, BnMode::Train, &pv);
    const Var target = tape.leaf(s.target);
    const Var loss = soft_dice_loss(tape, out, target);
    tape.backward(loss);
    const double l = tape[loss].values[0];
    res.loss.push_back(l);
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_step(std::span<float>(*params[i]), std::span<const float>(tape.grad(pv[i])), adam[i]);
    net.set_step(step + 1);
    if (on_step) on_step(step + 1, l);
    const bool round = (step + 1) % cfg.val_every == 0 || step + 1 == cfg.max_steps;
    if (round && validate(step + 1)) {
      res.early_stopped = true;
      break;
    }
  }
  if (cfg.max_steps == 0) validate(0);
  return res;
}

// ---------------------------------------------------------------- evaluation

Stat summarize(const std::vector<double>& values) {
  Stat s;
  double sum = 0.0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean = sum / double(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values)
      if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(s.count - 1));
  }
  return s;
}

Summary summarize(const std::vector<MetricsReport>& reports) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Summary s;
  s.cases = reports.size();
  std::vector<double> ed, hd, d, sc;
  for (const auto& r : reports) {
    ed.push_back(r.ed_mm.value_or(nan));
    hd.push_back(r.hd_mm.value_or(nan));
    d.push_back(r.dsc);
    sc.push_back(r.sc);
  }
  s.ed = summarize(ed);
  s.hd = summarize(hd);
  s.dsc = summarize(d);
  s.sc = summarize(sc);
  return s;
}

std::vector<Volume> predict_cases(const Network& net, const Manifest& m,
                                  const std::vector<std::size_t>& idx, unsigned jobs) {
  const std::uint32_t n = net.spec().n;
  std::vector<Volume> out(idx.size());
  parallel_for(idx.size(), jobs, [&](std::size_t i) {
    const Volume v = load_volume(m.dir / m.cases.at(idx[i]).volume_file);
    out[i] = postprocess_probability(net.predict(preprocess_volume(v, n)), v.geom);
  });
  return out;
}

MetricsReport score_case(const Mask& pred, const Mask& truth, const CaseRecord& rec, double threshold) {
  MetricsReport r;
  r.case_id = rec.case_id;
  r.ga_weeks = rec.spec.ga_weeks;
  const auto& e = rec.spec.pose.euler();
  r.euler = {e.alpha, e.beta, e.gamma};
  r.threshold = threshold;
  r.dsc = dsc(pred, truth);
  if (pred.empty()) {
    r.empty_prediction = true;
    return r;
  }
  r.ed_mm = centroid_ed(pred, truth);
  r.hd_mm = hausdorff(pred, truth);
  r.sc = symmetry_coefficient(pred, rec.spec.pose).sc;
  return r;
}

FoldResult evaluate_predictions(const std::vector<Volume>& probs, const Manifest& m,
                                const std::vector<std::size_t>& idx, double threshold,
                                unsigned jobs) {
  if (probs.size() != idx.size()) throw Error(Errc::LengthMismatch, "one probability map per case expected");
  FoldResult res;
  res.cases.resize(idx.size());
  parallel_for(idx.size(), jobs, [&](std::size_t i) {
    const auto& rec = m.cases.at(idx[i]);
    const Mask truth = load_mask(m.dir / rec.mask_file);
    res.cases[i] = score_case(threshold_mask(probs[i], threshold), truth, rec, threshold);
  });
  res.summary = summarize(res.cases);
  return res;
}

FoldResult evaluate_truth(const Manifest& m, const std::vector<std::size_t>& idx, double threshold) {
  std::vector<Volume> probs;
  for (auto i : idx) probs.push_back(to_volume(load_mask(m.dir / m.cases.at(i).mask_file)));
  return evaluate_predictions(probs, m, idx, threshold);
}

// ---------------------------------------------------------------- tables

std::vector<std::string> protocol_notes() {
  return {
      "# preprocessing: min-max intensity normalisation, centre crop to a cube, trilinear resample to n^3",
      "# training: batch size 1, soft Dice loss (eps 1e-6), Adam lr 1e-3, validation mean DSC every 50 steps by default",
      "# euler: intrinsic Z-Y-X degrees of the scan-to-canonical pose",
      "# ed_mm: centroid distance in mm; hd_mm: symmetric Hausdorff over surface voxel centres in mm",
      "# sc: DSC of the mirrored right half against the left half after alignment to canonical pose",
      "# empty predictions: ed_mm and hd_mm blank and excluded from their means; dsc and sc 0",
      "# std: sample standard deviation (n - 1)",
  };
}

void write_cases_csv(const fs::path& path, const std::vector<MetricsReport>& rows,
                     const std::vector<std::string>& notes) {
  auto f = open_out(path);
  for (const auto& n : notes) f << n << '\n';
  f << kCasesHeader << '\n';
  for (const auto& r : rows) {
    f << r.case_id << ',' << format_double(r.ga_weeks) << ',' << format_double(r.euler[0]) << ','
      << format_double(r.euler[1]) << ',' << format_double(r.euler[2]) << ','
      << format_double(r.threshold) << ',' << opt_field(r.ed_mm) << ',' << opt_field(r.hd_mm) << ','
      << format_double(r.dsc) << ',' << format_double(r.sc) << '\n';
  }
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

std::vector<MetricsReport> read_cases_csv(const fs::path& path) {
  const auto lines = csv_lines(path);
  if (lines.empty() || lines[0] != kCasesHeader)
    throw Error(Errc::InvalidConfig, "per-case header mismatch in " + path.string());
  std::vector<MetricsReport> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv(lines[i]);
    if (f.size() != 10) throw Error(Errc::InvalidConfig, "per-case row malformed in " + path.string());
    MetricsReport r;
    r.case_id = f[0];
    r.ga_weeks = parse_double(f[1], "ga_weeks");
    r.euler = {parse_double(f[2], "alpha"), parse_double(f[3], "beta"), parse_double(f[4], "gamma")};
    r.threshold = parse_double(f[5], "threshold");
    if (!f[6].empty()) r.ed_mm = parse_double(f[6], "ed_mm");
    if (!f[7].empty()) r.hd_mm = parse_double(f[7], "hd_mm");
    r.empty_prediction = !r.ed_mm.has_value();
    r.dsc = parse_double(f[8], "dsc");
    r.sc = parse_double(f[9], "sc");
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string summary_fields(const Summary& s) {
  std::ostringstream os;
  os << s.cases;
  append_stat(os, s.ed);
  append_stat(os, s.hd);
  append_stat(os, s.dsc);
  append_stat(os, s.sc);
  return os.str();
}

constexpr std::size_t kSummaryFieldCount = 13;  // cases + 4 x (mean, std, count)

}  // namespace

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows,
                       const std::vector<std::string>& notes) {
  auto f = open_out(path);
  for (const auto& n : notes) f << n << '\n';
  f << kSummaryHeadPrefix
    << "ed_mean,ed_std,ed_count,hd_mean,hd_std,hd_count,dsc_mean,dsc_std,dsc_count,sc_mean,sc_std,"
       "sc_count";
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().extra) f << ',' << k;
  f << '\n';
  for (const auto& r : rows) {
    f << r.label << ',' << r.source << ',' << r.filter << ',' << summary_fields(r.summary);
    for (const auto& [k, v] : r.extra) f << ',' << v;
    f << '\n';
  }
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

std::vector<MetricsReport> filter_reports(const std::vector<MetricsReport>& rows, const std::string& filter) {
  if (filter.empty()) return rows;
  const auto eq = filter.find('=');
  if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "bad filter " + filter);
  const std::string key = filter.substr(0, eq), value = filter.substr(eq + 1);
  std::vector<MetricsReport> out;
  for (const auto& r : rows) {
    bool keep;
    if (key == "threshold") keep = format_double(r.threshold) == value;
    else if (key == "week") keep = std::to_string(week_of(r.ga_weeks)) == value;
    else throw Error(Errc::InvalidConfig, "unknown filter key " + key);
    if (keep) out.push_back(r);
  }
  return out;
}

std::vector<VerifyIssue> verify_tables(const fs::path& dir, std::size_t* tables_checked) {
  std::vector<VerifyIssue> issues;
  std::size_t checked = 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<fs::path, std::vector<MetricsReport>> cache;
  for (const auto& file : files) {
    const auto lines = csv_lines(file);
    if (lines.empty() || lines[0].rfind(kSummaryHeadPrefix, 0) != 0) continue;
    ++checked;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = split_csv(lines[i]);
      if (f.size() < 3 + kSummaryFieldCount) {
        issues.push_back({file, i, "row has too few fields"});
        continue;
      }
      std::vector<MetricsReport> rows;
      try {
        std::stringstream ss(f[1]);
        std::string src;
        while (std::getline(ss, src, ';')) {
          const fs::path p = (file.parent_path() / src).lexically_normal();
          auto it = cache.find(p);
          if (it == cache.end()) it = cache.emplace(p, read_cases_csv(p)).first;
          rows.insert(rows.end(), it->second.begin(), it->second.end());
        }
        rows = filter_reports(rows, f[2]);
      } catch (const std::exception& ex) {
        issues.push_back({file, i, ex.what()});
        continue;
      }
      const auto want = split_csv(summary_fields(summarize(rows)));
      for (std::size_t k = 0; k < kSummaryFieldCount; ++k)
        if (want[k] != f[3 + k]) {
          issues.push_back({file, i, "field " + std::to_string(3 + k) + " is '" + f[3 + k] +
                                         "', recomputed '" + want[k] + "'"});
        }
    }
  }
  if (tables_checked) *tables_checked = checked;
  return issues;
}

// ---------------------------------------------------------------- reports

namespace {

std::string relative_source(const fs::path& source, const fs::path& table_dir) {
  std::error_code ec;
  const fs::path rel = fs::relative(source, table_dir, ec);
  return ec || rel.empty() ? fs::absolute(source).string() : rel.generic_string();
}

bool ranks_before(const Summary& a, const Summary& b) {
  if (a.dsc.mean != b.dsc.mean) return a.dsc.mean > b.dsc.mean;
  const double ha = a.hd.count ? a.hd.mean : std::numeric_limits<double>::infinity();
  const double hb = b.hd.count ? b.hd.mean : std::numeric_limits<double>::infinity();
  if (ha != hb) return ha < hb;
  const double ea = a.ed.count ? a.ed.mean : std::numeric_limits<double>::infinity();
  const double eb = b.ed.count ? b.ed.mean : std::numeric_limits<double>::infinity();
  return ea < eb;
}

}  // namespace

std::vector<CrossvalRow> crossval_grid(const CrossvalConfig& cfg, const Manifest& m,
                                       const Split& split, const fs::path& outdir) {
  if (cfg.specs.empty()) throw Error(Errc::InvalidConfig, "no specs to cross-validate");
  if (split.folds.empty()) throw Error(Errc::InvalidConfig, "split has no folds");
  std::vector<CrossvalRow> rows;
  std::vector<SummaryRow> table, fold_table;
  std::map<std::pair<std::uint32_t, std::size_t>, std::pair<std::vector<Sample>, std::vector<Sample>>> cache;
  for (std::size_t si = 0; si < cfg.specs.size(); ++si) {
    CrossvalRow row;
    row.spec = cfg.specs[si];
    if (cfg.desk_n) row.spec.spec.n = *cfg.desk_n;
    row.spec.spec.validate();
    const std::string dirname = std::to_string(si) + "_" + row.spec.label;
    std::vector<MetricsReport> pooled;
    std::string sources;
    for (std::size_t f = 0; f < split.folds.size(); ++f) {
      const auto& fold = split.folds[f];
      auto key = std::make_pair(row.spec.spec.n, f);
      if (!cache.count(key))
        cache[key] = {load_samples(m, fold.train, row.spec.spec.n, cfg.jobs),
                      load_samples(m, fold.val, row.spec.spec.n, cfg.jobs)};
      const auto& [tr, va] = cache[key];
      TrainConfig tc = cfg.train;
      tc.spec = row.spec.spec;
      tc.seed = derive_seed(cfg.train.seed, f);
      const TrainResult res = train(tc, tr, va);
      const auto probs = predict_cases(res.best, m, fold.val, cfg.jobs);
      const FoldResult fr = evaluate_predictions(probs, m, fold.val, cfg.threshold, cfg.jobs);
      const std::string src = dirname + "/fold" + std::to_string(f) + ".csv";
      write_cases_csv(outdir / src, fr.cases);
      row.folds.push_back(fr.summary);
      pooled.insert(pooled.end(), fr.cases.begin(), fr.cases.end());
      sources += (sources.empty() ? "" : ";") + src;
      fold_table.push_back({std::string(1, row.spec.label) + "/fold" + std::to_string(f), src, "",
                            fr.summary, {}});
    }
    row.pooled = summarize(pooled);
    table.push_back({std::string(1, row.spec.label), sources, "", row.pooled, {}});
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranks_before(rows[a].pooled, rows[b].pooled); });
  for (std::size_t r = 0; r < order.size(); ++r) rows[order[r]].rank = r + 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = rows[i].spec;
    table[i].extra = {{"n", std::to_string(s.spec.n)},
                      {"l", std::to_string(s.spec.l)},
                      {"k", std::to_string(s.spec.k)},
                      {"f", std::to_string(s.spec.f)},
                      {"params", std::to_string(param_count(s.spec))},
                      {"published_params", format_double(s.published_params)},
                      {"rank", std::to_string(rows[i].rank)}};
  }
  auto notes = protocol_notes();
  notes.push_back("# rank: mean DSC descending, then mean HD ascending, then mean ED ascending");
  notes.push_back("# folds: each spec trained on a fold's train cases and scored on its val cases");
  if (cfg.desk_n) notes.push_back("# n replaced by " + std::to_string(*cfg.desk_n) + " for every spec");
  write_summary_csv(outdir / "crossval.csv", table, notes);
  write_summary_csv(outdir / "crossval_folds.csv", fold_table, notes);
  return rows;
}

std::vector<SweepRow> threshold_sweep(const std::vector<Volume>& probs, const Manifest& m,
                                      const std::vector<std::size_t>& idx,
                                      const std::vector<double>& thresholds,
                                      const fs::path& outdir, unsigned jobs) {
  std::vector<SweepRow> rows;
  std::vector<MetricsReport> all;
  for (double t : thresholds) {
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::InvalidConfig, "thresholds must lie in [0, 1]");
    SweepRow row{t, {}, {}};
    const FoldResult fr = evaluate_predictions(probs, m, idx, t, jobs);
    row.summary = fr.summary;
    for (const auto& p : probs) row.voxels.push_back(threshold_mask(p, t).count());
    all.insert(all.end(), fr.cases.begin(), fr.cases.end());
    rows.push_back(std::move(row));
  }
  write_cases_csv(outdir / "sweep_cases.csv", all);
  std::vector<SummaryRow> table;
  for (const auto& r : rows) {
    double vox = 0.0;
    for (auto v : r.voxels) vox += double(v);
    table.push_back({"t=" + format_double(r.threshold), "sweep_cases.csv",
                     "threshold=" + format_double(r.threshold), r.summary,
                     {{"mean_voxels", format_double(r.voxels.empty() ? 0.0 : vox / double(r.voxels.size()))}}});
  }
  write_summary_csv(outdir / "sweep.csv", table);
  return rows;
}

PoseCorrelation pose_report(const std::vector<MetricsReport>& rows, const fs::path& outdir) {
  PoseCorrelation pc;
  const auto dscs = values_of(rows, [](const MetricsReport& r) { return r.dsc; });
  const char* names[3] = {"alpha", "beta", "gamma"};
  auto f = open_out(outdir / "pose_correlations.csv");
  f << "# Pearson correlation of each Euler angle (intrinsic Z-Y-X, degrees) with DSC\n";
  f << "angle,r,n\n";
  for (int a = 0; a < 3; ++a) {
    std::vector<double> ang;
    for (const auto& r : rows) ang.push_back(r.euler[std::size_t(a)]);
    try {
      pc.r[std::size_t(a)] = pearson_r(ang, dscs);
    } catch (const Error&) {
      pc.r[std::size_t(a)].reset();
    }
    f << names[a] << ',' << (pc.r[std::size_t(a)] ? format_double(*pc.r[std::size_t(a)]) : "NA") << ','
      << rows.size() << '\n';
  }
  auto s = open_out(outdir / "pose_scatter.csv");
  s << "case_id,alpha,beta,gamma,dsc\n";
  for (const auto& r : rows)
    s << r.case_id << ',' << format_double(r.euler[0]) << ',' << format_double(r.euler[1]) << ','
      << format_double(r.euler[2]) << ',' << format_double(r.dsc) << '\n';
  return pc;
}

std::vector<WeekRow> week_report(const std::vector<MetricsReport>& rows, const fs::path& cases_csv,
                                 const fs::path& outdir) {
  std::map<int, std::vector<MetricsReport>> groups;
  for (const auto& r : rows) groups[week_of(r.ga_weeks)].push_back(r);
  std::vector<WeekRow> out;
  std::vector<SummaryRow> table;
  fs::create_directories(outdir);
  const std::string src = relative_source(cases_csv, outdir);
  for (const auto& [w, g] : groups) {
    out.push_back({w, summarize(g)});
    table.push_back({"week " + std::to_string(w), src, "week=" + std::to_string(w), out.back().summary, {}});
  }
  table.push_back({"all", src, "", summarize(rows), {}});
  write_summary_csv(outdir / "week_report.csv", table);
  return out;
}

void write_pgm(const fs::path& path, std::uint32_t width, std::uint32_t height,
               const std::vector<float>& values) {
  if (values.size() != std::size_t(width) * height)
    throw Error(Errc::LengthMismatch, "PGM pixel count mismatch");
  auto f = open_out(path);
  f << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    px[i] = static_cast<unsigned char>(std::lround(std::clamp(double(values[i]), 0.0, 1.0) * 255.0));
  f.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

namespace {

void write_mid_slices(const Volume& v, const fs::path& stem) {
  const auto& d = v.geom.dims;
  std::vector<float> axial(std::size_t(d.w) * d.h), sagittal(std::size_t(d.h) * d.d);
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x) axial[std::size_t(y) * d.w + x] = v.at(x, y, d.d / 2);
  // Sagittal image: rows are z (top = superior), columns are y.
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.h; ++y)
      sagittal[std::size_t(d.d - 1 - z) * d.h + y] = v.at(d.w / 2, y, z);
  write_pgm(stem.string() + ".axial.pgm", d.w, d.h, axial);
  write_pgm(stem.string() + ".sagittal.pgm", d.h, d.d, sagittal);
}

}  // namespace

std::vector<std::pair<std::string, FpFnMap>> heatmap_report(const Manifest& m,
                                                            const std::vector<std::size_t>& idx,
                                                            const std::vector<Mask>& preds,
                                                            const fs::path& outdir) {
  if (preds.size() != idx.size()) throw Error(Errc::LengthMismatch, "one prediction per case expected");
  std::vector<Mask> truths;
  truths.reserve(idx.size());
  for (auto i : idx) truths.push_back(load_mask(m.dir / m.cases.at(i).mask_file));
  std::map<int, std::vector<FpFnCase>> by_week;
  std::vector<FpFnCase> all;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = m.cases.at(idx[i]);
    FpFnCase c{&preds[i], &truths[i], rec.spec.pose};
    by_week[week_of(rec.spec.ga_weeks)].push_back(c);
    all.push_back(c);
  }
  std::vector<std::pair<std::string, FpFnMap>> out;
  for (const auto& [w, cases] : by_week) out.emplace_back("week" + std::to_string(w), aggregate_fpfn(cases));
  out.emplace_back("all", aggregate_fpfn(all));
  fs::create_directories(outdir);
  auto idxf = open_out(outdir / "heatmaps.csv");
  idxf << "# per-voxel false-positive / false-negative rates in canonical pose, divided by the case count\n";
  idxf << "group,count,fp_volume,fn_volume,fp_max,fn_max\n";
  for (const auto& [name, map] : out) {
    save_volume(map.fp, outdir / (name + ".fp.volb"));
    save_volume(map.fn, outdir / (name + ".fn.volb"));
    write_mid_slices(map.fp, outdir / (name + ".fp"));
    write_mid_slices(map.fn, outdir / (name + ".fn"));
    const float fpmax = *std::max_element(map.fp.data.begin(), map.fp.data.end());
    const float fnmax = *std::max_element(map.fn.data.begin(), map.fn.data.end());
    idxf << name << ',' << map.count << ',' << name << ".fp.volb," << name << ".fn.volb,"
         << format_double(fpmax) << ',' << format_double(fnmax) << '\n';
  }
  return out;
}

BaselineComparison compare_baseline(const std::vector<Volume>& probs, const Manifest& m,
                                    const std::vector<std::size_t>& idx, double threshold,
                                    const fs::path& outdir, unsigned jobs) {
  BaselineComparison bc;
  bc.cnn = evaluate_predictions(probs, m, idx, threshold, jobs);
  bc.ellipsoid.cases.resize(idx.size());
  std::vector<std::string> records(idx.size());
  parallel_for(idx.size(), jobs, [&](std::size_t i) {
    const auto& rec = m.cases.at(idx[i]);
    const Mask truth = load_mask(m.dir / rec.mask_file);
    Mask pred(probs[i].geom);
    try {
      const Ellipsoid e = fit_ellipsoid(probs[i]);
      pred = rasterize_ellipsoid(e, probs[i].geom);
      records[i] = to_key_values(e);
    } catch (const Error& ex) {
      if (ex.code() != Errc::ZeroMass) throw;
    }
    bc.ellipsoid.cases[i] = score_case(pred, truth, rec, threshold);
  });
  bc.ellipsoid.summary = summarize(bc.ellipsoid.cases);
  write_cases_csv(outdir / "cnn_cases.csv", bc.cnn.cases);
  auto notes = protocol_notes();
  notes.push_back("# ellipsoid: moment fit to the CNN probability map, rasterised at voxel centres");
  write_cases_csv(outdir / "ellipsoid_cases.csv", bc.ellipsoid.cases, notes);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (records[i].empty()) continue;
    auto f = open_out(outdir / "ellipsoids" / (m.cases.at(idx[i]).case_id + ".ellipsoid.txt"));
    f << records[i];
  }
  write_summary_csv(outdir / "baseline.csv",
                    {{"cnn", "cnn_cases.csv", "", bc.cnn.summary, {}},
                     {"ellipsoid", "ellipsoid_cases.csv", "", bc.ellipsoid.summary, {}}},
                    notes);
  return bc;
}

}  // namespace usbrain
