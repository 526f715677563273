// usbrain: command-line front end for the experiment harness.
//
// Exit codes: 0 success, 2 validation failure (a table that does not
// recompute, or input that violates a library contract), 1 IO/config error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "usbrain/error.hpp"
#include "usbrain/harness.hpp"

using namespace usbrain;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitValidation = 2;

struct Global {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out = ".";
};

// Which cases of a dataset a subcommand works on.
struct Selection {
  std::string data;
  std::string split;
  std::string set = "holdout";  // holdout | train | val | all
  std::size_t fold = 0;

  void add(CLI::App* app) {
    app->add_option("--data", data, "dataset directory (manifest.csv)")->required();
    app->add_option("--split", split, "split file written by `split`; all cases when omitted");
    app->add_option("--set", set, "holdout, train, val or all")
        ->check(CLI::IsMember({"holdout", "train", "val", "all"}));
    app->add_option("--fold", fold, "fold for --set train/val");
  }

  std::vector<std::size_t> indices(const Manifest& m) const {
    if (split.empty() || set == "all") {
      std::vector<std::size_t> v(m.cases.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
      return v;
    }
    const Split s = load_split(m, split);
    if (set == "holdout") return s.holdout;
    if (fold >= s.folds.size())
      throw Error(Errc::InvalidConfig, "fold " + std::to_string(fold) + " not in split");
    return set == "train" ? s.folds[fold].train : s.folds[fold].val;
  }
};

struct TrainFlags {
  std::string net;
  std::vector<std::uint32_t> spec{32, 3, 3, 4};
  std::size_t max_steps = 3000;
  std::size_t val_every = 50;
  std::size_t patience = 1;
  double lr = 1e-3;

  void add(CLI::App* app, bool with_spec) {
    if (with_spec) {
      app->add_option("--net", net, "named network A-H")->check(CLI::IsMember({"A", "B", "C", "D", "E", "F", "G", "H"}));
      app->add_option("--spec", spec, "n l k f")->expected(4)->delimiter(',');
    }
    app->add_option("--max-steps", max_steps, "training steps (batch size 1)");
    app->add_option("--val-every", val_every, "steps between validation rounds");
    app->add_option("--patience", patience, "validation rounds without improvement before stopping");
    app->add_option("--lr", lr, "Adam learning rate");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    if (!net.empty()) {
      for (const auto& s : table1_specs())
        if (s.label == net[0]) c.spec = s.spec;
    } else {
      c.spec = NetworkSpec{spec[0], spec[1], spec[2], spec[3]};
    }
    c.max_steps = max_steps;
    c.val_every = val_every;
    c.patience_rounds = patience;
    c.lr = lr;
    c.seed = seed;
    return c;
  }
};

fs::path prob_file(const fs::path& dir, const CaseRecord& rec) { return dir / (rec.case_id + ".prob.volb"); }

std::vector<Volume> load_probs(const fs::path& dir, const Manifest& m, const std::vector<std::size_t>& idx) {
  std::vector<Volume> v;
  v.reserve(idx.size());
  for (auto i : idx) v.push_back(load_volume(prob_file(dir, m.cases.at(i))));
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  if (out.empty()) throw Error(Errc::InvalidConfig, "empty list '" + s + "'");
  return out;
}

void write_loss_csv(const fs::path& path, const TrainResult& r) {
  std::ofstream f(path);
  f << "step,loss\n";
  for (std::size_t i = 0; i < r.loss.size(); ++i) f << i + 1 << ',' << format_double(r.loss[i]) << '\n';
  std::ofstream v(path.parent_path() / "val.csv");
  v << "step,val_dsc\n";
  for (const auto& [s, d] : r.val_dsc) v << s << ',' << format_double(d) << '\n';
  if (!f || !v) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

void write_eval(const fs::path& out, const FoldResult& r, const std::string& label) {
  fs::create_directories(out);
  write_cases_csv(out / "cases.csv", r.cases);
  write_summary_csv(out / "summary.csv", {{label, "cases.csv", "", r.summary, {}}});
}

void print_summary(const std::string& label, const Summary& s) {
  std::cout << label << ": cases " << s.cases << ", DSC " << format_double(s.dsc.mean) << " +/- "
            << format_double(s.dsc.std) << ", ED " << format_double(s.ed.mean) << " mm, HD "
            << format_double(s.hd.mean) << " mm, SC " << format_double(s.sc.mean) << '\n';
}

int exit_code(Errc c) {
  switch (c) {
    case Errc::IoFailure:
    case Errc::BadMagic:
    case Errc::TruncatedPayload:
    case Errc::InvalidConfig:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic fetal-brain ultrasound segmentation experiments"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "worker threads; 1 is bit-reproducible")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  // phantom-gen
  auto* gen = app.add_subcommand("phantom-gen", "write a synthetic phantom dataset");
  DatasetOptions dopt;
  bool no_rotation = false;
  gen->add_option("--count", dopt.count, "number of cases");
  gen->add_option("--ga-min", dopt.ga_min, "first gestational week");
  gen->add_option("--ga-max", dopt.ga_max, "last gestational week");
  gen->add_option("--noise", dopt.noise_level, "speckle level in [0, 1]");
  gen->add_option("--occlusion", dopt.occlusion_strength, "proximal-hemisphere dimming in [0, 1]");
  gen->add_flag("--no-rotation", no_rotation, "canonical orientation for every case");

  // split
  auto* sp = app.add_subcommand("split", "hold-out set and cross-validation folds");
  std::string sp_data;
  SplitOptions sopt;
  sp->add_option("--data", sp_data, "dataset directory")->required();
  sp->add_option("--folds", sopt.folds);
  sp->add_option("--train", sopt.train, "training cases per fold");
  sp->add_option("--val", sopt.val, "validation cases per fold");
  sp->add_option("--holdout", sopt.holdout);

  // train
  auto* tr = app.add_subcommand("train", "train one network on a fold");
  std::string tr_data, tr_split;
  std::size_t tr_fold = 0;
  TrainFlags tflags;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--split", tr_split)->required();
  tr->add_option("--fold", tr_fold);
  tflags.add(tr, true);

  // predict
  auto* pr = app.add_subcommand("predict", "probability maps from a checkpoint");
  Selection pr_sel;
  std::string pr_model;
  pr_sel.add(pr);
  pr->add_option("--model", pr_model, "NNCK1 checkpoint")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "score probability maps against the truth");
  Selection ev_sel;
  std::string ev_pred;
  double ev_t = 0.5;
  ev_sel.add(ev);
  ev->add_option("--pred", ev_pred, "directory of <case>.prob.volb; truth masks when omitted");
  ev->add_option("--threshold", ev_t)->check(CLI::Range(0.0, 1.0));

  // crossval
  auto* cv = app.add_subcommand("crossval", "train and score networks on every fold");
  std::string cv_data, cv_split, cv_nets = "ABCDEFGH";
  std::optional<std::uint32_t> cv_n;
  double cv_t = 0.5;
  TrainFlags cflags;
  cv->add_option("--data", cv_data)->required();
  cv->add_option("--split", cv_split)->required();
  cv->add_option("--nets", cv_nets, "labels of the networks to run, e.g. ABG");
  cv->add_option("--desk-n", cv_n, "replace every network's input size");
  cv->add_option("--threshold", cv_t)->check(CLI::Range(0.0, 1.0));
  cflags.add(cv, false);

  // sweep
  auto* sw = app.add_subcommand("sweep", "metrics across thresholds");
  Selection sw_sel;
  std::string sw_pred, sw_ts = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  sw_sel.add(sw);
  sw->add_option("--pred", sw_pred)->required();
  sw->add_option("--thresholds", sw_ts, "comma-separated list");

  // pose-report, week-report
  auto* po = app.add_subcommand("pose-report", "Euler angle vs DSC correlation");
  std::string po_cases;
  po->add_option("--cases", po_cases, "per-case CSV")->required();
  auto* wk = app.add_subcommand("week-report", "metrics per gestational week");
  std::string wk_cases;
  wk->add_option("--cases", wk_cases, "per-case CSV")->required();

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "false-positive / false-negative maps in canonical pose");
  Selection hm_sel;
  std::string hm_pred;
  double hm_t = 0.5;
  hm_sel.add(hm);
  hm->add_option("--pred", hm_pred)->required();
  hm->add_option("--threshold", hm_t)->check(CLI::Range(0.0, 1.0));

  // baseline-compare
  auto* bl = app.add_subcommand("baseline-compare", "CNN against a fitted ellipsoid");
  Selection bl_sel;
  std::string bl_pred;
  double bl_t = 0.5;
  bl_sel.add(bl);
  bl->add_option("--pred", bl_pred)->required();
  bl->add_option("--threshold", bl_t)->check(CLI::Range(0.0, 1.0));

  // verify-tables
  auto* vt = app.add_subcommand("verify-tables", "recompute every aggregate table under a directory");
  std::string vt_dir;
  vt->add_option("dir", vt_dir, "directory to scan; defaults to --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitIo;
  }

  const fs::path out = g.out;
  try {
    if (gen->parsed()) {
      dopt.seed = g.seed;
      dopt.jobs = g.jobs;
      if (no_rotation) dopt.pose.rotate = false;
      const Manifest m = make_dataset(dopt, out);
      std::cout << "wrote " << m.cases.size() << " cases to " << out.string() << '\n';
    } else if (sp->parsed()) {
      sopt.seed = g.seed;
      const Manifest m = load_manifest(sp_data);
      const Split s = split_folds(m, sopt);
      fs::create_directories(out);
      save_split(s, m, out / "split.csv");
      for (std::size_t f = 0; f < s.folds.size(); ++f)
        std::cout << "fold " << f << ": Welch t " << format_double(s.folds[f].welch.t) << ", p "
                  << format_double(s.folds[f].welch.p) << '\n';
    } else if (tr->parsed()) {
      const Manifest m = load_manifest(tr_data);
      const Split s = load_split(m, tr_split);
      if (tr_fold >= s.folds.size()) throw Error(Errc::InvalidConfig, "fold not in split");
      TrainConfig c = tflags.config(g.seed);
      c.spec.validate();
      const auto train_set = load_samples(m, s.folds[tr_fold].train, c.spec.n, g.jobs);
      const auto val_set = load_samples(m, s.folds[tr_fold].val, c.spec.n, g.jobs);
      TrainResult r = train(c, train_set, val_set, [&](std::size_t step, double loss) {
        if (step % 100 == 0) std::cerr << "step " << step << " loss " << format_double(loss) << '\n';
      });
      fs::create_directories(out);
      save_checkpoint(r.best, out / "model.nnck");
      write_loss_csv(out / "loss.csv", r);
      std::cout << "best step " << r.best_step << (r.early_stopped ? " (early stop)" : "") << '\n';
    } else if (pr->parsed()) {
      const Manifest m = load_manifest(pr_sel.data);
      const auto idx = pr_sel.indices(m);
      const Network net = load_checkpoint(pr_model);
      const auto probs = predict_cases(net, m, idx, g.jobs);
      fs::create_directories(out);
      for (std::size_t i = 0; i < idx.size(); ++i) save_volume(probs[i], prob_file(out, m.cases[idx[i]]));
      std::cout << "wrote " << idx.size() << " probability maps\n";
    } else if (ev->parsed()) {
      const Manifest m = load_manifest(ev_sel.data);
      const auto idx = ev_sel.indices(m);
      const FoldResult r = ev_pred.empty() ? evaluate_truth(m, idx, ev_t)
                                           : evaluate_predictions(load_probs(ev_pred, m, idx), m, idx, ev_t, g.jobs);
      write_eval(out, r, ev_pred.empty() ? "truth" : "prediction");
      print_summary("eval", r.summary);
    } else if (cv->parsed()) {
      const Manifest m = load_manifest(cv_data);
      const Split s = load_split(m, cv_split);
      CrossvalConfig c;
      for (char label : cv_nets) {
        const auto& all = table1_specs();
        const auto it = std::find_if(all.begin(), all.end(), [&](const NamedSpec& ns) { return ns.label == label; });
        if (it == all.end()) throw Error(Errc::InvalidConfig, std::string("unknown network ") + label);
        c.specs.push_back(*it);
      }
      c.desk_n = cv_n;
      c.train = cflags.config(g.seed);
      c.threshold = cv_t;
      c.jobs = g.jobs;
      for (const auto& row : crossval_grid(c, m, s, out))
        std::cout << row.spec.label << " rank " << row.rank << " DSC " << format_double(row.pooled.dsc.mean) << '\n';
    } else if (sw->parsed()) {
      const Manifest m = load_manifest(sw_sel.data);
      const auto idx = sw_sel.indices(m);
      for (const auto& r : threshold_sweep(load_probs(sw_pred, m, idx), m, idx, parse_list(sw_ts), out, g.jobs))
        print_summary("t=" + format_double(r.threshold), r.summary);
    } else if (po->parsed()) {
      fs::create_directories(out);
      const auto pc = pose_report(read_cases_csv(po_cases), out);
      const char* names[3] = {"alpha", "beta", "gamma"};
      for (int a = 0; a < 3; ++a)
        std::cout << names[a] << " r " << (pc.r[a] ? format_double(*pc.r[a]) : "NA") << '\n';
    } else if (wk->parsed()) {
      for (const auto& w : week_report(read_cases_csv(wk_cases), wk_cases, out))
        print_summary("week " + std::to_string(w.week), w.summary);
    } else if (hm->parsed()) {
      const Manifest m = load_manifest(hm_sel.data);
      const auto idx = hm_sel.indices(m);
      std::vector<Mask> preds;
      for (const auto& p : load_probs(hm_pred, m, idx)) preds.push_back(threshold_mask(p, hm_t));
      for (const auto& [name, map] : heatmap_report(m, idx, preds, out))
        std::cout << name << ": " << map.count << " cases\n";
    } else if (bl->parsed()) {
      const Manifest m = load_manifest(bl_sel.data);
      const auto idx = bl_sel.indices(m);
      fs::create_directories(out);
      const auto bc = compare_baseline(load_probs(bl_pred, m, idx), m, idx, bl_t, out, g.jobs);
      print_summary("cnn", bc.cnn.summary);
      print_summary("ellipsoid", bc.ellipsoid.summary);
    } else if (vt->parsed()) {
      const fs::path dir = vt_dir.empty() ? out : fs::path(vt_dir);
      if (!fs::is_directory(dir)) throw Error(Errc::IoFailure, "no such directory " + dir.string());
      std::size_t checked = 0;
      const auto issues = verify_tables(dir, &checked);
      for (const auto& i : issues)
        std::cout << i.table.string() << ":" << i.row << ": " << i.message << '\n';
      std::cout << checked << " tables checked, " << issues.size() << " mismatches\n";
      return issues.empty() ? kExitOk : kExitValidation;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
