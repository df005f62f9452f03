#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fnode/cli.hpp"
#include "fnode/inference.hpp"
#include "fnode/json_io.hpp"
#include "fnode/syndata.hpp"

namespace fnode::cli {

namespace {

struct GenerateArgs {
  std::string set, out;
  std::uint64_t seed = 0;
  std::size_t n_per_class = 100, n_classes = 10, n_points = 10;
  double t_max = 1.5, noise_var = 1e-3;
  bool per_point = false, include_origin = false;
};

struct TrainArgs {
  std::string data, config, out, log, model, selection;
  std::optional<std::uint64_t> seed;
  bool gmm_only = false;
};

struct GridArgs {
  std::size_t grid = 0;
  std::optional<double> t_end;
};

struct SampleArgs {
  std::string model, data, mode = "gmm", out;
  std::size_t index = 0, n = 10, max_attempts = 10000;
  std::optional<std::size_t> exemplar;
  std::optional<double> delta;
  std::uint64_t seed = 0;
  GridArgs grid;
};

struct OodArgs {
  std::string model, train_data, test_data, out;
  double quantile = 0.95;
  std::size_t n_gamma = 16;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string model, data, out;
  double observe_fraction = 0.5;
  std::size_t samples = 1;
  std::uint64_t seed = 0;
};

struct BandArgs {
  std::string model, data, source = "posterior", out;
  std::size_t index = 0, draws = 200;
  double level = 0.95;
  std::uint64_t seed = 0;
  GridArgs grid;
};

struct PlotArgs {
  std::string traj, band, out, title;
  std::size_t dim = 1;
};

std::string num(double v) { return io::format_double(v); }

std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

const data::Trajectory& pick(const data::PanelDataset& d, std::size_t i, const char* what) {
  if (i >= d.size()) {
    throw UsageError(std::string(what) + " " + std::to_string(i) + " is out of range (dataset holds " +
                     std::to_string(d.size()) + " trajectories)");
  }
  return d.trajectories[i];
}

void check_compatible(const FNODEModel& m, const data::PanelDataset& d) {
  if (d.obs_dim != m.obs_dim) {
    throw UsageError("dataset observation width " + std::to_string(d.obs_dim) + " does not match the model's " +
                     std::to_string(m.obs_dim));
  }
}

const gmm::GMMModel& need_gmm(const ModelArchive& a) {
  if (!a.gmm) throw std::runtime_error("model archive holds no mixture; run train with epochs > 0 or --gmm-only");
  return *a.gmm;
}

std::vector<double> eval_times(const FNODEModel& m, const data::Trajectory& x, const GridArgs& g) {
  if (g.grid == 0) {
    if (g.t_end) throw UsageError("--t-end needs --grid");
    return x.times;
  }
  if (g.grid < 2) throw UsageError("--grid needs at least 2 points");
  const double end = g.t_end.value_or(x.times.back());
  if (!(end > m.t0)) throw UsageError("--t-end must exceed the model origin " + brief(m.t0));
  std::vector<double> t(g.grid);
  for (std::size_t i = 0; i < g.grid; ++i) t[i] = m.t0 + (end - m.t0) * static_cast<double>(i) / static_cast<double>(g.grid - 1);
  return t;
}

std::string curves_csv(const std::vector<inference::Curve>& curves, const std::vector<double>& times, std::size_t d) {
  std::string out = "sample_id,time";
  for (std::size_t j = 0; j < d; ++j) out += ",value_" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t k = 0; k < curves.size(); ++k) {
    for (std::size_t t = 0; t < times.size(); ++t) {
      out += std::to_string(k) + ',' + num(times[t]);
      for (std::size_t j = 0; j < d; ++j) out += ',' + num(curves[k][t][j]);
      out += '\n';
    }
  }
  return out;
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int cmd_generate(const GenerateArgs& a) {
  data::SynthConfig cfg;
  cfg.seed = a.seed;
  cfg.n_per_class = a.n_per_class;
  cfg.n_classes = a.n_classes;
  cfg.n_points = a.n_points;
  cfg.t_max = a.t_max;
  cfg.noise_var = a.noise_var;
  cfg.noise = a.per_point ? data::NoiseMode::PerPoint : data::NoiseMode::PerTrajectory;
  cfg.include_origin = a.include_origin;
  const data::PanelDataset d = a.set == "a" ? data::generate_set_a(cfg) : data::generate_set_b(cfg);
  data::save_dataset(d, a.out);
  std::cout << "wrote " << a.out << ": N=" << d.size() << " classes=" << cfg.n_classes << " obs_dim=" << d.obs_dim
            << '\n';
  return 0;
}

void fit_mixture(ModelArchive& a, const data::PanelDataset& d, const RunConfig& cfg, const std::string& selection_path) {
  const auto bank = gmm::collect_gamma_samples(a.model, d, cfg.gmm_n_gamma, a.seeds.gmm_bank, cfg.gmm_joint);
  const auto sel = gmm::select_model(bank, cfg.gmm_components(), cfg.gmm_cov_types, a.seeds.gmm_select, cfg.em);
  for (const auto& f : sel.failures) std::cerr << "note: mixture fit skipped: " << f << '\n';
  if (!selection_path.empty()) io::write_atomic(selection_path, gmm::selection_csv(sel.table));
  a.gmm = sel.model;
  std::cout << "mixture: K=" << sel.model.components() << " cov_type=" << gmm::cov_type_name(sel.model.cov_type)
            << " dim=" << sel.model.dim << " bank_rows=" << bank.rows() << '\n';
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (!a.model.empty() && !a.gmm_only) throw UsageError("--model is only used with --gmm-only");
  const data::PanelDataset d = data::load_dataset(a.data);
  d.validate();

  ModelArchive archive;
  archive.seeds = Seeds::derive(cfg.seed);
  archive.config = cfg.entries();
  if (!a.model.empty()) {
    const ModelArchive prior = load_archive(a.model);
    archive.model = prior.model;
    archive.history = prior.history;
  } else {
    std::size_t slots = cfg.encoder_slots;
    if (slots == 0)
      for (const auto& x : d.trajectories) slots = std::max(slots, x.length());
    archive.model = make_model(cfg.arch, d.obs_dim, slots, archive.seeds.init);
  }
  check_compatible(archive.model, d);

  if (!a.gmm_only) {
    const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
    TrainConfig tc = cfg.train;
    tc.seed = archive.seeds.train;
    std::vector<ELBOBreakdown> history;
    io::write_atomic(log_path, history_csv(history));
    try {
      FitResult res = fit(archive.model, d, tc, [&](int, const ELBOBreakdown& b) {
        history.push_back(b);
        io::write_atomic(log_path, history_csv(history));
      });
      archive.model = std::move(res.model);
      archive.history = std::move(res.history);
    } catch (const DivergenceError& e) {
      std::cerr << "error: training diverged at epoch " << e.epoch() << ", batch " << e.batch() << ": " << e.what()
                << "\nthe log in " << log_path << " holds the completed epochs\n";
      return 1;
    }
    if (!archive.history.empty()) {
      std::cout << "trained " << archive.history.size() << " epochs: elbo " << brief(archive.history.front().total)
                << " -> " << brief(archive.history.back().total) << '\n';
    }
  }
  if (a.gmm_only || cfg.train.epochs > 0) fit_mixture(archive, d, cfg, a.selection);
  save_archive(archive, a.out);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

int cmd_sample(const SampleArgs& a) {
  if (a.n == 0) throw UsageError("--n must be >= 1");
  const ModelArchive archive = load_archive(a.model);
  const FNODEModel& m = archive.model;
  const data::PanelDataset d = data::load_dataset(a.data);
  check_compatible(m, d);
  const data::Trajectory& x = pick(d, a.index, "--index");
  const auto times = eval_times(m, x, a.grid);

  std::vector<inference::Curve> curves;
  if (a.mode == "gmm") {
    curves = inference::sample_trajectories(m, need_gmm(archive), x, times, a.n, a.seed);
  } else if (a.mode == "prior") {
    curves = inference::sample_prior(m, x, times, a.n, a.seed);
  } else if (a.mode == "transfer") {
    if (!a.exemplar) throw UsageError("--mode transfer needs --exemplar");
    curves.push_back(inference::transfer_trajectory(m, x, pick(d, *a.exemplar, "--exemplar"), times));
  } else {
    if (!a.exemplar || !a.delta) throw UsageError("--mode neighborhood needs --exemplar and --delta");
    if (!(*a.delta > 0.0)) throw UsageError("--delta must be > 0");
    if (a.max_attempts == 0) throw UsageError("--max-attempts must be >= 1");
    try {
      auto nb = inference::neighborhood_sample(m, need_gmm(archive), x, pick(d, *a.exemplar, "--exemplar"), *a.delta,
                                               a.n, a.max_attempts, times, a.seed);
      std::cout << "accepted " << nb.gammas.size() << " of " << nb.attempts << " draws (rate "
                << brief(nb.acceptance_rate()) << ")\n";
      curves = std::move(nb.curves);
    } catch (const inference::NoAcceptanceError& e) {
      std::cerr << "error: " << e.what() << "; try a larger --delta or --max-attempts\n";
      return 1;
    }
  }
  io::write_atomic(a.out, curves_csv(curves, times, m.obs_dim));
  std::cout << "wrote " << curves.size() << " trajectories to " << a.out << '\n';
  return 0;
}

int cmd_ood(const OodArgs& a) {
  if (!(a.quantile > 0.0) || a.quantile > 1.0) throw UsageError("--quantile must lie in (0,1]");
  if (a.n_gamma == 0) throw UsageError("--n-gamma must be >= 1");
  const ModelArchive archive = load_archive(a.model);
  const auto& S = need_gmm(archive);
  const data::PanelDataset train = data::load_dataset(a.train_data);
  const data::PanelDataset test = data::load_dataset(a.test_data);
  check_compatible(archive.model, train);
  check_compatible(archive.model, test);
  const double threshold = inference::ood_calibrate(archive.model, S, train, a.n_gamma, a.quantile, mix_seed(a.seed, 0));
  const auto report = inference::ood_test(archive.model, S, threshold, test, a.n_gamma, mix_seed(a.seed, 1));
  io::write_atomic(a.out, inference::ood_csv(report));
  std::size_t flagged = 0;
  for (const auto& r : report.rows) flagged += r.flagged;
  std::cout << "flagged " << flagged << "/" << report.rows.size() << " (proportion " << brief(report.flag_rate())
            << ") at threshold " << brief(threshold) << '\n';
  for (const auto& [label, rate] : report.class_flag_rate) std::cout << "class " << label << ": " << brief(rate) << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  if (!(a.observe_fraction > 0.0) || a.observe_fraction > 1.0) throw UsageError("--observe-fraction must lie in (0,1]");
  if (a.samples == 0) throw UsageError("--samples must be >= 1");
  const ModelArchive archive = load_archive(a.model);
  const FNODEModel& m = archive.model;
  const data::PanelDataset d = data::load_dataset(a.data);
  check_compatible(m, d);

  static constexpr int kHorizons[] = {10, 20, 50, 100};
  struct Errors {
    std::vector<double> sq;  // per point, summed over obs dims
    std::size_t observed = 0;
  };
  std::vector<Errors> per(d.size());
  parallel_for(d.size(), [&](std::size_t i) {
    const auto& x = d.trajectories[i];
    const data::Trajectory seen = data::truncate_fraction(x, a.observe_fraction);
    const ode::TimeGrid grid(x.times);
    std::vector<tg::Tensor> pred;
    if (a.samples == 1) {
      pred = reconstruct(m, seen, grid, true);
    } else {
      Rng rng = make_rng(a.seed, i);
      for (std::size_t s = 0; s < a.samples; ++s) {
        auto r = reconstruct(m, seen, grid, false, &rng);
        if (pred.empty()) pred = std::move(r);
        else
          for (std::size_t t = 0; t < r.size(); ++t)
            for (std::size_t j = 0; j < r[t].size(); ++j) pred[t][j] += r[t][j];
      }
      for (auto& p : pred)
        for (std::size_t j = 0; j < p.size(); ++j) p[j] /= static_cast<double>(a.samples);
    }
    per[i].observed = seen.length();
    for (std::size_t t = 0; t < x.length(); ++t) {
      double e = 0.0;
      for (std::size_t j = 0; j < m.obs_dim; ++j) e += std::pow(pred[t][j] - x.values[t][j], 2);
      per[i].sq.push_back(e);
    }
  });

  std::ostringstream os;
  os << "segment,horizon,mse,n_points\n";
  auto row = [&](const std::string& segment, const std::string& horizon, double sse, std::size_t n) {
    os << segment << ',' << horizon << ',' << (n ? num(sse / static_cast<double>(n * m.obs_dim)) : "") << ',' << n
       << '\n';
  };
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& e : per)
    for (std::size_t t = 0; t < e.observed; ++t, ++n) sse += e.sq[t];
  row("interpolation", "", sse, n);
  for (int h : kHorizons) {
    sse = 0.0;
    n = 0;
    for (const auto& e : per) {
      const auto steps = static_cast<std::size_t>(std::ceil(h / 100.0 * static_cast<double>(e.observed) - 1e-9));
      const std::size_t end = std::min(e.sq.size(), e.observed + steps);
      for (std::size_t t = e.observed; t < end; ++t, ++n) sse += e.sq[t];
    }
    row("extrapolation", std::to_string(h), sse, n);
  }
  if (a.out.empty()) std::cout << os.str();
  else {
    io::write_atomic(a.out, os.str());
    std::cout << "wrote " << a.out << '\n';
  }
  return 0;
}

int cmd_band(const BandArgs& a) {
  const ModelArchive archive = load_archive(a.model);
  const FNODEModel& m = archive.model;
  const data::PanelDataset d = data::load_dataset(a.data);
  check_compatible(m, d);
  const data::Trajectory& x = pick(d, a.index, "--index");
  const auto times = eval_times(m, x, a.grid);
  const auto source = a.source == "gmm" ? inference::DrawSource::Gmm : inference::DrawSource::Posterior;
  const gmm::GMMModel* S = source == inference::DrawSource::Gmm ? &need_gmm(archive) : nullptr;
  const auto band = inference::credible_band(m, source, S, x, times, a.draws, a.level, a.seed);
  io::write_atomic(a.out, inference::band_csv(band));
  std::cout << "wrote " << a.out;
  if (times == x.times) std::cout << " (coverage of observed values " << brief(inference::band_coverage(band, x)) << ")";
  std::cout << '\n';
  return 0;
}

int cmd_plot(const PlotArgs& a) {
  const auto series = read_trajectory_csv(io::read_file(a.traj), a.dim);
  const auto band = a.band.empty() ? std::vector<BandRow>{} : read_band_csv(io::read_file(a.band), a.dim);
  io::write_atomic(a.out, render_svg(series, band, a.title));
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

void add_grid(CLI::App* c, GridArgs& g) {
  c->add_option("--grid", g.grid, "Evaluate on N evenly spaced times from t0 instead of the trajectory's times");
  c->add_option("--t-end", g.t_end, "Last grid time (default: last observed time)");
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Functional neural ODEs: training, sampling, OOD scoring and plots", "fnode"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Write a synthetic panel dataset (JSON lines)");
  g->add_option("--set", gen.set, "a: A*sin(2 pi t), b: sin(2 pi B t)")->required()->check(CLI::IsMember({"a", "b"}));
  g->add_option("--out", gen.out, "Output path")->required();
  g->add_option("--seed", gen.seed, "RNG seed");
  g->add_option("--n-per-class", gen.n_per_class, "Trajectories per class");
  g->add_option("--n-classes", gen.n_classes, "Number of classes");
  g->add_option("--n-points", gen.n_points, "Observations per trajectory");
  g->add_option("--t-max", gen.t_max, "Upper end of the time window");
  g->add_option("--noise-var", gen.noise_var, "Noise variance");
  g->add_flag("--per-point-noise", gen.per_point, "Independent noise per observation");
  g->add_flag("--include-origin", gen.include_origin, "Always observe t=0");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit a model, then the mixture over gamma");
  t->add_option("--data", tr.data, "Training dataset")->required();
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--out", tr.out, "Model archive path")->required();
  t->add_option("--log", tr.log, "Per-epoch CSV log (default: <out>.log.csv)");
  t->add_option("--seed", tr.seed, "Overrides the config seed");
  t->add_option("--model", tr.model, "Existing archive whose weights --gmm-only refits the mixture for");
  t->add_option("--selection", tr.selection, "Write the mixture selection table here");
  t->add_flag("--gmm-only", tr.gmm_only, "Skip training and only fit the mixture");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Generate trajectories from a trained model");
  s->add_option("--model", sa.model, "Model archive")->required();
  s->add_option("--data", sa.data, "Dataset holding the z0 source and exemplar")->required();
  s->add_option("--index", sa.index, "z0 source trajectory");
  s->add_option("--mode", sa.mode, "gmm, prior, transfer or neighborhood")
      ->capture_default_str()
      ->check(CLI::IsMember({"gmm", "prior", "transfer", "neighborhood"}));
  s->add_option("--exemplar", sa.exemplar, "Trajectory supplying gamma (transfer, neighborhood)");
  s->add_option("--delta", sa.delta, "Neighborhood radius in gamma space");
  s->add_option("--n", sa.n, "Number of draws");
  s->add_option("--max-attempts", sa.max_attempts, "Neighborhood proposal budget");
  s->add_option("--seed", sa.seed, "RNG seed");
  s->add_option("--out", sa.out, "Output CSV")->required();
  add_grid(s, sa.grid);

  OodArgs oa;
  auto* o = app.add_subcommand("ood", "Flag trajectories whose gamma is unlikely under the mixture");
  o->add_option("--model", oa.model, "Model archive")->required();
  o->add_option("--train-data", oa.train_data, "Calibration dataset")->required();
  o->add_option("--test-data", oa.test_data, "Dataset to score")->required();
  o->add_option("--quantile", oa.quantile, "Training-score quantile used as threshold");
  o->add_option("--n-gamma", oa.n_gamma, "Posterior draws per trajectory");
  o->add_option("--seed", oa.seed, "RNG seed");
  o->add_option("--out", oa.out, "Output CSV")->required();

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Interpolation and extrapolation MSE");
  e->add_option("--model", ea.model, "Model archive")->required();
  e->add_option("--data", ea.data, "Evaluation dataset")->required();
  e->add_option("--observe-fraction", ea.observe_fraction, "Conditioned fraction of each time span");
  e->add_option("--samples", ea.samples, "Posterior samples to average (1: posterior mean)");
  e->add_option("--seed", ea.seed, "RNG seed");
  e->add_option("--out", ea.out, "Output CSV (default: stdout)");

  BandArgs ba;
  auto* b = app.add_subcommand("band", "Credible band for one trajectory");
  b->add_option("--model", ba.model, "Model archive")->required();
  b->add_option("--data", ba.data, "Dataset")->required();
  b->add_option("--index", ba.index, "Trajectory to condition on");
  b->add_option("--source", ba.source, "posterior or gmm")->check(CLI::IsMember({"posterior", "gmm"}));
  b->add_option("--draws", ba.draws, "Number of decoded draws");
  b->add_option("--level", ba.level, "Band level");
  b->add_option("--seed", ba.seed, "RNG seed");
  b->add_option("--out", ba.out, "Output CSV")->required();
  add_grid(b, ba.grid);

  PlotArgs pa;
  auto* p = app.add_subcommand("plot", "Render sample and band CSVs as SVG");
  p->add_option("--traj", pa.traj, "Sample CSV")->required();
  p->add_option("--band", pa.band, "Band CSV");
  p->add_option("--dim", pa.dim, "Observation dimension to draw (1-based)");
  p->add_option("--title", pa.title, "Plot title");
  p->add_option("--out", pa.out, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) return cmd_train(tr);
    if (s->parsed()) return cmd_sample(sa);
    if (o->parsed()) return cmd_ood(oa);
    if (e->parsed()) return cmd_eval(ea);
    if (b->parsed()) return cmd_band(ba);
    return cmd_plot(pa);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}

}  // namespace fnode::cli
