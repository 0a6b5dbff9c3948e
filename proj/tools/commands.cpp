#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "bddm/denoisers.hpp"
#include "bddm/error.hpp"
#include "bddm/io.hpp"
#include "bddm/metrics.hpp"
#include "bddm/mixture.hpp"
#include "bddm/nn.hpp"
#include "bddm/noise_posterior.hpp"
#include "bddm/parallel.hpp"
#include "bddm/risk.hpp"
#include "bddm/rng.hpp"
#include "bddm/samplers.hpp"
#include "bddm/schedules.hpp"

namespace bddm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config plumbing

ConfigView ConfigView::sub(const std::string& key) const {
  const json* s = nullptr;
  if (source_ && source_->contains(key)) {
    s = &source_->at(key);
    if (!s->is_object()) throw_bad(key, "expected an object");
  }
  json& r = (*resolved_)[key];
  if (!r.is_object()) r = json::object();
  return {s, &r};
}

void ConfigView::throw_bad(const std::string& key, const std::string& why) {
  throw ConfigError("config key '" + key + "': " + why);
}

void ConfigView::throw_missing(const std::string& key) {
  throw ConfigError("config key '" + key + "' is required");
}

Context make_context(const std::string& config_path, const std::optional<std::string>& out_dir,
                     const std::optional<std::uint64_t>& seed) {
  Context ctx;
  ctx.config = read_json(config_path);
  if (!ctx.config.is_object()) throw ConfigError(config_path + " must hold a JSON object");
  ctx.config_dir = fs::absolute(fs::path(config_path)).parent_path();
  if (out_dir) {
    ctx.out_dir = *out_dir;
  } else {
    const std::string name = ctx.config.value("experiment", "run");
    ctx.out_dir = fs::path("out") / name;
  }
  if (seed) {
    ctx.seed = *seed;
  } else {
    if (!ctx.config.contains("seed")) throw ConfigError("config needs an explicit 'seed'");
    try {
      ctx.seed = ctx.config.at("seed").get<std::uint64_t>();
    } catch (const json::exception&) {
      throw ConfigError("'seed' must be a nonnegative integer");
    }
  }
  return ctx;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"mle-hist", "sample",  "track-schedule",
                                              "mismatch", "train",   "compare"};
  return names;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const json::exception*>(&e) ||
      dynamic_cast<const UnsupportedOperation*>(&e) || dynamic_cast<const UnsupportedSize*>(&e))
    return 2;
  if (dynamic_cast<const NumericalFailure*>(&e) || dynamic_cast<const DomainError*>(&e)) return 3;
  return 1;
}

namespace {

// Everything one command run needs: parameters, resolved copy, output location.
class Run {
 public:
  Run(const Context& ctx, std::string command)
      : ctx_(ctx), command_(std::move(command)), root_(&ctx.config, &resolved_) {
    resolved_["command"] = command_;
    resolved_["seed"] = ctx.seed;
    root_.get<std::string>("experiment", command_);
    fs::create_directories(ctx.out_dir);
  }

  const ConfigView& params() const { return root_; }
  std::uint64_t seed() const { return ctx_.seed; }
  std::uint64_t seed_for(std::uint64_t stream, std::uint64_t index) const {
    return derive_seed(ctx_.seed, stream, index);
  }

  std::string out(const std::string& name) const { return (ctx_.out_dir / name).string(); }
  fs::path resolve_input(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : ctx_.config_dir / path;
  }

  json sidecar(json extra = json::object()) const {
    json j{{"config", resolved_}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }
  void csv_done(const std::string& path, json extra = json::object()) const {
    write_sidecar(path, sidecar(std::move(extra)));
  }
  void note(const std::string& line) const {
    if (!ctx_.quiet) std::printf("%s\n", line.c_str());
  }

 private:
  const Context& ctx_;
  std::string command_;
  json resolved_ = json::object();
  ConfigView root_;
};

std::string fmt(double v) { return format_number(v); }

std::string with_dim(const std::string& pattern, int d) {
  std::string s = pattern;
  const auto pos = s.find("{d}");
  if (pos != std::string::npos) s.replace(pos, 3, std::to_string(d));
  return s;
}

// ---------------------------------------------------------------------------
// Shared builders

struct ModelSetup {
  GaussianMixture base;  // in subspace coordinates
  std::string embedding;
  std::uint64_t embedding_seed;
};

ModelSetup read_model(const Run& run) {
  const ConfigView m = run.params().sub("model");
  const std::string path = m.require<std::string>("path");
  const fs::path full = run.resolve_input(path);
  if (!fs::exists(full)) throw ConfigError("model file not found: " + full.string());
  GaussianMixture base = load_mixture(full.string());
  const std::string emb = m.get<std::string>("embedding", "random");
  if (emb != "random" && emb != "zero_pad") throw ConfigError("embedding must be random or zero_pad");
  const auto emb_seed = m.get<std::uint64_t>("embedding_seed", 0);
  return {std::move(base), emb, emb_seed};
}

GaussianMixture model_in(const ModelSetup& setup, int d) {
  const int k = setup.base.ambient_dim();
  if (d < k) throw ConfigError("ambient dimension " + std::to_string(d) + " is below k=" + std::to_string(k));
  const SubspaceEmbedding e = setup.embedding == "zero_pad"
                                  ? SubspaceEmbedding::zero_padding(k, d)
                                  : SubspaceEmbedding::random(k, d, derive_seed(setup.embedding_seed, static_cast<std::uint64_t>(d)));
  return embed_mixture(setup.base, e);
}

std::vector<int> read_dims(const Run& run) {
  const auto dims = run.params().require<std::vector<int>>("ambient_dims");
  if (dims.empty()) throw ConfigError("ambient_dims is empty");
  return dims;
}

NoisePrior read_prior(const ConfigView& p, double alpha, double lo, double hi) {
  return NoisePrior(p.get<double>("alpha", alpha), p.get<double>("sigma_min", lo),
                    p.get<double>("sigma_max", hi));
}

DenoiserSpec read_denoiser(const Run& run, const GaussianMixture& model, int d) {
  const ConfigView p = run.params().sub("denoiser");
  const std::string kind = p.get<std::string>("kind", "blind_mle");
  if (kind == "network") {
    const std::string pattern = p.require<std::string>("bundle");
    fs::path path = with_dim(pattern, d);
    if (!path.is_absolute()) {
      // Bundles usually come from a train run writing into the same output directory.
      const fs::path in_out = fs::path(run.out(path.string()));
      path = fs::exists(in_out) ? in_out : run.resolve_input(path.string());
    }
    if (!fs::exists(path)) throw ConfigError("network bundle not found: " + path.string());
    DenseNet net = load_network(path.string());
    if (net.data_dim() != d) throw ConfigError("bundle " + path.string() + " has the wrong dimension");
    return DenoiserSpec::network(std::move(net));
  }
  const NoisePrior prior = read_prior(p.sub("prior"), 3.0, 0.005, 20.0);
  const int grid = p.sub("prior").get<int>("grid", SigmaGrid::kDefaultCount);
  if (kind == "blind_mle") return DenoiserSpec::blind_mle(model, prior, grid);
  if (kind == "blind_posterior") return DenoiserSpec::blind_posterior(model, prior, grid);
  if (kind == "nonblind") return DenoiserSpec::nonblind(model);
  throw ConfigError("unknown denoiser kind '" + kind + "'");
}

SamplerConfig read_sampler(const ConfigView& p) {
  SamplerConfig c;
  c.step_size = p.get<double>("step_size", c.step_size);
  c.sigma_max = p.get<double>("sigma_max", c.sigma_max);
  c.sigma_min = p.get<double>("sigma_min", c.sigma_min);
  const std::string integ = p.get<std::string>("integrator", "exp_euler");
  if (integ == "euler") c.integrator = Integrator::euler;
  else if (integ == "exp_euler") c.integrator = Integrator::exp_euler;
  else throw ConfigError("integrator must be euler or exp_euler");
  const ConfigView diff = p.sub("diffusion");
  const std::string kind = diff.get<std::string>("kind", "zero");
  if (kind == "adaptive") {
    AdaptiveDiffusion a;
    a.fraction = diff.get<double>("fraction", 0.5);
    const std::string units = diff.get<std::string>("units", "variance");
    if (units != "variance" && units != "std") throw ConfigError("diffusion units must be variance or std");
    a.std_units = units == "std";
    c.adaptive = a;
  } else if (kind == "proportional") {
    c.schedule = DiffusionSchedule::proportional(diff.get<double>("fraction", 0.5), c.sigma_max);
  } else if (kind == "constant") {
    c.schedule = DiffusionSchedule::constant(diff.get<double>("value", 0.0), c.sigma_max);
  } else if (kind != "zero") {
    throw ConfigError("diffusion kind must be zero, constant, proportional or adaptive");
  }
  c.max_steps = p.get<int>("max_steps", 0);
  c.validate();
  return c;
}

ExplicitSchedule read_explicit(const ConfigView& p, const SamplerConfig& blind) {
  ExplicitSchedule s;
  const std::string kind = p.get<std::string>("schedule", "log_sigma");
  if (kind == "log_sigma") s.kind = ExplicitSchedule::Kind::log_sigma;
  else if (kind == "power_law") s.kind = ExplicitSchedule::Kind::power_law;
  else throw ConfigError("schedule must be log_sigma or power_law");
  s.sigma_max = p.get<double>("sigma_max", blind.sigma_max);
  s.sigma_min = p.get<double>("sigma_min", blind.sigma_min);
  s.rho = p.get<double>("rho", s.rho);
  s.n_steps = p.get<int>("n_steps", s.n_steps);
  s.validate();
  return s;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
const char* color(std::size_t i) { return kPalette[i % 6]; }

// Subspace Mahalanobis distances of points (coordinates, k x n) to each component mean.
struct ComponentHits {
  std::vector<int> nearest;
  std::vector<double> distance;
};

ComponentHits classify(const GaussianMixture& model, const Matrix& coords) {
  const SubspaceEmbedding& s = model.support();
  const Matrix means = s.coordinates(model.means());
  const Matrix f = s.basis.transpose() * model.factor();
  const Matrix cov = f * f.transpose();
  const Matrix precision = cov.completeOrthogonalDecomposition().pseudoInverse();
  ComponentHits out;
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    int which = 0;
    for (int c = 0; c < model.components(); ++c) {
      const Vector delta = coords.col(j) - means.col(c);
      const double m = std::sqrt(std::max(0.0, delta.dot(precision * delta)));
      if (m < best) best = m, which = c;
    }
    out.nearest.push_back(which);
    out.distance.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// mle-hist

void cmd_mle_hist(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  const ConfigView p = run.params().sub("mle");
  const double sigma_true = p.get<double>("sigma_true", 0.5);
  const int n = p.get<int>("n", 1000);
  const int bins = p.get<int>("bins", 40);
  const ConfigView pp = p.sub("prior");
  const NoisePrior prior = read_prior(pp, 3.0, 0.005, 20.0);
  const int grid_count = pp.get<int>("grid", SigmaGrid::kDefaultCount);
  if (n < 1 || bins < 1) throw ConfigError("mle.n and mle.bins must be >= 1");
  const SigmaGrid grid = SigmaGrid::for_prior(prior, grid_count);

  std::vector<std::vector<double>> estimates;
  json results = json::array();
  for (int d : dims) {
    const GaussianMixture model = model_in(setup, d);
    const Matrix x = sample(model, n, run.seed_for(streams::kData, static_cast<std::uint64_t>(d)));
    Rng noise(run.seed_for(streams::kNoise, static_cast<std::uint64_t>(d)));
    const Matrix y = x + sigma_true * noise.normal_matrix(d, n);
    std::vector<double> est(static_cast<std::size_t>(n));
    std::vector<char> boundary(static_cast<std::size_t>(n));
    parallel_for(est.size(), [&](std::size_t i) {
      const SigmaEstimate e = mle_sigma(model, prior, observe(model, y.col(static_cast<Eigen::Index>(i))), grid);
      est[i] = e.sigma;
      boundary[i] = e.at_boundary;
    });
    double sq = 0.0;
    for (double e : est) sq += (e - sigma_true) * (e - sigma_true);
    const double rmse = std::sqrt(sq / n);
    results.push_back({{"d", d},
                       {"k", model.intrinsic_dim()},
                       {"n", n},
                       {"mean", std::accumulate(est.begin(), est.end(), 0.0) / n},
                       {"rmse", rmse},
                       {"relative_rmse", rmse / sigma_true},
                       {"iqr", quantile(est, 0.75) - quantile(est, 0.25)},
                       {"boundary_hits", std::count(boundary.begin(), boundary.end(), 1)}});
    estimates.push_back(std::move(est));
  }

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& e : estimates)
    for (double v : e) lo = std::min(lo, v), hi = std::max(hi, v);
  const int used_bins = std::min(bins, n);
  if (hi - lo < 1e-12 * std::max(1.0, hi)) {
    lo -= 0.5 * std::max(lo, 1e-3) * 0.01;
    hi += 0.5 * std::max(hi, 1e-3) * 0.01;
  }
  const double width = (hi - lo) / used_bins;

  SvgPlot plot("Noise-level estimates, sigma* = " + fmt(sigma_true), "sigma_hat", "density");
  for (std::size_t r = 0; r < dims.size(); ++r) {
    std::vector<double> counts(static_cast<std::size_t>(used_bins), 0.0);
    for (double v : estimates[r]) {
      const int b = std::clamp(static_cast<int>((v - lo) / width), 0, used_bins - 1);
      counts[static_cast<std::size_t>(b)] += 1.0;
    }
    const std::string path = run.out("mle_hist_d" + std::to_string(dims[r]) + ".csv");
    {
      CsvWriter csv(path, {"bin_left", "bin_right", "count"});
      for (int b = 0; b < used_bins; ++b)
        csv.row({lo + b * width, lo + (b + 1) * width, counts[static_cast<std::size_t>(b)]});
    }
    run.csv_done(path, {{"d", dims[r]}, {"sigma_true", sigma_true}});
    std::vector<double> left, right, dens;
    for (int b = 0; b < used_bins; ++b) {
      left.push_back(lo + b * width);
      right.push_back(lo + (b + 1) * width);
      dens.push_back(counts[static_cast<std::size_t>(b)] / (n * width));
    }
    plot.bars(left, right, dens, color(r), "d=" + std::to_string(dims[r]));
  }
  plot.vertical_marker(sigma_true, "black");
  plot.save(run.out("mle_hist.svg"));

  json summary = run.sidecar({{"results", results}});
  if (dims.size() >= 2) {
    const double first = results.front()["rmse"].get<double>();
    const double last = results.back()["rmse"].get<double>();
    summary["rmse_ratio_first_to_last"] = last > 0 ? first / last : std::numeric_limits<double>::infinity();
  }
  write_json(run.out("mle_hist_summary.json"), summary);
  for (const auto& r : results)
    run.note("d=" + std::to_string(r["d"].get<int>()) + " relative RMSE " + fmt(r["relative_rmse"].get<double>()));
}

// ---------------------------------------------------------------------------
// sample

void cmd_sample(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  SamplerConfig sampler = read_sampler(run.params().sub("sampler"));
  const ConfigView p = run.params().sub("sample");
  const int n = p.get<int>("n_samples", 512);
  const int n_ref = p.get<int>("reference_samples", n);
  const double radius = p.get<double>("mahalanobis_radius", 3.0);
  if (n < 1 || n_ref < 1) throw ConfigError("sample sizes must be >= 1");

  json results = json::array();
  SvgPlot scatter("Projected samples", "coordinate 1", "coordinate 2");
  for (std::size_t r = 0; r < dims.size(); ++r) {
    const int d = dims[r];
    const GaussianMixture model = model_in(setup, d);
    const DenoiserSpec denoiser = read_denoiser(run, model, d);
    sampler.seed = run.seed_for(streams::kTrajectory, static_cast<std::uint64_t>(d));
    const std::vector<Trajectory> batch = run_blind_batch(denoiser, sampler, n);
    const Matrix finals = final_states(batch);

    const SampleSet generated{finals, "sampler", sampler.seed};
    const SampleSet data{sample(model, n_ref, run.seed_for(streams::kData, static_cast<std::uint64_t>(d))),
                         "data", run.seed_for(streams::kData, static_cast<std::uint64_t>(d))};
    const std::uint64_t ref_seed = run.seed_for(streams::kData, (1ULL << 32) + static_cast<std::uint64_t>(d));
    const SampleSet data2{sample(model, n_ref, ref_seed), "data", ref_seed};
    const SubspaceEmbedding& emb = model.support();
    const double w1 = projected_w1(generated, data, emb, sampler.seed);
    const double w1_base = projected_w1(data2, data, emb, sampler.seed);
    const double w1_cap = projected_w1_capped(generated, data, emb, 2.0, sampler.seed);

    const Matrix coords = emb.coordinates(finals);
    const ComponentHits hits = classify(model, coords);
    int inside = 0, first = 0, max_steps = 0;
    for (std::size_t j = 0; j < hits.nearest.size(); ++j) {
      if (hits.distance[j] <= radius) ++inside;
      if (hits.nearest[j] == 0) ++first;
    }
    for (const auto& t : batch) max_steps += t.terminated_by == Termination::max_steps;

    const std::string tag = "sample_d" + std::to_string(d);
    {
      std::vector<std::string> header;
      for (int c = 0; c < coords.rows(); ++c) header.push_back("c" + std::to_string(c + 1));
      header.push_back("component");
      header.push_back("mahalanobis");
      CsvWriter csv(run.out(tag + "_points.csv"), header);
      for (Eigen::Index j = 0; j < coords.cols(); ++j) {
        std::vector<double> row(coords.col(j).data(), coords.col(j).data() + coords.rows());
        row.push_back(hits.nearest[static_cast<std::size_t>(j)]);
        row.push_back(hits.distance[static_cast<std::size_t>(j)]);
        csv.row(row);
      }
    }
    run.csv_done(run.out(tag + "_points.csv"), {{"d", d}, {"sampler", sampler.to_json()}});
    write_trajectory_csv(batch.front(), run.out(tag + "_trajectory.csv"));
    run.csv_done(run.out(tag + "_trajectory.csv"), {{"d", d}, {"trajectory_seed", batch.front().seed}});
    write_state_dump(run.out(tag + "_states.bin"), finals, sampler.seed, {{"d", d}, {"source", "final sampler states"}});

    std::vector<double> dx, dy, sx, sy;
    const Matrix data_coords = emb.coordinates(data.points);
    for (Eigen::Index j = 0; j < data_coords.cols(); ++j) {
      dx.push_back(data_coords(0, j));
      dy.push_back(data_coords.rows() > 1 ? data_coords(1, j) : 0.0);
    }
    for (Eigen::Index j = 0; j < coords.cols(); ++j) {
      sx.push_back(coords(0, j));
      sy.push_back(coords.rows() > 1 ? coords(1, j) : 0.0);
    }
    if (r == 0) scatter.scatter(dx, dy, "#999999", "data");
    scatter.scatter(sx, sy, color(r), "samples d=" + std::to_string(d));

    results.push_back({{"d", d},
                       {"n", n},
                       {"projected_w1", w1},
                       {"projected_w1_capped", w1_cap},
                       {"baseline_w1", w1_base},
                       {"w1_over_baseline", w1 / w1_base},
                       {"within_radius", static_cast<double>(inside) / n},
                       {"component0_ratio", static_cast<double>(first) / n},
                       {"max_steps_hits", max_steps},
                       {"median_steps", median([&] {
                          std::vector<double> s;
                          for (const auto& t : batch) s.push_back(t.steps());
                          return s;
                        }())}});
    run.note("d=" + std::to_string(d) + " projected W1 " + fmt(w1) + " (baseline " + fmt(w1_base) + ")");
  }
  scatter.save(run.out("sample_scatter.svg"));
  json metrics = run.sidecar({{"results", results}});
  if (dims.size() >= 2)
    metrics["w1_ratio_first_to_last"] =
        results.front()["projected_w1"].get<double>() / results.back()["projected_w1"].get<double>();
  write_json(run.out("sample_metrics.json"), metrics);
}

// ---------------------------------------------------------------------------
// track-schedule

double predicted_sigma(const SamplerConfig& c, double t) {
  if (c.schedule) return implicit_sigma(*c.schedule, t);
  return c.sigma_max * std::exp(-(1.0 - c.diffusion_fraction()) * t);
}

void cmd_track_schedule(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  SamplerConfig sampler = read_sampler(run.params().sub("sampler"));
  const ConfigView p = run.params().sub("track");
  const int n_traj = p.get<int>("n_trajectories", 100);
  const bool with_nonblind = p.get<bool>("nonblind", false);
  const int nonblind_runs = p.get<int>("nonblind_seeds", 5);
  const int nonblind_batch = p.get<int>("nonblind_batch", 32);
  if (n_traj < 1) throw ConfigError("track.n_trajectories must be >= 1");

  json results = json::array();
  SvgPlot plot("Estimated vs implicit noise level", "t", "sigma", false, true);
  for (std::size_t r = 0; r < dims.size(); ++r) {
    const int d = dims[r];
    const GaussianMixture model = model_in(setup, d);
    const DenoiserSpec denoiser = read_denoiser(run, model, d);
    sampler.seed = run.seed_for(streams::kTrajectory, static_cast<std::uint64_t>(d));
    const std::vector<Trajectory> batch = run_blind_batch(denoiser, sampler, n_traj);

    std::size_t longest = 0;
    for (const auto& t : batch) longest = std::max(longest, t.sigma_hats.size());
    const std::string path = run.out("track_d" + std::to_string(d) + ".csv");
    double worst = 0.0;
    std::vector<double> ts, med, pred;
    {
      CsvWriter csv(path, {"step", "t", "sigma_hat", "sigma_implicit", "relative_gap", "n_active"});
      for (std::size_t k = 0; k < longest; ++k) {
        const double t = k * sampler.step_size;
        const double s_pred = predicted_sigma(sampler, t);
        std::vector<double> hats, gaps;
        for (const auto& tr : batch) {
          if (k >= tr.sigma_hats.size()) continue;
          hats.push_back(tr.sigma_hats[k]);
          if (tr.sigma_hats[k] >= 2.0 * sampler.sigma_min)
            gaps.push_back(std::abs(tr.sigma_hats[k] - s_pred) / s_pred);
        }
        const double gap = median(gaps);
        if (!gaps.empty()) worst = std::max(worst, gap);
        csv.row({static_cast<double>(k), t, median(hats), s_pred, gap, static_cast<double>(hats.size())});
        ts.push_back(t);
        med.push_back(median(hats));
        pred.push_back(s_pred);
      }
    }
    run.csv_done(path, {{"d", d}, {"sampler", sampler.to_json()}, {"n_trajectories", n_traj}});
    plot.line(ts, med, color(r), "median sigma_hat d=" + std::to_string(d));
    plot.line(ts, pred, color(r), "", true);
    json res{{"d", d}, {"worst_median_relative_gap", worst}, {"steps", longest}};

    if (with_nonblind) {
      const ExplicitSchedule sched = read_explicit(run.params().sub("nonblind"), sampler);
      const DenoiserSpec reference = DenoiserSpec::nonblind(model);
      const int lo = sched.n_steps / 10, hi = sched.n_steps - sched.n_steps / 10;
      const std::string nb_path = run.out("track_nonblind_d" + std::to_string(d) + ".csv");
      json per_seed = json::array();
      CsvWriter csv(nb_path, {"seed_index", "step", "sigma_scheduled", "sigma_residual"});
      for (int s = 0; s < nonblind_runs; ++s) {
        SamplerConfig c = sampler;
        c.seed = run.seed_for(streams::kStep, static_cast<std::uint64_t>(d) * 1000 + s);
        const std::vector<Trajectory> nb = run_nonblind_batch(reference, sched, c, nonblind_batch);
        int above = 0, counted = 0;
        for (int i = 0; i <= sched.n_steps; ++i) {
          std::vector<double> hats;
          for (const auto& tr : nb) hats.push_back(tr.sigma_hats[static_cast<std::size_t>(i)]);
          const double m = median(hats);
          const double scheduled = nb.front().sigma_scheduled[static_cast<std::size_t>(i)];
          csv.row({static_cast<double>(s), static_cast<double>(i), scheduled, m});
          if (i >= lo && i <= hi) {
            ++counted;
            above += m > scheduled;
          }
        }
        per_seed.push_back(static_cast<double>(above) / counted);
      }
      run.csv_done(nb_path, {{"d", d}, {"schedule_steps", sched.n_steps}, {"batch", nonblind_batch}});
      res["nonblind_fraction_above"] = per_seed;
    }
    results.push_back(res);
    run.note("d=" + std::to_string(d) + " worst median relative gap " + fmt(worst));
  }
  plot.save(run.out("track_schedule.svg"));
  write_json(run.out("track_summary.json"), run.sidecar({{"results", results}}));
}

// ---------------------------------------------------------------------------
// mismatch

void cmd_mismatch(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  const ConfigView p = run.params().sub("mismatch");
  const auto sigmas = p.get<std::vector<double>>("sigma_true", {0.025, 0.15, 0.6});
  const double ratio = p.get<double>("range_ratio", 4.0);
  const int half = p.get<int>("half_count", 10);
  const long n = p.get<long>("n", 50000);
  const long n_bayes = p.get<long>("n_bayes", n);
  if (!(ratio > 1.0) || half < 1 || n < 1) throw ConfigError("bad mismatch sweep parameters");

  json results = json::array();
  SvgPlot plot("MSE vs assumed noise level", "sigma argument", "MSE", true, true);
  const std::string path = run.out("mismatch.csv");
  {
    CsvWriter csv(path, {"d", "sigma_true", "sigma_arg", "mse", "std_error"});
    std::size_t series = 0;
    for (int d : dims) {
      const GaussianMixture model = model_in(setup, d);
      const DenoiserSpec denoiser = DenoiserSpec::nonblind(model);
      for (std::size_t s = 0; s < sigmas.size(); ++s) {
        const double st = sigmas[s];
        const std::uint64_t crn = run.seed_for(streams::kNoise, static_cast<std::uint64_t>(d) * 100 + s);
        std::vector<double> args, mses;
        int best = 0;
        for (int j = -half; j <= half; ++j) {
          const double arg = st * std::pow(ratio, static_cast<double>(j) / half);
          const McEstimate e = mismatch_mse(denoiser, model, st, arg, n, crn);
          csv.row({static_cast<double>(d), st, arg, e.mean, e.std_error});
          args.push_back(arg);
          mses.push_back(e.mean);
          if (e.mean < mses[static_cast<std::size_t>(best)]) best = static_cast<int>(mses.size()) - 1;
        }
        const McEstimate bayes = bayes_mse(model, st, n_bayes, crn);
        const double at_true = mses[static_cast<std::size_t>(half)];
        results.push_back({{"d", d},
                           {"sigma_true", st},
                           {"argmin_sigma", args[static_cast<std::size_t>(best)]},
                           {"argmin_is_nearest", best == half},
                           {"mse_at_true", at_true},
                           {"bayes_mse", bayes.mean},
                           {"bayes_std_error", bayes.std_error},
                           {"relative_gap_to_bayes", std::abs(at_true - bayes.mean) / bayes.mean}});
        plot.line(args, mses, color(series), "d=" + std::to_string(d) + " sigma*=" + fmt(st));
        plot.vertical_marker(st, color(series));
        ++series;
        run.note("d=" + std::to_string(d) + " sigma*=" + fmt(st) + " argmin " +
                 fmt(args[static_cast<std::size_t>(best)]));
      }
    }
  }
  run.csv_done(path, {{"grid", "sigma* * ratio^(j/half), j = -half..half"}});
  plot.save(run.out("mismatch.svg"));
  write_json(run.out("mismatch_summary.json"), run.sidecar({{"results", results}}));
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  const ConfigView p = run.params().sub("train");
  TrainConfig tc;
  tc.batch_size = p.get<int>("batch_size", tc.batch_size);
  tc.n_steps = p.get<long>("n_steps", tc.n_steps);
  tc.learning_rate = p.get<double>("learning_rate", tc.learning_rate);
  tc.weight_decay = p.get<double>("weight_decay", tc.weight_decay);
  tc.history_every = p.get<int>("history_every", tc.history_every);
  tc.eval_batch = p.get<int>("eval_batch", tc.eval_batch);
  tc.prior = read_prior(p.sub("prior"), 2.0, 0.01, 10.0);
  const bool resume = p.get<bool>("resume", false);
  const ConfigView arch = run.params().sub("network");
  const auto hidden = arch.get<std::vector<int>>("hidden", std::vector<int>(5, 128));
  const auto variants = arch.get<std::vector<std::string>>("variants", {"blind"});
  const ConfigView ev = run.params().sub("evaluate");
  const auto eval_sigmas = ev.get<std::vector<double>>("sigmas", {0.1, 0.5, 1.0});
  const long eval_n = ev.get<long>("n", 2000);
  tc.validate();

  const std::string eval_path = run.out("train_eval.csv");
  CsvWriter eval_csv(eval_path, {"d", "conditioned", "sigma", "mse", "std_error", "bayes_mse"});
  json results = json::array();
  for (int d : dims) {
    const GaussianMixture model = model_in(setup, d);
    for (const std::string& variant : variants) {
      if (variant != "blind" && variant != "conditioned")
        throw ConfigError("network variants must be blind or conditioned");
      const bool conditioned = variant == "conditioned";
      const std::string name = variant + "_d" + std::to_string(d);
      const std::string bundle = run.out(name + ".bundle");
      TrainConfig c = tc;
      c.seed = run.seed_for(streams::kBatch, static_cast<std::uint64_t>(d) * 2 + conditioned);
      DenseNet net = resume && fs::exists(bundle)
                         ? load_network(bundle)
                         : DenseNet(d, hidden, conditioned, run.seed_for(streams::kInit, static_cast<std::uint64_t>(d) * 2 + conditioned));
      const std::vector<HistoryPoint> history = train_blind(model, net, c);
      save_network(net, bundle);
      write_history_csv(history, run.out(name + "_history.csv"));
      run.csv_done(run.out(name + "_history.csv"), {{"d", d}, {"network", variant}, {"train", c.to_json()}});

      json evals = json::array();
      const DenoiserSpec spec = DenoiserSpec::network(net);
      for (double s : eval_sigmas) {
        const std::uint64_t es = run.seed_for(streams::kSubsample, static_cast<std::uint64_t>(d) * 1000);
        McEstimate mse;
        if (conditioned) {
          mse = mismatch_mse(spec, model, s, s, eval_n, es);
        } else {
          // Blind nets ignore the noise level; evaluate them on the same draws.
          std::vector<double> vals(static_cast<std::size_t>(eval_n));
          const Matrix x = sample(model, static_cast<int>(eval_n), derive_seed(es, streams::kData));
          Rng rng(derive_seed(es, streams::kNoise));
          const Matrix y = x + s * rng.normal_matrix(d, eval_n);
          const Matrix f = net.forward(y);
          RunningMoments acc;
          for (Eigen::Index j = 0; j < x.cols(); ++j) acc.add((x.col(j) - f.col(j)).squaredNorm());
          mse = acc.estimate();
        }
        const McEstimate bayes = bayes_mse(model, s, eval_n, es);
        eval_csv.row({static_cast<double>(d), conditioned ? 1.0 : 0.0, s, mse.mean, mse.std_error, bayes.mean});
        evals.push_back({{"sigma", s}, {"mse", mse.mean}, {"bayes_mse", bayes.mean}});
      }
      results.push_back({{"d", d},
                         {"network", variant},
                         {"bundle", name + ".bundle"},
                         {"final_eval_loss", history.empty() ? 0.0 : history.back().eval_loss},
                         {"evaluation", evals}});
      run.note("trained " + name + " to step " + std::to_string(net.optimizer().step));
    }
  }
  run.csv_done(eval_path);
  write_json(run.out("train_summary.json"), run.sidecar({{"results", results}}));
}

// ---------------------------------------------------------------------------
// compare

void cmd_compare(const Run& run) {
  const ModelSetup setup = read_model(run);
  const std::vector<int> dims = read_dims(run);
  SamplerConfig sampler = read_sampler(run.params().sub("sampler"));
  const ConfigView p = run.params().sub("compare");
  const int n_seeds = p.get<int>("n_seeds", 5);
  const int n = p.get<int>("n_samples", 256);
  const int n_div = p.get<int>("divergence_pairs", 8);
  const bool identical = p.get<bool>("identical_samplers", false);
  ConfigView nbv = run.params().sub("nonblind");
  ExplicitSchedule sched = read_explicit(nbv, sampler);
  if (nbv.get<bool>("match_steps", true)) {
    const double per_step = (1.0 - sampler.diffusion_fraction()) * sampler.step_size;
    sched.n_steps = static_cast<int>(std::ceil(std::log(sched.sigma_max / sched.sigma_min) / per_step));
  }
  if (n_seeds < 1 || n < 1 || n_div < 0) throw ConfigError("bad compare sizes");

  const std::string seeds_path = run.out("compare_seeds.csv");
  CsvWriter seeds_csv(seeds_path, {"d", "seed_index", "w1_blind", "w1_nonblind", "w1_capped_blind", "w1_capped_nonblind"});
  json results = json::array();
  SvgPlot plot("Matched-noise divergence", "step", "mean ||X_blind - X_nonblind||");
  for (std::size_t r = 0; r < dims.size(); ++r) {
    const int d = dims[r];
    const GaussianMixture model = model_in(setup, d);
    const DenoiserSpec blind = read_denoiser(run, model, d);
    const DenoiserSpec reference = DenoiserSpec::nonblind(model);
    const SubspaceEmbedding& emb = model.support();
    int blind_wins = 0;
    std::vector<double> divergence_sum;
    std::vector<int> divergence_count;
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t base = run.seed_for(streams::kTrajectory, static_cast<std::uint64_t>(d) * 1000 + s);
      std::vector<Trajectory> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
      parallel_for(a.size(), [&](std::size_t j) {
        const std::uint64_t shared = derive_seed(base, streams::kStep, j);
        SamplerConfig ba = sampler, bb = sampler;
        ba.keep_states = bb.keep_states = static_cast<int>(j) < n_div;
        if (identical) {
          ba.seed = bb.seed = shared;
          a[j] = run_blind(blind, ba);
          b[j] = run_blind(blind, bb);
        } else {
          auto pair = matched_pair(blind, ba, reference, sched, bb, shared);
          a[j] = std::move(pair.first);
          b[j] = std::move(pair.second);
        }
      });
      const std::uint64_t data_seed = derive_seed(base, streams::kData);
      const SampleSet data{sample(model, n, data_seed), "data", data_seed};
      const SampleSet sa{final_states(a), "blind", base}, sb{final_states(b), "nonblind", base};
      const double wa = projected_w1(sa, data, emb), wb = projected_w1(sb, data, emb);
      const double ca = projected_w1_capped(sa, data, emb), cb = projected_w1_capped(sb, data, emb);
      seeds_csv.row({static_cast<double>(d), static_cast<double>(s), wa, wb, ca, cb});
      blind_wins += wa <= wb;
      for (int j = 0; j < std::min(n_div, n); ++j) {
        const auto& ta = a[static_cast<std::size_t>(j)];
        const auto& tb = b[static_cast<std::size_t>(j)];
        const std::size_t len = std::min(ta.states.size(), tb.states.size());
        if (divergence_sum.size() < len) divergence_sum.resize(len, 0.0), divergence_count.resize(len, 0);
        for (std::size_t k = 0; k < len; ++k) {
          divergence_sum[k] += (ta.states[k] - tb.states[k]).norm();
          ++divergence_count[k];
        }
      }
    }
    const std::string div_path = run.out("compare_divergence_d" + std::to_string(d) + ".csv");
    std::vector<double> steps, mean_div;
    {
      CsvWriter csv(div_path, {"step", "mean_divergence", "pairs"});
      for (std::size_t k = 0; k < divergence_sum.size(); ++k) {
        const double m = divergence_sum[k] / divergence_count[k];
        csv.row({static_cast<double>(k), m, static_cast<double>(divergence_count[k])});
        steps.push_back(static_cast<double>(k));
        mean_div.push_back(m);
      }
    }
    run.csv_done(div_path, {{"d", d}, {"nonblind_steps", sched.n_steps}});
    plot.line(steps, mean_div, color(r), "d=" + std::to_string(d));
    results.push_back({{"d", d}, {"blind_wins", blind_wins}, {"n_seeds", n_seeds}, {"nonblind_steps", sched.n_steps}});
    run.note("d=" + std::to_string(d) + " blind no worse on " + std::to_string(blind_wins) + "/" +
             std::to_string(n_seeds) + " seeds");
  }
  run.csv_done(seeds_path);
  plot.save(run.out("compare_divergence.svg"));
  write_json(run.out("compare_summary.json"), run.sidecar({{"results", results}}));
}

}  // namespace

void run_command(const std::string& name, const Context& ctx) {
  static const std::map<std::string, std::function<void(const Run&)>> table{
      {"mle-hist", cmd_mle_hist}, {"sample", cmd_sample},     {"track-schedule", cmd_track_schedule},
      {"mismatch", cmd_mismatch}, {"train", cmd_train},       {"compare", cmd_compare}};
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown command '" + name + "'");
  const Run run(ctx, name);
  it->second(run);
}

}  // namespace bddm::cli
