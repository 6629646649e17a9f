// Copyright 2026 The Authors.
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

#pragma once

#include <algorithm>
#include <cmath>
#include <chrono>
#include <functional>
#include <optional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridgsp/autodiff.hpp"
#include "gridgsp/errors.hpp"
#include "gridgsp/gso.hpp"
#include "gridgsp/nn.hpp"
#include "gridgsp/power_flow.hpp"
#include "gridgsp/sampling.hpp"

namespace gridgsp {

// Per load phase: p_t = p_nom (1 + A sin(2 pi t / period) + e_t),
// e_t = rho e_{t-1} + sigma xi_t, q_t = p_t tan(acos(pf)).
struct LoadProcess {
  double rho = 0.9;
  double sigma = 0.02;
  double profile_amplitude = 0.0;
  int period = 24;
  double power_factor = 0.95;

  void validate() const {
    if (!(std::abs(rho) < 1.0)) throw ValidationError("load process: |rho| must be < 1");
    if (!(sigma >= 0.0)) throw ValidationError("load process: sigma must be nonnegative");
    if (period < 1) throw ValidationError("load process: period must be positive");
    if (!(power_factor > 0.0 && power_factor <= 1.0)) throw ValidationError("load process: power factor in (0, 1]");
  }
};

struct SyntheticSeries {
  std::vector<OperatingPoint> points;
  std::vector<Eigen::VectorXcd> injections;
};

inline SyntheticSeries generate_synthetic_series(const GridCase& grid, int steps, const LoadProcess& process,
                                                 std::uint64_t seed) {
  process.validate();
  if (steps < 1) throw ValidationError("synthetic series: steps must be positive");
  const AdmittanceMatrix y = assemble_admittance(grid);
  const PowerFlowSolver solver(grid, y);
  const Eigen::VectorXcd slack = nominal_slack_voltage(grid);
  const Eigen::VectorXd p_nom = grid.nominal_load().real();
  const double tan_phi = std::tan(std::acos(process.power_factor));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  const Index n = grid.node_count();
  Eigen::VectorXd e(n);
  const double stationary = process.sigma / std::sqrt(1.0 - process.rho * process.rho);
  for (Index k = 0; k < n; ++k) e(k) = stationary * gauss(rng);
  SyntheticSeries out;
  for (int t = 0; t < steps; ++t) {
    if (t > 0) {
      for (Index k = 0; k < n; ++k) e(k) = process.rho * e(k) + process.sigma * gauss(rng);
    }
    const double profile = process.profile_amplitude * std::sin(2.0 * std::numbers::pi * t / process.period);
    Eigen::VectorXcd inj(n);
    for (Index k = 0; k < n; ++k) {
      const double p = p_nom(k) * (1.0 + profile + e(k));
      inj(k) = -Complex(p, p * tan_phi);
    }
    try {
      out.points.push_back(solver.solve(inj, slack));
    } catch (const ConvergenceError& err) {
      throw ConvergenceError("synthetic series: step " + std::to_string(t) + ": " + err.what(), err.iterations());
    }
    out.injections.push_back(inj);
  }
  return out;
}

struct DatasetOptions {
  int window_t = 10;
  int horizon = 0;
  double mu1 = 1e-6;
  double noise_sigma = 1e-3;
  std::uint64_t seed = 0;
};

// One row per sample, column-major batches: frames[tau] is n x B (oldest
// first), targets n x B, s_meas |M| x B measured complex power at t + H.
struct ForecastDataset {
  std::vector<Eigen::MatrixXd> frames;
  Eigen::MatrixXd targets;
  Eigen::MatrixXcd s_meas;
  std::vector<long> time;  // index t of the most recent input frame
  std::vector<Index> observed;
  int window_t = 0;
  int horizon = 0;

  Index size() const { return targets.cols(); }

  ForecastDataset subset(const std::vector<Index>& idx) const {
    ForecastDataset d;
    for (const auto& f : frames) d.frames.push_back(f(Eigen::all, idx));
    d.targets = targets(Eigen::all, idx);
    d.s_meas = s_meas(Eigen::all, idx);
    for (Index k : idx) d.time.push_back(time[static_cast<std::size_t>(k)]);
    d.observed = observed;
    d.window_t = window_t;
    d.horizon = horizon;
    return d;
  }

  // Timestamps touched by sample k: inputs t-T+1..t and target t+H.
  std::pair<long, long> span(Index k) const {
    const long t = time[static_cast<std::size_t>(k)];
    return {t - window_t + 1, t + horizon};
  }
};

inline ForecastDataset build_dataset(const SyntheticSeries& series, const GridCase& grid, const RealGso& gso,
                                     const std::vector<Index>& observed, const DatasetOptions& opt) {
  if (opt.window_t < 1 || opt.horizon < 0) throw ValidationError("dataset: need T >= 1 and H >= 0");
  if (!(opt.mu1 >= 0.0) || !(opt.noise_sigma >= 0.0)) throw ValidationError("dataset: mu1 and noise must be >= 0");
  const long len = static_cast<long>(series.points.size());
  if (len < opt.window_t + opt.horizon) {
    throw ValidationError("dataset: series of length " + std::to_string(len) + " is shorter than T + H = " +
                          std::to_string(opt.window_t + opt.horizon));
  }
  const AdmittanceMatrix y = assemble_admittance(grid);
  const MeasurementModel model = build_measurement_model(y, observed);
  const StateRecovery recovery(model, phase_aligned_regularizer(gso), opt.mu1);
  const Index n = grid.node_count();
  const Index m = static_cast<Index>(model.observed.size());
  std::mt19937_64 rng(opt.seed);

  std::vector<Eigen::VectorXd> recovered;
  std::vector<Eigen::VectorXcd> power;
  for (const OperatingPoint& op : series.points) {
    const MeasurementSample z = measure(model, op.v, opt.noise_sigma, rng);
    recovered.push_back(state_signal(grid.nodes(), recovery.recover(z).v));
    // z = [i_M; v_M]
    power.push_back(z.z.tail(m).cwiseProduct(z.z.head(m).conjugate()));
  }

  const long first = opt.window_t - 1;
  const long last = len - 1 - opt.horizon;
  const Index count = static_cast<Index>(last - first + 1);
  ForecastDataset d;
  d.window_t = opt.window_t;
  d.horizon = opt.horizon;
  d.observed = model.observed;
  d.frames.assign(static_cast<std::size_t>(opt.window_t), Eigen::MatrixXd(2 * n, count));
  d.targets.resize(2 * n, count);
  d.s_meas.resize(m, count);
  for (long t = first; t <= last; ++t) {
    const Index c = static_cast<Index>(t - first);
    for (int tau = 0; tau < opt.window_t; ++tau) {
      d.frames[static_cast<std::size_t>(tau)].col(c) = recovered[static_cast<std::size_t>(t - opt.window_t + 1 + tau)];
    }
    const auto target_t = static_cast<std::size_t>(t + opt.horizon);
    d.targets.col(c) = state_signal(grid.nodes(), series.points[target_t].v);
    d.s_meas.col(c) = power[target_t];
    d.time.push_back(t);
  }
  return d;
}

struct DatasetSplit {
  ForecastDataset train;
  ForecastDataset validation;
  ForecastDataset test;
};

// Chronological split; samples whose timestamp span would overlap the
// previous block are dropped so no timestamp is shared between blocks.
inline DatasetSplit split_dataset(const ForecastDataset& d, double train_frac = 0.7, double val_frac = 0.15) {
  const Index n = d.size();
  const Index n_train = static_cast<Index>(std::floor(train_frac * static_cast<double>(n)));
  const Index n_val = static_cast<Index>(std::floor(val_frac * static_cast<double>(n)));
  std::vector<Index> blocks[3];
  long boundary = std::numeric_limits<long>::min();
  for (Index k = 0; k < n; ++k) {
    const int b = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
    if (b > 0 && !blocks[b].empty()) {
      blocks[b].push_back(k);
      continue;
    }
    if (b > 0 && blocks[b].empty()) {
      const Index prev_last = blocks[b - 1].empty() ? -1 : blocks[b - 1].back();
      if (prev_last >= 0) boundary = d.span(prev_last).second;
      if (d.span(k).first <= boundary) continue;
    }
    blocks[b].push_back(k);
  }
  for (int b = 0; b < 3; ++b) {
    if (blocks[b].empty()) throw ValidationError("dataset split: a split is empty (series too short)");
  }
  return {d.subset(blocks[0]), d.subset(blocks[1]), d.subset(blocks[2])};
}

// Differentiable s = v o conj(Y v) at the observed nodes for v = |v| e^{j(phi + offset)}.
class PowerRegularizer {
 public:
  PowerRegularizer(const GridCase& grid, const std::vector<Index>& observed) {
    const AdmittanceMatrix y = assemble_admittance(grid);
    const Eigen::MatrixXcd dense = y.dense();
    g_ = dense.real();
    b_ = dense.imag();
    const Index n = grid.node_count();
    offsets_.resize(n);
    for (Index k = 0; k < n; ++k) offsets_(k) = phase_offset(grid.nodes()[static_cast<std::size_t>(k)].phase);
    select_ = Eigen::MatrixXd::Zero(static_cast<Index>(observed.size()), n);
    for (std::size_t r = 0; r < observed.size(); ++r) select_(static_cast<Index>(r), observed[r]) = 1.0;
  }

  // Returns (Re s_M, Im s_M) for signals x = [phi; |v|] (2N x B).
  std::pair<ad::Var, ad::Var> observed_power(const ad::Var& x) const {
    const Index n = g_.rows();
    const ad::Var angle = ad::add_col_broadcast(ad::slice_rows(x, 0, n), ad::constant(offsets_));
    const ad::Var mag = ad::slice_rows(x, n, n);
    const ad::Var a = ad::mul(mag, ad::cos(angle));
    const ad::Var b = ad::mul(mag, ad::sin(angle));
    const ad::Var g = ad::constant(g_);
    const ad::Var bb = ad::constant(b_);
    const ad::Var ir = ad::sub(ad::matmul(g, a), ad::matmul(bb, b));
    const ad::Var ii = ad::add(ad::matmul(g, b), ad::matmul(bb, a));
    const ad::Var p = ad::add(ad::mul(a, ir), ad::mul(b, ii));
    const ad::Var q = ad::sub(ad::mul(b, ir), ad::mul(a, ii));
    const ad::Var sel = ad::constant(select_);
    return {ad::matmul(sel, p), ad::matmul(sel, q)};
  }

  // Per-sample sum of |s_meas - s(x)|^2, averaged over samples.
  ad::Var penalty(const ad::Var& x, const Eigen::MatrixXcd& s_meas) const {
    const auto [p, q] = observed_power(x);
    const ad::Var dp = ad::sub(p, ad::constant(s_meas.real()));
    const ad::Var dq = ad::sub(q, ad::constant(s_meas.imag()));
    return ad::scale(ad::add(ad::sum(ad::square(dp)), ad::sum(ad::square(dq))), 1.0 / static_cast<double>(x->cols()));
  }

 private:
  Eigen::MatrixXd g_;
  Eigen::MatrixXd b_;
  Eigen::VectorXd offsets_;
  Eigen::MatrixXd select_;
};

struct TrainOptions {
  double mu2 = 1e-3;
  int epochs = 2000;
  int patience = 200;
  double lr = 1e-3;
  double lr_decay = 1.0;  // lr at the last epoch over lr at the first, geometric in between
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_mse = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> trace;
  int best_epoch = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

inline double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.size() == 0) throw ValidationError("mse: empty set");
  return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

// Loss = mean over samples of ||y - x_{t+H}||^2 + mu2 ||s_meas - [y_c o (Y y_c)^*]_M||^2.
inline ad::Var forecast_loss(const GraphNet& net, const ForecastDataset& d, const PowerRegularizer& reg, double mu2) {
  const ad::Var y = net.predict(constant_frames(d.frames));
  const ad::Var fit =
      ad::scale(ad::sum(ad::square(ad::sub(y, ad::constant(d.targets)))), 1.0 / static_cast<double>(d.size()));
  if (mu2 == 0.0) return fit;
  return ad::add(fit, ad::scale(reg.penalty(y, d.s_meas), mu2));
}

inline Eigen::MatrixXd predict(const GraphNet& net, const ForecastDataset& d) {
  return net.predict(constant_frames(d.frames))->value;
}

// Full-batch Adam; keeps the parameters of the best validation epoch and
// stops after `patience` epochs without improvement.
inline TrainResult train_forecaster(GraphNet& net, const DatasetSplit& data, const PowerRegularizer& reg,
                                    const TrainOptions& opt) {
  if (!(opt.mu2 >= 0.0)) throw ValidationError("train: mu2 must be nonnegative");
  if (opt.epochs < 1) throw ValidationError("train: epochs must be positive");
  if (!(opt.lr > 0.0) || !(opt.lr_decay > 0.0 && opt.lr_decay <= 1.0)) {
    throw ValidationError("train: need lr > 0 and lr_decay in (0, 1]");
  }
  const auto params = net.parameters();
  ad::Adam adam(params, ad::AdamConfig{opt.lr});
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::MatrixXd> best_params;
  for (const auto& p : params) best_params.push_back(p->value);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    adam.zero_grad();
    const ad::Var loss = forecast_loss(net, data.train, reg, opt.mu2);
    if (!std::isfinite(loss->scalar())) {
      throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " (check learning rate, mu2 and input scaling)");
    }
    ad::backward(loss);
    const double val = mse(predict(net, data.validation), data.validation.targets);
    result.trace.push_back({epoch, loss->scalar(), val});
    if (epoch == 0) result.initial_loss = loss->scalar();
    if (val < best) {
      best = val;
      result.best_epoch = epoch;
      for (std::size_t k = 0; k < params.size(); ++k) best_params[k] = params[k]->value;
    } else if (epoch - result.best_epoch >= opt.patience) {
      break;
    }
    adam.config().lr = opt.lr * std::pow(opt.lr_decay, static_cast<double>(epoch) / std::max(1, opt.epochs - 1));
    adam.step();
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_params[k];
  result.final_loss = forecast_loss(net, data.train, reg, opt.mu2)->scalar();
  return result;
}

struct ForecastMetrics {
  double mse = 0.0;
  double mape = 0.0;  // percent, on linearized injections
};

// Mean absolute percentage error of the linearized injections
// (S x + [p_cst; q_cst]) over entries whose true magnitude is at least 1e-4 p.u.
inline double injection_mape(const RealGso& gso, const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  Eigen::VectorXd cst(gso.s_full.rows());
  cst << gso.p_cst, gso.q_cst;
  const Eigen::MatrixXd sp = (gso.s_full * pred).colwise() + cst;
  const Eigen::MatrixXd st = (gso.s_full * truth).colwise() + cst;
  double acc = 0.0;
  long count = 0;
  for (Index k = 0; k < st.size(); ++k) {
    if (std::abs(st.data()[k]) >= 1e-4) {
      acc += std::abs(sp.data()[k] - st.data()[k]) / std::abs(st.data()[k]);
      ++count;
    }
  }
  return count ? 100.0 * acc / static_cast<double>(count) : 0.0;
}

inline ForecastMetrics evaluate(const GraphNet& net, const ForecastDataset& d, const RealGso& gso) {
  if (d.size() == 0) throw ValidationError("evaluate: empty test set");
  const Eigen::MatrixXd y = predict(net, d);
  return {mse(y, d.targets), injection_mape(gso, y, d.targets)};
}

// Repeats the most recent recovered state.
inline ForecastMetrics evaluate_persistence(const ForecastDataset& d, const RealGso& gso) {
  if (d.size() == 0) throw ValidationError("evaluate: empty test set");
  return {mse(d.frames.back(), d.targets), injection_mape(gso, d.frames.back(), d.targets)};
}

// Per-entry mean and standard deviation of the training inputs.
inline InputNormalization fit_input_normalization(const ForecastDataset& train, double floor = 1e-6) {
  Eigen::MatrixXd all(train.targets.rows(), train.size() * static_cast<Index>(train.frames.size()));
  for (std::size_t k = 0; k < train.frames.size(); ++k) all.middleCols(static_cast<Index>(k) * train.size(), train.size()) = train.frames[k];
  InputNormalization in;
  in.center = all.rowwise().mean();
  in.scale = ((all.colwise() - in.center).array().square().rowwise().mean().sqrt()).max(floor).matrix();
  return in;
}

// Affine output map centered on the training-target mean; the half range is
// `margin` times the largest deviation seen in training (at least `floor`).
inline OutputScaling fit_output_scaling(const ForecastDataset& train, double margin = 2.0, double floor = 1e-4) {
  OutputScaling out;
  out.center = train.targets.rowwise().mean();
  out.half_range = ((train.targets.colwise() - out.center).cwiseAbs().rowwise().maxCoeff() * margin)
                       .cwiseMax(floor);
  return out;
}

// Independent seed for stream `stream` of a run seeded with `seed` (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Greedy PMU placement on the node-level physics GSO.
inline std::vector<Index> default_observed_nodes(const RealGso& gso, int pmus, int k_freqs) {
  return place_pmus(gft(gso.b_hat), k_freqs, pmus).selected;
}

struct ForecastExperiment {
  Arch arch = Arch::gcn;
  int steps = 3000;
  LoadProcess process{};
  bool full_observation = false;
  int pmus = 8;
  int k_freqs = 8;
  DatasetOptions dataset{};
  TrainOptions train{};
  NetConfig net{};  // arch, signal and output sizes are filled in by the run
  bool fit_output_map = true;
};

struct ForecastRun {
  std::vector<Index> observed;
  ForecastMetrics model;
  ForecastMetrics persistence;
  TrainResult training;
  std::optional<GraphNet> net;
  double seconds = 0.0;
};

inline ForecastRun run_forecast_experiment(const GridCase& grid, const ForecastExperiment& exp, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const RealGso gso = build_real_gso(grid);
  ForecastRun run;
  if (exp.full_observation) {
    for (Index k = 0; k < grid.node_count(); ++k) run.observed.push_back(k);
  } else {
    run.observed = default_observed_nodes(gso, exp.pmus, exp.k_freqs);
  }
  const SyntheticSeries series = generate_synthetic_series(grid, exp.steps, exp.process, derive_seed(seed, 0));
  DatasetOptions dopt = exp.dataset;
  dopt.seed = derive_seed(seed, 1);
  const DatasetSplit data = split_dataset(build_dataset(series, grid, gso, run.observed, dopt));

  NetConfig cfg = exp.net;
  cfg.arch = exp.arch;
  cfg.window_t = dopt.window_t;
  cfg.signal_dim = 2 * grid.node_count();
  cfg.head = HeadKind::regression;
  cfg.out_dim = cfg.signal_dim;
  GraphNet net(cfg, gso.s_full, derive_seed(seed, 2));
  net.input_normalization() = fit_input_normalization(data.train);
  if (exp.fit_output_map) net.output_scaling() = fit_output_scaling(data.train);

  TrainOptions topt = exp.train;
  topt.seed = derive_seed(seed, 3);
  const PowerRegularizer reg(grid, data.train.observed);
  run.training = train_forecaster(net, data, reg, topt);
  run.model = evaluate(net, data.test, gso);
  run.persistence = evaluate_persistence(data.test, gso);
  run.net.emplace(std::move(net));
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace gridgsp
