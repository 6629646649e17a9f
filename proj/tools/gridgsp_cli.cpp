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

// Batch front end. Every subcommand writes its artifacts and a manifest.json
// (resolved config, version, seed, input and artifact hashes) into --out.
// Exit status: 0 success, 2 invalid configuration or input, 1 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gridgsp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gridgsp;

namespace {

constexpr int kConfigVersion = 1;

const std::vector<std::pair<std::string, std::string>>& subcommands() {
  static const std::vector<std::pair<std::string, std::string>> names{
      {"gen-data", "simulate a load series and its power-flow states"},
      {"build-gso", "write the real graph shift operator and its frequencies"},
      {"place-pmus", "greedy PMU placement on the low graph frequencies"},
      {"estimate", "state estimation from simulated PMU measurements"},
      {"forecast-train", "train a GCN or GRN state forecaster"},
      {"forecast-eval", "evaluate a forecaster checkpoint on fresh data"},
      {"drl-train", "train a volt-var policy with PPO"},
      {"drl-eval", "evaluate a volt-var policy against zero action"},
  };
  return names;
}

bool is_stochastic(const std::string& sub) { return sub != "build-gso" && sub != "place-pmus"; }

json default_config() {
  return {
      {"schema", "gridgsp-config"},
      {"version", kConfigVersion},
      {"case", GRIDGSP_DATA_DIR "/cases/four_bus.json"},
      {"data",
       {{"steps", 1000}, {"rho", 0.9}, {"sigma", 0.02}, {"profile_amplitude", 0.3}, {"period", 24},
        {"power_factor", 0.95}}},
      {"placement", {{"k", 6}, {"m", 6}}},
      {"estimate", {{"mu1", 1e-6}, {"noise_sigma", 1e-3}}},
      {"forecast",
       {{"arch", "gcn"},
        {"T", 10},
        {"H", 0},
        {"mu1", 1e-6},
        {"mu2", 1e-3},
        {"noise_sigma", 1e-3},
        {"epochs", 200},
        {"patience", 200},
        {"lr", 1e-3},
        {"full_observation", false},
        {"K", 2},
        {"channels", 10},
        {"hidden", {512}},
        {"model", ""}}},
      {"drl",
       {{"arch", "gcn"},
        {"episodes", 300},
        {"partial", false},
        {"lr", 0.0007},
        {"gamma", 0.99},
        {"clip", 0.1},
        {"entropy_weight", 0.01},
        {"value_weight", 1.0},
        {"episodes_per_update", 4},
        {"epochs_per_update", 4},
        {"minibatch_size", 24},
        {"rollout_length", 1},
        {"max_grad_norm", 0.5},
        {"anneal_lr", true},
        {"critic_arch", "gcn"},
        {"eval_episodes", 10},
        {"episode_length", 24},
        {"pv_peak", 0.9},
        {"K", 2},
        {"channels", 10},
        {"hidden", {512}},
        {"policy", ""}}},
  };
}

// Overlays `patch` onto `base`, rejecting keys the schema does not know.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ValidationError("config: " + where + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
    if (base[key].is_object()) {
      overlay(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void apply_setting(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &cfg;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ValidationError("--set: unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ValidationError("--set: '" + path + "' is a section, not a value");
  *node = value;
}

template <class T>
T field(const json& cfg, const std::string& section, const std::string& key) {
  try {
    return section.empty() ? cfg.at(key).get<T>() : cfg.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: " + (section.empty() ? key : section + "." + key) + " has the wrong type");
  }
}

fs::path absolute_path(const fs::path& p) { return p.empty() ? p : fs::weakly_canonical(fs::absolute(p)); }

// Typed, range-checked view of a resolved config. Built before any compute.
struct Settings {
  fs::path case_path;
  std::optional<GridCase> grid;
  LoadProcess process;
  int steps = 0;
  int k = 0;
  int m = 0;
  double est_mu1 = 0.0;
  double est_sigma = 0.0;
  ForecastExperiment forecast;
  fs::path model_path;
  VoltVarExperiment drl;
  fs::path policy_path;
};

NetConfig net_shape(const json& cfg, const std::string& section) {
  NetConfig n;
  n.order_k = field<int>(cfg, section, "K");
  n.channels = field<int>(cfg, section, "channels");
  n.hidden = field<std::vector<int>>(cfg, section, "hidden");
  if (n.order_k < 0 || n.channels < 1 || n.hidden.empty()) {
    throw ValidationError("config: " + section + " needs K >= 0, channels >= 1 and at least one hidden layer");
  }
  for (int h : n.hidden) {
    if (h < 1) throw ValidationError("config: " + section + ".hidden widths must be positive");
  }
  return n;
}

Settings resolve(const std::string& sub, const json& cfg) {
  if (field<std::string>(cfg, "", "schema") != "gridgsp-config" || field<int>(cfg, "", "version") != kConfigVersion) {
    throw ValidationError("config: expected schema gridgsp-config version " + std::to_string(kConfigVersion));
  }
  Settings s;
  s.case_path = field<std::string>(cfg, "", "case");
  if (!fs::is_regular_file(s.case_path)) throw ValidationError("config: case file not found: " + s.case_path.string());
  s.grid.emplace(load_case(s.case_path));
  const Index n = s.grid->node_count();

  s.process.rho = field<double>(cfg, "data", "rho");
  s.process.sigma = field<double>(cfg, "data", "sigma");
  s.process.profile_amplitude = field<double>(cfg, "data", "profile_amplitude");
  s.process.period = field<int>(cfg, "data", "period");
  s.process.power_factor = field<double>(cfg, "data", "power_factor");
  s.process.validate();
  s.steps = field<int>(cfg, "data", "steps");
  if (s.steps < 1) throw ValidationError("config: data.steps must be positive");

  s.k = field<int>(cfg, "placement", "k");
  s.m = field<int>(cfg, "placement", "m");
  const bool places = sub == "place-pmus" || sub == "estimate" ||
                      (sub == "forecast-train" && !field<bool>(cfg, "forecast", "full_observation")) ||
                      (sub == "drl-train" && field<bool>(cfg, "drl", "partial"));
  if (places && (s.k < 1 || s.k > n || s.m < 1 || s.m > n)) {
    throw ValidationError("config: placement k and m must be in [1, " + std::to_string(n) + "]");
  }

  s.est_mu1 = field<double>(cfg, "estimate", "mu1");
  s.est_sigma = field<double>(cfg, "estimate", "noise_sigma");
  if (!(s.est_mu1 >= 0.0) || !(s.est_sigma >= 0.0)) {
    throw ValidationError("config: estimate.mu1 and estimate.noise_sigma must be nonnegative");
  }

  ForecastExperiment& f = s.forecast;
  f.arch = parse_arch(field<std::string>(cfg, "forecast", "arch"));
  f.steps = s.steps;
  f.process = s.process;
  f.full_observation = field<bool>(cfg, "forecast", "full_observation");
  f.pmus = s.m;
  f.k_freqs = s.k;
  f.dataset.window_t = field<int>(cfg, "forecast", "T");
  f.dataset.horizon = field<int>(cfg, "forecast", "H");
  f.dataset.mu1 = field<double>(cfg, "forecast", "mu1");
  f.dataset.noise_sigma = field<double>(cfg, "forecast", "noise_sigma");
  f.train.mu2 = field<double>(cfg, "forecast", "mu2");
  f.train.epochs = field<int>(cfg, "forecast", "epochs");
  f.train.patience = field<int>(cfg, "forecast", "patience");
  f.train.lr = field<double>(cfg, "forecast", "lr");
  f.net = net_shape(cfg, "forecast");
  if (f.dataset.window_t < 1 || f.dataset.horizon < 0) throw ValidationError("config: forecast needs T >= 1, H >= 0");
  if (!(f.dataset.mu1 >= 0.0)) throw ValidationError("config: forecast.mu1 must be nonnegative");
  if (!(f.dataset.noise_sigma >= 0.0)) throw ValidationError("config: forecast.noise_sigma must be nonnegative");
  if (!(f.train.mu2 >= 0.0)) throw ValidationError("config: forecast.mu2 must be nonnegative");
  if (f.train.epochs < 1 || f.train.patience < 1 || !(f.train.lr > 0.0)) {
    throw ValidationError("config: forecast needs epochs >= 1, patience >= 1 and lr > 0");
  }
  if (sub.rfind("forecast", 0) == 0 && s.steps < f.dataset.window_t + f.dataset.horizon + 20) {
    throw ValidationError("config: data.steps too small for forecast T and H");
  }
  s.model_path = field<std::string>(cfg, "forecast", "model");

  VoltVarExperiment& d = s.drl;
  d.arch = parse_arch(field<std::string>(cfg, "drl", "arch"));
  d.episodes = field<int>(cfg, "drl", "episodes");
  d.eval_episodes = field<int>(cfg, "drl", "eval_episodes");
  d.partial = field<bool>(cfg, "drl", "partial");
  d.pmus = s.m;
  d.k_freqs = s.k;
  d.ppo.lr = field<double>(cfg, "drl", "lr");
  d.ppo.gamma = field<double>(cfg, "drl", "gamma");
  d.ppo.clip = field<double>(cfg, "drl", "clip");
  d.ppo.entropy_weight = field<double>(cfg, "drl", "entropy_weight");
  d.ppo.value_weight = field<double>(cfg, "drl", "value_weight");
  d.ppo.episodes_per_update = field<int>(cfg, "drl", "episodes_per_update");
  d.ppo.epochs_per_update = field<int>(cfg, "drl", "epochs_per_update");
  d.ppo.minibatch_size = field<int>(cfg, "drl", "minibatch_size");
  d.ppo.rollout_length = field<int>(cfg, "drl", "rollout_length");
  d.ppo.max_grad_norm = field<double>(cfg, "drl", "max_grad_norm");
  d.ppo.anneal_lr = field<bool>(cfg, "drl", "anneal_lr");
  d.ppo.critic_arch = parse_arch(field<std::string>(cfg, "drl", "critic_arch"));
  d.ppo.validate();
  d.env.episode_length = field<int>(cfg, "drl", "episode_length");
  d.env.pv_peak = field<double>(cfg, "drl", "pv_peak");
  d.env.load = s.process;
  d.env.noise_sigma = s.est_sigma;
  d.env.mu1 = s.est_mu1;
  d.env.validate();
  d.net = net_shape(cfg, "drl");
  if (d.episodes < 1 || d.eval_episodes < 1) throw ValidationError("config: drl episode counts must be positive");
  if (s.grid->inverters().empty() && (sub == "drl-train" || sub == "drl-eval")) {
    throw ValidationError("config: case has no inverters");
  }
  s.policy_path = field<std::string>(cfg, "drl", "policy");

  if (sub == "forecast-eval" && !fs::is_regular_file(s.model_path)) {
    throw ValidationError("config: forecast.model must name an existing checkpoint");
  }
  if (sub == "drl-eval" && !fs::is_regular_file(s.policy_path)) {
    throw ValidationError("config: drl.policy must name an existing checkpoint");
  }
  return s;
}

// Artifacts written so far, by file name.
class Output {
 public:
  explicit Output(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    io::write_file(dir_ / name, content);
    hashes_[name] = io::sha256_hex(content);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  const std::map<std::string, std::string>& hashes() const { return hashes_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::string> hashes_;
};

json labels(const GridCase& g, const std::vector<Index>& nodes) {
  json out = json::array();
  for (Index k : nodes) out.push_back(g.nodes()[static_cast<std::size_t>(k)].label());
  return out;
}

json metrics_json(const ForecastMetrics& m) { return {{"mse", m.mse}, {"mape_percent", m.mape}}; }

json evaluation_json(const PolicyEvaluation& e) {
  return {{"mean_deviation", e.mean_deviation}, {"mean_reward", e.mean_reward}, {"diverged", e.diverged}};
}

void run_gen_data(const Settings& s, std::uint64_t seed, Output& out) {
  const GridCase& g = *s.grid;
  const SyntheticSeries series = generate_synthetic_series(g, s.steps, s.process, seed);
  std::vector<std::string> header{"t"};
  for (const char* kind : {"phi", "vm", "p", "q"}) {
    for (const NodeIndex& node : g.nodes()) header.push_back(std::string(kind) + "_" + node.label());
  }
  io::CsvTable table(header);
  for (std::size_t t = 0; t < series.points.size(); ++t) {
    const Eigen::VectorXd x = state_signal(g.nodes(), series.points[t].v);
    std::vector<double> row{static_cast<double>(t)};
    for (Index k = 0; k < x.size(); ++k) row.push_back(x(k));
    for (Index k = 0; k < g.node_count(); ++k) row.push_back(series.injections[t](k).real());
    for (Index k = 0; k < g.node_count(); ++k) row.push_back(series.injections[t](k).imag());
    table.add_row(row);
  }
  out.write("series.csv", table.str());
}

void run_build_gso(const Settings& s, Output& out) {
  const RealGso gso = build_real_gso(*s.grid);
  out.write("gso.txt", io::export_gso(gso));
  const GftBasis basis = gft(gso.b_hat);
  io::CsvTable freq({"index", "eigenvalue"});
  for (Index k = 0; k < basis.lambda.size(); ++k) freq.add_row(std::vector<double>{static_cast<double>(k), basis.lambda(k)});
  out.write("graph_frequencies.csv", freq.str());
}

void run_place_pmus(const Settings& s, Output& out) {
  const RealGso gso = build_real_gso(*s.grid);
  const PlacementResult p = place_pmus(gft(gso.b_hat), s.k, s.m);
  io::CsvTable table({"rank", "node", "label"});
  for (std::size_t r = 0; r < p.selected.size(); ++r) {
    table.add_row(std::vector<std::string>{std::to_string(r), std::to_string(p.selected[r]),
                                           s.grid->nodes()[static_cast<std::size_t>(p.selected[r])].label()});
  }
  out.write("placement.csv", table.str());
  out.write_json("placement.json",
                 {{"k", s.k}, {"m", s.m}, {"sigma_min", p.sigma_min}, {"selected", p.selected},
                  {"labels", labels(*s.grid, p.selected)}});
}

void run_estimate(const Settings& s, std::uint64_t seed, Output& out) {
  const GridCase& g = *s.grid;
  const RealGso gso = build_real_gso(g);
  const PlacementResult p = place_pmus(gft(gso.b_hat), s.k, s.m);
  const SyntheticSeries series = generate_synthetic_series(g, s.steps, s.process, derive_seed(seed, 0));
  const MeasurementModel model = build_measurement_model(assemble_admittance(g), p.selected);
  const StateRecovery recovery(model, phase_aligned_regularizer(gso), s.est_mu1);
  std::mt19937_64 rng(derive_seed(seed, 1));
  io::CsvTable table({"t", "rmse", "max_abs_error"});
  double total = 0.0;
  for (std::size_t t = 0; t < series.points.size(); ++t) {
    const Eigen::VectorXcd& v = series.points[t].v;
    const StateEstimate est = recovery.recover(measure(model, v, s.est_sigma, rng));
    const Eigen::VectorXcd err = est.v - v;
    const double rmse = err.norm() / std::sqrt(static_cast<double>(err.size()));
    total += rmse;
    table.add_row(std::vector<double>{static_cast<double>(t), rmse, err.cwiseAbs().maxCoeff()});
  }
  out.write("estimate.csv", table.str());
  out.write_json("metrics.json", {{"observed", labels(g, p.selected)},
                                  {"sigma_min", p.sigma_min},
                                  {"rank", recovery.rank()},
                                  {"mean_rmse", total / static_cast<double>(series.points.size())}});
}

void run_forecast_train(const Settings& s, std::uint64_t seed, Output& out) {
  const ForecastRun run = run_forecast_experiment(*s.grid, s.forecast, seed);
  json ckpt = run.net->to_json();
  ckpt["observed"] = run.observed;
  ckpt["horizon"] = s.forecast.dataset.horizon;
  out.write_json("model.json", ckpt);
  io::CsvTable trace({"epoch", "train_loss", "validation_mse"});
  for (const EpochRecord& e : run.training.trace) {
    trace.add_row(std::vector<double>{static_cast<double>(e.epoch), e.train_loss, e.validation_mse});
  }
  out.write("trace.csv", trace.str());
  out.write_json("metrics.json", {{"observed", labels(*s.grid, run.observed)},
                                  {"best_epoch", run.training.best_epoch},
                                  {"test", metrics_json(run.model)},
                                  {"persistence", metrics_json(run.persistence)}});
}

void run_forecast_eval(const Settings& s, std::uint64_t seed, Output& out) {
  const GridCase& g = *s.grid;
  const RealGso gso = build_real_gso(g);
  const json ckpt = json::parse(io::read_file(s.model_path));
  const GraphNet net = GraphNet::from_json(ckpt, gso.s_full);
  if (net.config().head != HeadKind::regression) throw ValidationError("forecast-eval: checkpoint is not a forecaster");
  const auto observed = ckpt.at("observed").get<std::vector<Index>>();
  DatasetOptions opt = s.forecast.dataset;
  opt.window_t = net.config().window_t;
  opt.horizon = ckpt.at("horizon").get<int>();
  opt.seed = derive_seed(seed, 1);
  const SyntheticSeries series = generate_synthetic_series(g, s.steps, s.process, derive_seed(seed, 0));
  const ForecastDataset data = build_dataset(series, g, gso, observed, opt);
  const Eigen::MatrixXd pred = predict(net, data);
  io::CsvTable table({"t", "mse_model", "mse_persistence"});
  for (Index c = 0; c < data.size(); ++c) {
    const double em = (pred.col(c) - data.targets.col(c)).squaredNorm();
    const double ep = (data.frames.back().col(c) - data.targets.col(c)).squaredNorm();
    table.add_row(std::vector<double>{static_cast<double>(data.time[static_cast<std::size_t>(c)]), em, ep});
  }
  out.write("errors.csv", table.str());
  out.write_json("metrics.json", {{"samples", data.size()},
                                  {"model", metrics_json(evaluate(net, data, gso))},
                                  {"persistence", metrics_json(evaluate_persistence(data, gso))}});
}

void run_drl_train(const Settings& s, std::uint64_t seed, Output& out) {
  const VoltVarRun run = run_voltvar_experiment(*s.grid, s.drl, seed);
  json ckpt = run.net->to_json();
  ckpt["observed"] = run.observed;
  out.write_json("policy.json", ckpt);
  io::CsvTable trace({"episode", "total_reward", "mean_deviation", "diverged"});
  for (const EpisodeRecord& e : run.training.episodes) {
    trace.add_row(std::vector<double>{static_cast<double>(e.episode), e.total_reward, e.mean_deviation,
                                      e.diverged ? 1.0 : 0.0});
  }
  out.write("reward_trace.csv", trace.str());
  out.write_json("metrics.json", {{"observed", labels(*s.grid, run.observed)},
                                  {"policy", evaluation_json(run.policy)},
                                  {"zero_action", evaluation_json(run.zero_action)},
                                  {"ratio", run.policy.mean_deviation / run.zero_action.mean_deviation}});
}

void run_drl_eval(const Settings& s, std::uint64_t seed, Output& out) {
  const json ckpt = json::parse(io::read_file(s.policy_path));
  VoltVarConfig vc = s.drl.env;
  vc.observed = ckpt.at("observed").get<std::vector<Index>>();
  VoltVarEnv env(*s.grid, vc);
  const GraphNet net = GraphNet::from_json(ckpt, env.shift());
  if (net.config().head != HeadKind::policy) throw ValidationError("drl-eval: checkpoint is not a policy");
  const PolicyEvaluation policy = evaluate_policy(env, net, s.drl.eval_episodes, seed);
  const PolicyEvaluation zero = evaluate_zero_action(env, s.drl.eval_episodes, seed);
  out.write_json("metrics.json", {{"episodes", s.drl.eval_episodes},
                                  {"policy", evaluation_json(policy)},
                                  {"zero_action", evaluation_json(zero)},
                                  {"ratio", policy.mean_deviation / zero.mean_deviation}});
}

struct Invocation {
  std::string subcommand;
  json config;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

json input_hashes(const std::string& sub, const Settings& s) {
  json in = {{"case", io::sha256_file(s.case_path)}};
  if (sub == "forecast-eval") in["model"] = io::sha256_file(s.model_path);
  if (sub == "drl-eval") in["policy"] = io::sha256_file(s.policy_path);
  return in;
}

// Validates everything, computes, then writes the manifest. Returns the manifest.
json execute(const Invocation& inv) {
  if (is_stochastic(inv.subcommand) && !inv.seed) {
    throw ValidationError(inv.subcommand + " is stochastic and requires --seed");
  }
  if (inv.out.empty()) throw ValidationError("--out is required");
  const Settings s = resolve(inv.subcommand, inv.config);
  const json inputs = input_hashes(inv.subcommand, s);
  const std::uint64_t seed = inv.seed.value_or(0);
  Output out(inv.out);
  const std::string& sub = inv.subcommand;
  if (sub == "gen-data") {
    run_gen_data(s, seed, out);
  } else if (sub == "build-gso") {
    run_build_gso(s, out);
  } else if (sub == "place-pmus") {
    run_place_pmus(s, out);
  } else if (sub == "estimate") {
    run_estimate(s, seed, out);
  } else if (sub == "forecast-train") {
    run_forecast_train(s, seed, out);
  } else if (sub == "forecast-eval") {
    run_forecast_eval(s, seed, out);
  } else if (sub == "drl-train") {
    run_drl_train(s, seed, out);
  } else if (sub == "drl-eval") {
    run_drl_eval(s, seed, out);
  } else {
    throw ValidationError("unknown subcommand " + sub);
  }
  json manifest = {{"tool", "gridgsp"},
                   {"version", GRIDGSP_VERSION},
                   {"git_revision", GRIDGSP_GIT_REVISION},
                   {"subcommand", sub},
                   {"seed", inv.seed ? json(*inv.seed) : json(nullptr)},
                   {"config", inv.config},
                   {"inputs", inputs},
                   {"artifacts", out.hashes()}};
  io::write_file(out.dir() / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

// Re-runs a manifest into `out` and compares artifact hashes.
int replay(const fs::path& manifest_path, const fs::path& out) {
  const json m = json::parse(io::read_file(manifest_path));
  if (m.value("tool", "") != "gridgsp" || !m.contains("subcommand") || !m.contains("config")) {
    throw ValidationError("replay: " + manifest_path.string() + " is not a gridgsp manifest");
  }
  Invocation inv;
  inv.subcommand = m.at("subcommand").get<std::string>();
  inv.config = m.at("config");
  if (!m.at("seed").is_null()) inv.seed = m.at("seed").get<std::uint64_t>();
  inv.out = out;
  const Settings s = resolve(inv.subcommand, inv.config);
  if (input_hashes(inv.subcommand, s) != m.at("inputs")) {
    throw Error("replay: input files changed since the manifest was written");
  }
  const json again = execute(inv);
  json report = {{"subcommand", inv.subcommand}, {"identical", true}, {"artifacts", json::object()}};
  for (const auto& [name, hash] : m.at("artifacts").items()) {
    const bool same = again.at("artifacts").contains(name) && again.at("artifacts").at(name) == hash;
    report["artifacts"][name] = same;
    if (!same) report["identical"] = false;
  }
  if (again.at("artifacts").size() != m.at("artifacts").size()) report["identical"] = false;
  std::cout << report.dump(2) << "\n";
  return report["identical"].get<bool>() ? 0 : 1;
}

void report_error(const char* kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  ad::keep_heap_resident();
  CLI::App app{"gridgsp: physics-based graph signal processing for distribution grids"};
  app.set_version_flag("--version", std::string(GRIDGSP_VERSION) + " (" + GRIDGSP_GIT_REVISION + ")");
  app.require_subcommand(1);

  std::string config_path;
  std::string case_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> settings;
  std::string manifest_path;

  for (const auto& [name, help] : subcommands()) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--case", case_path, "grid case file (overrides the config)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed (required for stochastic subcommands)");
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--set", settings, "override a config value, e.g. forecast.epochs=50");
  }
  CLI::App* rep = app.add_subcommand("replay", "re-run a manifest and compare artifact hashes");
  rep->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out_dir, "output directory for the re-run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (rep->parsed()) return replay(manifest_path, out_dir);
    Invocation inv;
    inv.subcommand = app.get_subcommands().front()->get_name();
    inv.config = default_config();
    if (!config_path.empty()) {
      json user;
      try {
        user = json::parse(io::read_file(config_path));
      } catch (const json::parse_error& e) {
        throw ParseError("config: " + std::string(e.what()));
      }
      // Paths inside a config file are relative to that file.
      const fs::path base = fs::path(config_path).parent_path();
      auto rebase = [&base](json& node) {
        if (node.is_string() && !node.get<std::string>().empty() && fs::path(node.get<std::string>()).is_relative()) {
          node = (base / node.get<std::string>()).string();
        }
      };
      if (user.is_object() && user.contains("case")) rebase(user["case"]);
      for (const auto& [section, key] : {std::pair{"forecast", "model"}, std::pair{"drl", "policy"}}) {
        if (user.is_object() && user.contains(section) && user[section].is_object() && user[section].contains(key)) {
          rebase(user[section][key]);
        }
      }
      overlay(inv.config, user, "");
    }
    if (!case_path.empty()) inv.config["case"] = case_path;
    for (const std::string& a : settings) apply_setting(inv.config, a);
    inv.config["case"] = absolute_path(field<std::string>(inv.config, "", "case")).string();
    for (const auto& [section, key] : {std::pair{"forecast", "model"}, std::pair{"drl", "policy"}}) {
      const std::string p = field<std::string>(inv.config, section, key);
      if (!p.empty()) inv.config[section][key] = absolute_path(p).string();
    }
    inv.seed = seed;
    inv.out = out_dir;
    execute(inv);
    return 0;
  } catch (const ValidationError& e) {
    report_error("validation", e.what());
    return 2;
  } catch (const ParseError& e) {
    report_error("parse", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
}
