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
#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridgsp/autodiff.hpp"
#include "gridgsp/errors.hpp"
#include "gridgsp/forecasting.hpp"
#include "gridgsp/gso.hpp"
#include "gridgsp/nn.hpp"
#include "gridgsp/power_flow.hpp"
#include "gridgsp/sampling.hpp"

namespace gridgsp {

inline double reactive_limit(const InverterSpec& inv) {
  if (!(inv.s_rating >= 0.0) || !(inv.p_actual >= 0.0)) {
    throw ValidationError("reactive_limit: rating and active output must be nonnegative");
  }
  if (inv.p_actual > inv.s_rating) {
    throw ValidationError("reactive_limit: active output " + io::format_double(inv.p_actual) + " exceeds rating " +
                          io::format_double(inv.s_rating));
  }
  return std::sqrt(inv.s_rating * inv.s_rating - inv.p_actual * inv.p_actual);
}

// Level l of an L-level grid on [-1, 1]: -1 + 2 l / (L - 1); spacing 0.2 for L = 11.
inline double action_value(int level, int levels = 11) {
  if (level < 0 || level >= levels) throw ValidationError("action level out of range");
  return -1.0 + 2.0 * level / (levels - 1);
}

struct VoltVarConfig {
  LoadProcess load{0.9, 0.02, 0.3, 24, 0.95};
  double pv_peak = 0.9;     // fraction of the rating at solar noon
  double pv_noise = 0.05;   // relative, per step
  int episode_length = 24;
  int window_t = 10;
  double v_ref = 1.0;
  double divergence_penalty = -10.0;
  double noise_sigma = 1e-3;
  double mu1 = 1e-6;
  int levels = 11;
  std::vector<Index> observed;  // empty: every node

  void validate() const {
    load.validate();
    if (episode_length < 1 || window_t < 1) throw ValidationError("voltvar: episode length and T must be positive");
    if (!(pv_peak >= 0.0 && pv_peak <= 1.0)) throw ValidationError("voltvar: pv_peak must be in [0, 1]");
    if (!(pv_noise >= 0.0) || !(noise_sigma >= 0.0) || !(mu1 >= 0.0)) {
      throw ValidationError("voltvar: noise levels and mu1 must be nonnegative");
    }
    if (levels < 2) throw ValidationError("voltvar: need at least two action levels");
  }
};

struct StepResult {
  double reward = 0.0;
  double deviation = 0.0;  // mean ||v| - v_ref| over inverter nodes
  bool done = false;
  bool diverged = false;
};

// Daily volt-var episode. Observations are windows of T recovered states
// restricted to the observed nodes, oldest first, each a d x 1 matrix.
class VoltVarEnv {
 public:
  VoltVarEnv(GridCase grid, VoltVarConfig cfg)
      : grid_(std::move(grid)), cfg_(std::move(cfg)), y_(assemble_admittance(grid_)), solver_(grid_, y_) {
    cfg_.validate();
    if (grid_.inverters().empty()) throw ValidationError("voltvar: case has no inverters");
    for (const InverterSpec& inv : grid_.inverters()) inverter_nodes_.push_back(grid_.node_position(inv.node));
    if (cfg_.observed.empty()) {
      for (Index k = 0; k < grid_.node_count(); ++k) cfg_.observed.push_back(k);
    }
    const RealGso gso = build_real_gso(grid_);
    model_ = build_measurement_model(y_, cfg_.observed);
    recovery_.emplace(model_, phase_aligned_regularizer(gso), cfg_.mu1);
    shift_ = reduce_gso(gso, model_.observed).s_full;
    positions_ = signal_positions(model_.observed, grid_.node_count());
    slack_ = nominal_slack_voltage(grid_);
    p_nom_ = grid_.nominal_load().real();
  }

  const GridCase& grid() const { return grid_; }
  const VoltVarConfig& config() const { return cfg_; }
  // Kron-reduced GSO on the observed nodes (the full GSO when every node is observed).
  const Eigen::MatrixXd& shift() const { return shift_; }
  Index observation_dim() const { return shift_.rows(); }
  int inverter_count() const { return static_cast<int>(inverter_nodes_.size()); }
  const std::vector<Index>& observed() const { return model_.observed; }
  const std::vector<Eigen::MatrixXd>& window() const { return window_; }
  const Eigen::VectorXcd& voltage() const { return v_; }
  // Complex injections (loads, PV and reactive support) of the last power flow.
  const Eigen::VectorXcd& last_injection() const { return injection_; }
  int hour() const { return hour_; }
  double reactive_limit_at(int inverter) const { return q_bar_[static_cast<std::size_t>(inverter)]; }

  // Starts a new day: resamples the exogenous series and fills the window
  // with the T hours before midnight under zero reactive support.
  const std::vector<Eigen::MatrixXd>& reset(std::uint64_t seed) {
    rng_.seed(seed);
    std::normal_distribution<double> gauss;
    const int total = cfg_.window_t + cfg_.episode_length;
    const double stationary = cfg_.load.sigma / std::sqrt(1.0 - cfg_.load.rho * cfg_.load.rho);
    Eigen::VectorXd e(grid_.node_count());
    for (Index k = 0; k < e.size(); ++k) e(k) = stationary * gauss(rng_);
    const double tan_phi = std::tan(std::acos(cfg_.load.power_factor));
    loads_.clear();
    pv_.clear();
    for (int step = 0; step < total; ++step) {
      const int h = step - cfg_.window_t;
      if (step > 0) {
        for (Index k = 0; k < e.size(); ++k) e(k) = cfg_.load.rho * e(k) + cfg_.load.sigma * gauss(rng_);
      }
      const double profile =
          cfg_.load.profile_amplitude * std::sin(2.0 * std::numbers::pi * h / cfg_.load.period);
      Eigen::VectorXcd inj(grid_.node_count());
      for (Index k = 0; k < inj.size(); ++k) {
        const double p = p_nom_(k) * (1.0 + profile + e(k));
        inj(k) = -Complex(p, p * tan_phi);
      }
      loads_.push_back(inj);
      const double sun = std::max(0.0, std::sin(std::numbers::pi * (((h % 24) + 24) % 24 - 6) / 12.0));
      std::vector<double> pv;
      for (const InverterSpec& inv : grid_.inverters()) {
        const double p = inv.s_rating * cfg_.pv_peak * sun * (1.0 + cfg_.pv_noise * gauss(rng_));
        pv.push_back(std::clamp(p, 0.0, inv.s_rating));
      }
      pv_.push_back(pv);
    }
    window_.clear();
    for (int step = 0; step < cfg_.window_t; ++step) {
      cursor_ = step;
      const std::vector<int> zero(inverter_nodes_.size(), (cfg_.levels - 1) / 2);
      if (!apply(zero)) throw ConvergenceError("voltvar: power flow diverged during warm-up", 0);
      window_.push_back(observe());
    }
    cursor_ = cfg_.window_t;
    hour_ = 0;
    return window_;
  }

  // One hour: q = a o q_bar at each inverter, power flow, reward.
  StepResult step(const std::vector<int>& levels) {
    if (static_cast<int>(levels.size()) != inverter_count()) {
      throw DimensionError("voltvar: expected " + std::to_string(inverter_count()) + " actions");
    }
    if (window_.empty() || hour_ >= cfg_.episode_length) throw Error("voltvar: step called outside an episode");
    StepResult out;
    if (!apply(levels)) {
      out.reward = cfg_.divergence_penalty;
      out.deviation = std::numeric_limits<double>::quiet_NaN();
      out.done = true;
      out.diverged = true;
      hour_ = cfg_.episode_length;
      return out;
    }
    double dev = 0.0;
    for (Index k : inverter_nodes_) dev += std::abs(std::abs(v_(k)) - cfg_.v_ref);
    out.reward = -dev;
    out.deviation = dev / static_cast<double>(inverter_nodes_.size());
    window_.erase(window_.begin());
    window_.push_back(observe());
    ++hour_;
    ++cursor_;
    out.done = hour_ >= cfg_.episode_length;
    return out;
  }

  int zero_level() const { return (cfg_.levels - 1) / 2; }

 private:
  bool apply(const std::vector<int>& levels) {
    const auto t = static_cast<std::size_t>(cursor_);
    Eigen::VectorXcd inj = loads_[t];
    q_bar_.clear();
    for (std::size_t i = 0; i < inverter_nodes_.size(); ++i) {
      InverterSpec spec = grid_.inverters()[i];
      spec.p_actual = pv_[t][i];
      const double q_bar = reactive_limit(spec);
      const double q = action_value(levels[i], cfg_.levels) * q_bar;
      if (std::abs(q) > q_bar * (1.0 + 1e-12)) throw Error("voltvar: reactive injection exceeds inverter limit");
      q_bar_.push_back(q_bar);
      inj(inverter_nodes_[i]) += Complex(spec.p_actual, q);
    }
    injection_ = inj;
    try {
      v_ = solver_.solve(inj, slack_).v;
    } catch (const ConvergenceError&) {
      return false;
    }
    return true;
  }

  Eigen::MatrixXd observe() {
    const MeasurementSample z = measure(model_, v_, cfg_.noise_sigma, rng_);
    const Eigen::VectorXd x = state_signal(grid_.nodes(), recovery_->recover(z).v);
    return x(positions_);
  }

  GridCase grid_;
  VoltVarConfig cfg_;
  AdmittanceMatrix y_;
  PowerFlowSolver solver_;
  MeasurementModel model_;
  std::optional<StateRecovery> recovery_;
  Eigen::MatrixXd shift_;
  std::vector<Index> positions_;
  std::vector<Index> inverter_nodes_;
  Eigen::VectorXcd slack_;
  Eigen::VectorXd p_nom_;
  std::mt19937_64 rng_;
  std::vector<Eigen::VectorXcd> loads_;
  std::vector<std::vector<double>> pv_;
  std::vector<Eigen::MatrixXd> window_;
  std::vector<double> q_bar_;
  Eigen::VectorXcd v_;
  Eigen::VectorXcd injection_;
  int cursor_ = 0;
  int hour_ = 0;
};

inline NetConfig policy_config(const VoltVarEnv& env, Arch arch) {
  NetConfig c;
  c.arch = arch;
  c.signal_dim = env.observation_dim();
  c.window_t = env.config().window_t;
  c.head = HeadKind::policy;
  c.action_groups = env.inverter_count();
  c.action_levels = env.config().levels;
  return c;
}

struct PolicyAction {
  std::vector<int> levels;
  double log_prob = 0.0;  // joint: sum over inverters
  double value = 0.0;
};

// Samples one level per inverter (or takes the per-inverter argmax when greedy).
inline PolicyAction policy_act(const GraphNet& net, const std::vector<Eigen::MatrixXd>& window, std::mt19937_64& rng,
                               bool greedy = false) {
  const NetConfig& c = net.config();
  if (c.head != HeadKind::policy) throw Error("policy_act: model has no policy head");
  const PolicyOutput out = net.policy(constant_frames(window));
  PolicyAction a;
  a.value = out.value->scalar();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int g = 0; g < c.action_groups; ++g) {
    const Eigen::VectorXd lp = out.log_probs->value.col(0).segment(g * c.action_levels, c.action_levels);
    int pick = 0;
    if (greedy) {
      lp.maxCoeff(&pick);
    } else {
      const double r = u(rng);
      double acc = 0.0;
      pick = c.action_levels - 1;
      for (int l = 0; l < c.action_levels; ++l) {
        acc += std::exp(lp(l));
        if (r < acc) {
          pick = l;
          break;
        }
      }
    }
    a.levels.push_back(pick);
    a.log_prob += lp(pick);
  }
  return a;
}

struct PpoConfig {
  double lr = 0.0007;
  double gamma = 0.99;
  double clip = 0.1;
  double entropy_weight = 0.01;
  double value_weight = 1.0;
  int episodes_per_update = 4;
  int rollout_length = 1;  // steps per return segment; 0: whole episode (Monte Carlo)
  int epochs_per_update = 4;
  int minibatch_size = 24;  // 0: whole rollout
  bool normalize_advantages = true;
  bool normalize_returns = true;  // value head predicts standardized returns
  double max_grad_norm = 0.5;     // 0: no clipping
  bool anneal_lr = true;          // linear decay from lr to 0 over the run
  bool separate_critic = true;    // value from a second network instead of the policy's value head
  Arch critic_arch = Arch::gcn;   // architecture of the separate critic

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("ppo: gamma must be in (0, 1)");
    if (!(clip > 0.0)) throw ValidationError("ppo: clip must be positive");
    if (!(lr >= 0.0) || !(entropy_weight >= 0.0) || !(value_weight >= 0.0)) {
      throw ValidationError("ppo: lr and loss weights must be nonnegative");
    }
    if (episodes_per_update < 1 || epochs_per_update < 1 || minibatch_size < 0 || rollout_length < 0) {
      throw ValidationError("ppo: rollout and minibatch counts must be positive");
    }
  }
};

struct EpisodeRecord {
  int episode = 0;
  double total_reward = 0.0;
  double mean_deviation = 0.0;
  bool diverged = false;
};

struct PpoResult {
  std::vector<EpisodeRecord> episodes;
  std::vector<double> losses;
};

// Per-entry mean and spread of observations under uniformly random actions.
// Spreads are floored at ten times the measurement noise by default, so
// entries that only carry recovery noise (the slack bus) stay near zero.
inline InputNormalization fit_policy_normalization(VoltVarEnv& env, int episodes, std::uint64_t seed,
                                                   std::optional<double> floor = std::nullopt) {
  const double min_scale = floor.value_or(std::max(10.0 * env.config().noise_sigma, 1e-6));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, env.config().levels - 1);
  std::vector<Eigen::VectorXd> obs;
  for (int e = 0; e < episodes; ++e) {
    env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    for (const auto& f : env.window()) obs.push_back(f.col(0));
    for (;;) {
      std::vector<int> a(static_cast<std::size_t>(env.inverter_count()));
      for (int& l : a) l = pick(rng);
      const StepResult r = env.step(a);
      if (r.diverged) break;
      obs.push_back(env.window().back().col(0));
      if (r.done) break;
    }
  }
  Eigen::MatrixXd all(env.observation_dim(), static_cast<Index>(obs.size()));
  for (std::size_t k = 0; k < obs.size(); ++k) all.col(static_cast<Index>(k)) = obs[k];
  InputNormalization in;
  in.center = all.rowwise().mean();
  in.scale = ((all.colwise() - in.center).array().square().rowwise().mean().sqrt()).max(min_scale).matrix();
  return in;
}

// Rescales all gradients so their joint Euclidean norm is at most `max_norm`.
inline void clip_gradients(const std::vector<ad::Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->grad.size()) sq += p->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    for (const auto& p : params) {
      if (p->grad.size()) p->grad *= max_norm / norm;
    }
  }
}

// Clipped-surrogate PPO; advantages are discounted returns minus the value
// baseline recorded at rollout time.
inline PpoResult ppo_train(VoltVarEnv& env, GraphNet& net, const PpoConfig& cfg, int episodes, std::uint64_t seed) {
  cfg.validate();
  if (episodes < 1) throw ValidationError("ppo: episodes must be positive");
  const NetConfig& nc = net.config();
  if (nc.head != HeadKind::policy || nc.action_groups != env.inverter_count() ||
      nc.signal_dim != env.observation_dim() || nc.window_t != env.config().window_t) {
    throw DimensionError("ppo: network does not match the environment");
  }
  std::mt19937_64 rng(derive_seed(seed, 0));
  ad::Adam adam(net.parameters(), ad::AdamConfig{cfg.lr});
  std::optional<GraphNet> critic;
  std::optional<ad::Adam> critic_adam;
  if (cfg.separate_critic) {
    NetConfig cc = nc;
    cc.arch = cfg.critic_arch;
    critic.emplace(cc, net.shift(), derive_seed(seed, 2));
    critic->input_normalization() = net.input_normalization();
    critic_adam.emplace(critic->parameters(), ad::AdamConfig{cfg.lr});
  }
  // Running mean/variance of all returns seen so far (Welford).
  double ret_count = 0.0;
  double ret_mean = 0.0;
  double ret_m2 = 0.0;
  auto ret_std = [&] { return ret_count > 1.0 ? std::sqrt(ret_m2 / ret_count) + 1e-8 : 1.0; };
  PpoResult result;
  const int groups = nc.action_groups;
  const int levels = nc.action_levels;

  for (int done_episodes = 0; done_episodes < episodes;) {
    std::vector<std::vector<Eigen::MatrixXd>> windows;
    std::vector<std::vector<int>> actions;
    std::vector<double> old_logp;
    std::vector<double> old_value;
    std::vector<double> rewards;
    std::vector<std::size_t> episode_start;
    const int batch = std::min(cfg.episodes_per_update, episodes - done_episodes);
    for (int e = 0; e < batch; ++e, ++done_episodes) {
      env.reset(derive_seed(seed, 1000 + static_cast<std::uint64_t>(done_episodes)));
      episode_start.push_back(rewards.size());
      EpisodeRecord rec;
      rec.episode = done_episodes;
      double dev = 0.0;
      int steps = 0;
      for (;;) {
        const PolicyAction a = policy_act(net, env.window(), rng);
        windows.push_back(env.window());
        const StepResult r = env.step(a.levels);
        actions.push_back(a.levels);
        old_logp.push_back(a.log_prob);
        old_value.push_back(critic ? critic->policy(constant_frames(windows.back())).value->scalar() : a.value);
        rewards.push_back(r.reward);
        rec.total_reward += r.reward;
        if (r.diverged) {
          rec.diverged = true;
        } else {
          dev += r.deviation;
          ++steps;
        }
        if (r.done) break;
      }
      rec.mean_deviation = steps > 0 ? dev / steps : std::numeric_limits<double>::quiet_NaN();
      result.episodes.push_back(rec);
    }
    episode_start.push_back(rewards.size());

    // Value estimates in return units, under the statistics used at rollout time.
    if (cfg.normalize_returns) {
      const double mean_used = ret_mean;
      const double std_used = ret_std();
      for (double& v : old_value) v = mean_used + std_used * v;
    }
    // Discounted returns over segments of `rollout_length` steps, bootstrapped
    // from the value estimate where a segment ends before the episode does.
    std::vector<double> returns(rewards.size());
    for (std::size_t e = 0; e + 1 < episode_start.size(); ++e) {
      const std::size_t first = episode_start[e];
      const std::size_t last = episode_start[e + 1];
      const std::size_t seg = cfg.rollout_length > 0 ? static_cast<std::size_t>(cfg.rollout_length) : last - first;
      for (std::size_t s0 = first; s0 < last; s0 += seg) {
        const std::size_t s1 = std::min(s0 + seg, last);
        double acc = s1 < last ? old_value[s1] : 0.0;
        for (std::size_t k = s1; k-- > s0;) {
          acc = rewards[k] + cfg.gamma * acc;
          returns[k] = acc;
        }
      }
    }
    if (cfg.normalize_returns) {
      for (double g : returns) {
        ret_count += 1.0;
        const double d = g - ret_mean;
        ret_mean += d / ret_count;
        ret_m2 += d * (g - ret_mean);
      }
    }
    const double target_mean = cfg.normalize_returns ? ret_mean : 0.0;
    const double target_std = cfg.normalize_returns ? ret_std() : 1.0;
    const auto b = static_cast<Index>(returns.size());
    std::vector<Eigen::MatrixXd> frames(static_cast<std::size_t>(nc.window_t), Eigen::MatrixXd(nc.signal_dim, b));
    Eigen::MatrixXi choice(groups, b);
    Eigen::RowVectorXd adv(b), ret(b), logp0(b);
    for (Index c = 0; c < b; ++c) {
      const auto k = static_cast<std::size_t>(c);
      for (std::size_t tau = 0; tau < frames.size(); ++tau) frames[tau].col(c) = windows[k][tau].col(0);
      for (int gi = 0; gi < groups; ++gi) choice(gi, c) = actions[k][static_cast<std::size_t>(gi)];
      ret(c) = (returns[k] - target_mean) / target_std;
      adv(c) = returns[k] - old_value[k];
      logp0(c) = old_logp[k];
    }
    if (cfg.normalize_advantages && b > 1) {
      const double mean = adv.mean();
      const double sd = std::sqrt((adv.array() - mean).square().mean());
      adv = (adv.array() - mean) / (sd + 1e-8);
    }
    const Index mb = cfg.minibatch_size > 0 ? std::min<Index>(cfg.minibatch_size, b) : b;
    std::vector<Index> order(static_cast<std::size_t>(b));
    for (Index c = 0; c < b; ++c) order[static_cast<std::size_t>(c)] = c;
    for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
      if (mb < b) std::shuffle(order.begin(), order.end(), rng);
      for (Index start = 0; start < b; start += mb) {
        const Index len = std::min(mb, b - start);
        const std::vector<Index> idx(order.begin() + start, order.begin() + start + len);
        std::vector<Eigen::MatrixXd> part;
        for (const auto& f : frames) part.push_back(f(Eigen::all, idx));
        const Eigen::MatrixXi part_choice = choice(Eigen::all, idx);
        const double inv_b = 1.0 / static_cast<double>(len);
        adam.zero_grad();
        if (critic_adam) critic_adam->zero_grad();
        const std::vector<ad::Var> in = constant_frames(part);
        const PolicyOutput out = net.policy(in);
        const ad::Var value = critic ? critic->policy(in).value : out.value;
        const ad::Var logp = ad::sum_rows(ad::gather_groups(out.log_probs, part_choice, levels));
        const ad::Var ratio = ad::exp(ad::sub(logp, ad::constant(logp0(idx))));
        const ad::Var a = ad::constant(adv(idx));
        const ad::Var surrogate =
            ad::minimum(ad::mul(ratio, a), ad::mul(ad::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), a));
        const ad::Var policy_loss = ad::scale(ad::sum(surrogate), -inv_b);
        const ad::Var value_loss =
            ad::scale(ad::sum(ad::square(ad::sub(value, ad::constant(ret(idx))))), inv_b);
        // sum p log p = -entropy
        const ad::Var neg_entropy = ad::scale(ad::sum(ad::mul(ad::exp(out.log_probs), out.log_probs)), inv_b);
        const ad::Var loss = ad::add(ad::add(policy_loss, ad::scale(value_loss, cfg.value_weight)),
                                     ad::scale(neg_entropy, cfg.entropy_weight));
        if (!std::isfinite(loss->scalar())) {
          throw NumericalError("ppo: non-finite loss after " + std::to_string(done_episodes) + " episodes (policy " +
                               io::format_double(policy_loss->scalar()) + ", value " +
                               io::format_double(value_loss->scalar()) + ")");
        }
        ad::backward(loss);
        result.losses.push_back(loss->scalar());
        const double lr_now =
            cfg.anneal_lr ? cfg.lr * (1.0 - static_cast<double>(done_episodes - batch) / episodes) : cfg.lr;
        if (cfg.max_grad_norm > 0.0) clip_gradients(net.parameters(), cfg.max_grad_norm);
        adam.config().lr = lr_now;
        adam.step();
        if (critic_adam) {
          if (cfg.max_grad_norm > 0.0) clip_gradients(critic->parameters(), cfg.max_grad_norm);
          critic_adam->config().lr = lr_now;
          critic_adam->step();
        }
      }
    }
  }
  return result;
}

struct PolicyEvaluation {
  double mean_deviation = 0.0;  // over evaluated steps and inverter nodes
  double mean_reward = 0.0;     // per episode
  int diverged = 0;
};

// Runs `episodes` fixed-seed days with `choose` picking the action levels.
template <class Chooser>
PolicyEvaluation evaluate_controller(VoltVarEnv& env, int episodes, std::uint64_t seed, Chooser&& choose) {
  PolicyEvaluation out;
  long steps = 0;
  for (int e = 0; e < episodes; ++e) {
    env.reset(derive_seed(seed, 5000 + static_cast<std::uint64_t>(e)));
    for (;;) {
      const StepResult r = env.step(choose(env));
      out.mean_reward += r.reward;
      if (r.diverged) {
        ++out.diverged;
        break;
      }
      out.mean_deviation += r.deviation;
      ++steps;
      if (r.done) break;
    }
  }
  out.mean_deviation = steps ? out.mean_deviation / static_cast<double>(steps) : 0.0;
  out.mean_reward /= episodes;
  return out;
}

inline PolicyEvaluation evaluate_policy(VoltVarEnv& env, const GraphNet& net, int episodes, std::uint64_t seed) {
  std::mt19937_64 unused(0);
  return evaluate_controller(env, episodes, seed,
                             [&](const VoltVarEnv& e) { return policy_act(net, e.window(), unused, true).levels; });
}

inline PolicyEvaluation evaluate_zero_action(VoltVarEnv& env, int episodes, std::uint64_t seed) {
  return evaluate_controller(env, episodes, seed, [](const VoltVarEnv& e) {
    return std::vector<int>(static_cast<std::size_t>(e.inverter_count()), e.zero_level());
  });
}

struct VoltVarExperiment {
  Arch arch = Arch::gcn;
  VoltVarConfig env{};
  PpoConfig ppo{};
  int episodes = 300;
  int eval_episodes = 10;
  int normalization_episodes = 4;
  bool partial = false;  // observe only greedily placed PMU nodes
  int pmus = 6;
  int k_freqs = 6;
  NetConfig net{};  // K, channels and hidden widths; the rest follows the environment
};

struct VoltVarRun {
  std::vector<Index> observed;
  PpoResult training;
  PolicyEvaluation policy;
  PolicyEvaluation zero_action;
  std::optional<GraphNet> net;
  double seconds = 0.0;
};

// Seed streams: 0 network init, 1 normalization rollouts, 2 training, 3 evaluation days.
inline VoltVarRun run_voltvar_experiment(const GridCase& grid, const VoltVarExperiment& exp, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  if (exp.episodes < 1 || exp.eval_episodes < 1 || exp.normalization_episodes < 1) {
    throw ValidationError("voltvar: episode counts must be positive");
  }
  exp.ppo.validate();
  VoltVarConfig vc = exp.env;
  if (exp.partial) vc.observed = default_observed_nodes(build_real_gso(grid), exp.pmus, exp.k_freqs);
  VoltVarEnv env(grid, vc);
  VoltVarRun run;
  run.observed = env.observed();

  const NetConfig shape = policy_config(env, exp.arch);
  NetConfig cfg = exp.net;
  cfg.arch = shape.arch;
  cfg.signal_dim = shape.signal_dim;
  cfg.window_t = shape.window_t;
  cfg.head = shape.head;
  cfg.action_groups = shape.action_groups;
  cfg.action_levels = shape.action_levels;
  GraphNet net(cfg, env.shift(), derive_seed(seed, 0));
  net.input_normalization() = fit_policy_normalization(env, exp.normalization_episodes, derive_seed(seed, 1));
  run.training = ppo_train(env, net, exp.ppo, exp.episodes, derive_seed(seed, 2));
  run.policy = evaluate_policy(env, net, exp.eval_episodes, derive_seed(seed, 3));
  run.zero_action = evaluate_zero_action(env, exp.eval_episodes, derive_seed(seed, 3));
  run.net.emplace(std::move(net));
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace gridgsp
