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

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "gridgsp/autodiff.hpp"
#include "gridgsp/errors.hpp"
#include "gridgsp/gsp.hpp"
#include "gridgsp/io.hpp"

namespace gridgsp {

enum class Arch { gcn, grn };
enum class HeadKind { regression, policy };

inline std::string arch_name(Arch a) { return a == Arch::gcn ? "gcn" : "grn"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "gcn") return Arch::gcn;
  if (s == "grn") return Arch::grn;
  throw ValidationError("unknown architecture '" + s + "' (expected gcn or grn)");
}

struct NetConfig {
  Arch arch = Arch::gcn;
  Index signal_dim = 0;        // length of one graph signal
  int order_k = 2;             // graph filter order K
  int window_t = 10;           // frames per window T
  int channels = 10;           // feature channels of the graph layer
  std::vector<int> hidden{512};
  int state_dim = 0;           // GRN recurrent state; 0 means channels * signal_dim
  HeadKind head = HeadKind::regression;
  Index out_dim = 0;           // regression outputs; 0 means signal_dim
  int action_groups = 0;       // policy: one categorical per group
  int action_levels = 11;

  Index feature_dim() const {
    if (arch == Arch::grn) return state_dim > 0 ? state_dim : channels * signal_dim;
    return channels * signal_dim;
  }
  Index regression_dim() const { return out_dim > 0 ? out_dim : signal_dim; }

  void validate() const {
    if (signal_dim <= 0) throw ValidationError("network: signal_dim must be positive");
    if (order_k < 0) throw ValidationError("network: K must be nonnegative");
    if (window_t < 1) throw ValidationError("network: T must be at least 1");
    if (channels < 1) throw ValidationError("network: channels must be at least 1");
    if (hidden.empty()) throw ValidationError("network: at least one dense hidden layer is required (L >= 2)");
    for (int h : hidden) {
      if (h < 1) throw ValidationError("network: hidden widths must be positive");
    }
    if (head == HeadKind::policy && (action_groups < 1 || action_levels < 2)) {
      throw ValidationError("network: policy head needs action groups and at least two levels");
    }
  }
};

// x_in = (x - center) / scale elementwise.
struct InputNormalization {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
};

// physical = center + half_range o y for raw outputs y in (-1, 1).
struct OutputScaling {
  Eigen::VectorXd center;
  Eigen::VectorXd half_range;
};

// Signal [phi; |v|] over n_nodes: center (0, 1), no rescaling.
inline InputNormalization default_input_normalization(Index n_nodes) {
  InputNormalization in{Eigen::VectorXd::Zero(2 * n_nodes), Eigen::VectorXd::Ones(2 * n_nodes)};
  in.center.tail(n_nodes).setOnes();
  return in;
}

// phi in [-0.5, 0.5] rad, |v| in [0.5, 1.5] p.u.
inline OutputScaling default_output_scaling(Index n_nodes) {
  OutputScaling out{Eigen::VectorXd::Zero(2 * n_nodes), Eigen::VectorXd::Constant(2 * n_nodes, 0.5)};
  out.center.tail(n_nodes).setOnes();
  return out;
}

// S' = 2 S / lambda_max - I with lambda_max the largest |eigenvalue|.
inline Eigen::MatrixXd rescaled_operator(const Eigen::MatrixXd& s) {
  const double lmax = gft(s, 1e-8).lambda_max();
  if (lmax <= 1e-12) return s;
  return 2.0 * s / lmax - Eigen::MatrixXd::Identity(s.rows(), s.cols());
}

struct PolicyOutput {
  ad::Var log_probs;  // (groups * levels) x B, per-group log-softmax
  ad::Var value;      // 1 x B
};

// GCN or GRN trunk with a regression (tanh) or policy (categorical + value) head.
class GraphNet {
 public:
  GraphNet() = default;

  GraphNet(NetConfig cfg, const Eigen::MatrixXd& s, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (s.rows() != cfg_.signal_dim || s.cols() != cfg_.signal_dim) {
      throw DimensionError("network: shift operator does not match signal_dim");
    }
    s_ = s;
    s_prime_ = rescaled_operator(s);
    fingerprint_ = io::matrix_fingerprint(s);
    input_.center = Eigen::VectorXd::Zero(cfg_.signal_dim);
    input_.scale = Eigen::VectorXd::Ones(cfg_.signal_dim);
    if (cfg_.head == HeadKind::regression) {
      output_.center = Eigen::VectorXd::Zero(cfg_.regression_dim());
      output_.half_range = Eigen::VectorXd::Ones(cfg_.regression_dim());
    }
    initialize(seed);
  }

  const NetConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& shift() const { return s_; }
  const Eigen::MatrixXd& rescaled_shift() const { return s_prime_; }
  const std::string& gso_fingerprint() const { return fingerprint_; }

  InputNormalization& input_normalization() { return input_; }
  const InputNormalization& input_normalization() const { return input_; }
  OutputScaling& output_scaling() { return output_; }
  const OutputScaling& output_scaling() const { return output_; }

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out;
    for (const auto& [name, v] : params_) out.push_back(v);
    return out;
  }
  const std::vector<std::pair<std::string, ad::Var>>& named_parameters() const { return params_; }
  ad::Var& param(const std::string& name) {
    for (auto& [n, v] : params_) {
      if (n == name) return v;
    }
    throw Error("network: no parameter named " + name);
  }
  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& [n, v] : params_) c += static_cast<std::size_t>(v->value.size());
    return c;
  }

  // Output of the graph (GCN) or recurrent (GRN) layer. frames: T tensors
  // of shape signal_dim x B, oldest first.
  ad::Var graph_features(const std::vector<ad::Var>& frames) const {
    check_frames(frames);
    std::vector<ad::Var> x;
    const ad::Var inv_scale = ad::constant(input_.scale.cwiseInverse().replicate(1, frames.front()->cols()));
    const ad::Var neg_center = ad::constant(-input_.center);
    for (const ad::Var& f : frames) x.push_back(ad::mul(ad::add_col_broadcast(f, neg_center), inv_scale));
    return cfg_.arch == Arch::gcn ? gcn_layer(x) : grn_layer(x);
  }

  ad::Var features(const std::vector<ad::Var>& frames) const {
    ad::Var w = graph_features(frames);
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      w = ad::relu(dense(w, "dense." + std::to_string(l)));
    }
    return w;
  }

  // Raw tanh outputs in (-1, 1).
  ad::Var regression(const std::vector<ad::Var>& frames) const {
    if (cfg_.head != HeadKind::regression) throw Error("network: model has a policy head");
    return ad::tanh(dense(features(frames), "out"));
  }

  // Physical outputs through the stored affine map.
  ad::Var predict(const std::vector<ad::Var>& frames) const {
    const ad::Var y = regression(frames);
    const ad::Var half = ad::constant(output_.half_range.replicate(1, y->cols()));
    return ad::add_col_broadcast(ad::mul(y, half), ad::constant(output_.center));
  }

  PolicyOutput policy(const std::vector<ad::Var>& frames) const {
    if (cfg_.head != HeadKind::policy) throw Error("network: model has a regression head");
    const ad::Var w = features(frames);
    return {ad::log_softmax_groups(dense(w, "policy"), cfg_.action_levels), dense(w, "value")};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "gridgsp-model";
    j["version"] = 1;
    j["config"] = {{"arch", arch_name(cfg_.arch)},
                   {"signal_dim", cfg_.signal_dim},
                   {"K", cfg_.order_k},
                   {"T", cfg_.window_t},
                   {"channels", cfg_.channels},
                   {"hidden", cfg_.hidden},
                   {"state_dim", cfg_.state_dim},
                   {"head", cfg_.head == HeadKind::regression ? "regression" : "policy"},
                   {"out_dim", cfg_.out_dim},
                   {"action_groups", cfg_.action_groups},
                   {"action_levels", cfg_.action_levels}};
    j["gso_sha256"] = fingerprint_;
    j["shift"] = matrix_json(s_);
    j["input"] = {{"center", vec(input_.center)}, {"scale", vec(input_.scale)}};
    j["output"] = {{"center", vec(output_.center)}, {"half_range", vec(output_.half_range)}};
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [name, v] : params_) p[name] = matrix_json(v->value);
    j["params"] = p;
    return j;
  }

  // Rejects checkpoints trained against a different shift operator.
  static GraphNet from_json(const nlohmann::json& j, const Eigen::MatrixXd& expected_shift) {
    if (j.value("format", "") != "gridgsp-model" || j.value("version", 0) != 1) {
      throw ParseError("checkpoint: unsupported format or version");
    }
    const std::string expected = io::matrix_fingerprint(expected_shift);
    if (j.at("gso_sha256").get<std::string>() != expected) {
      throw ValidationError("checkpoint: GSO fingerprint mismatch (model was trained on a different operator)");
    }
    const auto& c = j.at("config");
    NetConfig cfg;
    cfg.arch = parse_arch(c.at("arch").get<std::string>());
    cfg.signal_dim = c.at("signal_dim").get<Index>();
    cfg.order_k = c.at("K").get<int>();
    cfg.window_t = c.at("T").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.hidden = c.at("hidden").get<std::vector<int>>();
    cfg.state_dim = c.at("state_dim").get<int>();
    cfg.head = c.at("head").get<std::string>() == "regression" ? HeadKind::regression : HeadKind::policy;
    cfg.out_dim = c.at("out_dim").get<Index>();
    cfg.action_groups = c.at("action_groups").get<int>();
    cfg.action_levels = c.at("action_levels").get<int>();
    GraphNet net(cfg, expected_shift, 0);
    net.input_.center = unvec(j.at("input").at("center"));
    net.input_.scale = unvec(j.at("input").at("scale"));
    net.output_.center = unvec(j.at("output").at("center"));
    net.output_.half_range = unvec(j.at("output").at("half_range"));
    for (auto& [name, v] : net.params_) {
      const Eigen::MatrixXd m = matrix_from_json(j.at("params").at(name));
      if (m.rows() != v->rows() || m.cols() != v->cols()) throw ParseError("checkpoint: shape mismatch for " + name);
      v->value = m;
    }
    return net;
  }

  static Eigen::MatrixXd stored_shift(const nlohmann::json& j) { return matrix_from_json(j.at("shift")); }

 private:
  void add_param(const std::string& name, Eigen::MatrixXd value) { params_.emplace_back(name, ad::parameter(std::move(value))); }

  void add_glorot(const std::string& name, Index rows, Index cols, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Eigen::MatrixXd m(rows, cols);
    for (Index c = 0; c < cols; ++c) {
      for (Index r = 0; r < rows; ++r) m(r, c) = u(rng);
    }
    add_param(name, std::move(m));
  }

  void add_dense(const std::string& name, Index out, Index in, std::mt19937_64& rng) {
    add_glorot(name + ".w", out, in, rng);
    add_param(name + ".b", Eigen::MatrixXd::Zero(out, 1));
  }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Index n = cfg_.signal_dim;
    const Index c = cfg_.channels;
    const int k_count = cfg_.order_k + 1;
    if (cfg_.arch == Arch::gcn) {
      const double h0 = 1.0 / (static_cast<double>(cfg_.window_t) * k_count);
      for (int k = 0; k < k_count; ++k) add_param("h." + std::to_string(k), Eigen::MatrixXd::Constant(c, cfg_.window_t, h0));
      for (int k = 0; k < k_count; ++k) add_glorot("theta." + std::to_string(k), c, c, rng);
      add_param("feature.b", Eigen::MatrixXd::Zero(c * n, 1));
    } else {
      add_param("h", Eigen::MatrixXd::Constant(c, k_count, 1.0 / k_count));
      add_glorot("theta_in", cfg_.feature_dim(), c * n, rng);
      add_glorot("theta_rec", cfg_.feature_dim(), cfg_.feature_dim(), rng);
      add_param("recurrent.b", Eigen::MatrixXd::Zero(cfg_.feature_dim(), 1));
    }
    Index in = cfg_.feature_dim();
    for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
      add_dense("dense." + std::to_string(l), cfg_.hidden[l], in, rng);
      in = cfg_.hidden[l];
    }
    if (cfg_.head == HeadKind::regression) {
      add_dense("out", cfg_.regression_dim(), in, rng);
    } else {
      add_dense("policy", static_cast<Index>(cfg_.action_groups) * cfg_.action_levels, in, rng);
      add_dense("value", 1, in, rng);
    }
  }

  const ad::Var& get(const std::string& name) const {
    for (const auto& [n, v] : params_) {
      if (n == name) return v;
    }
    throw Error("network: no parameter named " + name);
  }

  ad::Var dense(const ad::Var& x, const std::string& name) const {
    return ad::add_col_broadcast(ad::matmul(get(name + ".w"), x), get(name + ".b"));
  }

  void check_frames(const std::vector<ad::Var>& frames) const {
    if (static_cast<int>(frames.size()) != cfg_.window_t) {
      throw DimensionError("network: window has " + std::to_string(frames.size()) + " frames, model expects " +
                           std::to_string(cfg_.window_t));
    }
    for (const ad::Var& f : frames) {
      if (f->rows() != cfg_.signal_dim || f->cols() != frames.front()->cols()) {
        throw DimensionError("network: frame shape mismatch");
      }
    }
  }

  // w = ReLU(sum_k (Theta_k (x) I) S'^k (sum_tau h_k[:, tau] x_{t-tau}) + b)
  ad::Var gcn_layer(const std::vector<ad::Var>& x) const {
    const Index n = cfg_.signal_dim;
    std::vector<ad::Var> lagged(x.rbegin(), x.rend());  // lag 0 first
    const ad::Var stacked = ad::vstack(lagged);
    ad::Var acc;
    for (int k = 0; k <= cfg_.order_k; ++k) {
      ad::Var u = ad::block_mix(get("h." + std::to_string(k)), stacked, n);
      for (int j = 0; j < k; ++j) u = ad::block_shift(s_prime_, u);
      const ad::Var m = ad::block_mix(get("theta." + std::to_string(k)), u, n);
      acc = acc ? ad::add(acc, m) : m;
    }
    return ad::relu(ad::add_col_broadcast(acc, get("feature.b")));
  }

  // w_t = ReLU(Theta_in (h (x) I)[x_t; S' x_t; ...] + Theta_rec w_{t-1} + b), w_0 = 0.
  // Theta_in (h (x) I) is formed once per call, as ((h^T (x) I) Theta_in^T)^T.
  ad::Var grn_layer(const std::vector<ad::Var>& x) const {
    const Index n = cfg_.signal_dim;
    const ad::Var in_map = ad::transpose(ad::block_mix(ad::transpose(get("h")), ad::transpose(get("theta_in")), n));
    ad::Var w;
    for (const ad::Var& frame : x) {
      std::vector<ad::Var> powers{frame};
      for (int k = 1; k <= cfg_.order_k; ++k) powers.push_back(ad::block_shift(s_prime_, powers.back()));
      ad::Var pre = ad::matmul(in_map, ad::vstack(powers));
      if (w) pre = ad::add(pre, ad::matmul(get("theta_rec"), w));
      w = ad::relu(ad::add_col_broadcast(pre, get("recurrent.b")));
    }
    return w;
  }

  static std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }
  static Eigen::VectorXd unvec(const nlohmann::json& j) {
    const auto d = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Index>(d.size()));
  }
  static nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
  }
  static Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Index>(data.size()) != rows * cols) throw ParseError("checkpoint: matrix data length mismatch");
    return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
  }

  NetConfig cfg_;
  Eigen::MatrixXd s_;
  Eigen::MatrixXd s_prime_;
  std::string fingerprint_;
  InputNormalization input_;
  OutputScaling output_;
  std::vector<std::pair<std::string, ad::Var>> params_;
};

// Wraps a batch of windows as constant frame tensors.
inline std::vector<ad::Var> constant_frames(const std::vector<Eigen::MatrixXd>& frames) {
  std::vector<ad::Var> out;
  for (const auto& f : frames) out.push_back(ad::constant(f));
  return out;
}

inline std::vector<ad::Var> window_frames(const GraphSignalWindow& window) {
  std::vector<ad::Var> out;
  for (const auto& f : window.frames) out.push_back(ad::constant(Eigen::MatrixXd(f)));
  return out;
}

}  // namespace gridgsp
