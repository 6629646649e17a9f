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
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "json.hpp"

#include "gridgsp/errors.hpp"

namespace gridgsp {

using Index = Eigen::Index;
using Complex = std::complex<double>;

enum class Phase : std::uint8_t { a = 0, b = 1, c = 2 };

inline char phase_letter(Phase p) { return static_cast<char>('a' + static_cast<int>(p)); }

// Subset of {a, b, c}, iterated in a-b-c order.
class PhaseSet {
 public:
  constexpr PhaseSet() = default;
  constexpr explicit PhaseSet(std::uint8_t mask) : mask_(mask & 0x7u) {}

  static PhaseSet all() { return PhaseSet(0x7u); }

  static PhaseSet parse(const std::string& text) {
    std::uint8_t mask = 0;
    for (char ch : text) {
      if (ch < 'a' || ch > 'c') {
        throw ParseError("phase set '" + text + "': expected letters from {a,b,c}");
      }
      const auto bit = static_cast<std::uint8_t>(1u << (ch - 'a'));
      if (mask & bit) throw ParseError("phase set '" + text + "': repeated phase");
      mask |= bit;
    }
    return PhaseSet(mask);
  }

  bool contains(Phase p) const { return mask_ & (1u << static_cast<int>(p)); }
  bool empty() const { return mask_ == 0; }
  int size() const { return __builtin_popcount(mask_); }
  bool subset_of(PhaseSet other) const { return (mask_ & ~other.mask_) == 0; }
  std::uint8_t mask() const { return mask_; }

  std::vector<Phase> phases() const {
    std::vector<Phase> out;
    for (int k = 0; k < 3; ++k) {
      if (mask_ & (1u << k)) out.push_back(static_cast<Phase>(k));
    }
    return out;
  }

  // Position of `p` among the present phases, or -1.
  int position(Phase p) const {
    if (!contains(p)) return -1;
    return __builtin_popcount(mask_ & ((1u << static_cast<int>(p)) - 1u));
  }

  std::string str() const {
    std::string s;
    for (Phase p : phases()) s.push_back(phase_letter(p));
    return s;
  }

  friend bool operator==(PhaseSet l, PhaseSet r) { return l.mask_ == r.mask_; }

 private:
  std::uint8_t mask_ = 0;
};

struct NodeIndex {
  std::string bus;
  Phase phase = Phase::a;

  // "<bus>.<1|2|3>", the usual feeder labelling (phase a = 1).
  std::string label() const { return bus + "." + std::to_string(static_cast<int>(phase) + 1); }

  friend bool operator==(const NodeIndex&, const NodeIndex&) = default;
};

inline NodeIndex parse_node_label(const std::string& label) {
  const auto dot = label.rfind('.');
  if (dot == std::string::npos || dot + 2 != label.size()) {
    throw ParseError("node label '" + label + "': expected <bus>.<1|2|3>");
  }
  const char d = label[dot + 1];
  if (d < '1' || d > '3') throw ParseError("node label '" + label + "': phase digit must be 1..3");
  return NodeIndex{label.substr(0, dot), static_cast<Phase>(d - '1')};
}

enum class BusKind { slack, load };

struct Bus {
  std::string id;
  PhaseSet phases;
  BusKind kind = BusKind::load;
  // Nominal consumption per present phase, p.u. (positive = consumed).
  std::vector<Complex> load;
};

// Series blocks follow the pi-model: the current into the line at one end is
// (1/2 shunt + series_from) v_self + series_to v_other.
struct LineBranch {
  std::string from;
  std::string to;
  PhaseSet phases;
  Eigen::MatrixXcd series_from;
  Eigen::MatrixXcd series_to;
  Eigen::MatrixXcd shunt;
};

struct InverterSpec {
  NodeIndex node;
  double s_rating = 0.0;  // p.u.
  double p_actual = 0.0;  // p.u., time-varying
};

// Immutable, validated network description in per-unit. Node ordering is
// bus-major (file order) then phase-minor (a, b, c).
class GridCase {
 public:
  GridCase(std::string name, std::vector<Bus> buses, std::vector<LineBranch> lines,
           std::vector<InverterSpec> inverters, double base_kv, double base_mva)
      : name_(std::move(name)),
        buses_(std::move(buses)),
        lines_(std::move(lines)),
        inverters_(std::move(inverters)),
        base_kv_(base_kv),
        base_mva_(base_mva) {
    validate();
  }

  const std::string& name() const { return name_; }
  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<LineBranch>& lines() const { return lines_; }
  const std::vector<InverterSpec>& inverters() const { return inverters_; }
  double base_kv() const { return base_kv_; }
  double base_mva() const { return base_mva_; }

  const std::vector<NodeIndex>& nodes() const { return nodes_; }
  Index node_count() const { return static_cast<Index>(nodes_.size()); }
  std::size_t slack_bus() const { return slack_bus_; }

  std::size_t bus_position(const std::string& id) const {
    auto it = bus_lookup_.find(id);
    if (it == bus_lookup_.end()) throw ValidationError("unknown bus '" + id + "'");
    return it->second;
  }
  Index bus_offset(std::size_t bus) const { return bus_offsets_[bus]; }

  Index node_position(const NodeIndex& node) const {
    const auto bus = bus_position(node.bus);
    const int pos = buses_[bus].phases.position(node.phase);
    if (pos < 0) {
      throw ValidationError("node " + node.label() + ": phase not present on bus");
    }
    return bus_offsets_[bus] + pos;
  }

  bool is_slack_node(Index node) const {
    const Index first = bus_offsets_[slack_bus_];
    return node >= first && node < first + buses_[slack_bus_].phases.size();
  }

  // Nominal consumption per node (zero at slack and unloaded phases).
  Eigen::VectorXcd nominal_load() const {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(node_count());
    for (std::size_t b = 0; b < buses_.size(); ++b) {
      for (std::size_t k = 0; k < buses_[b].load.size(); ++k) {
        out(bus_offsets_[b] + static_cast<Index>(k)) = buses_[b].load[k];
      }
    }
    return out;
  }

 private:
  void validate();

  std::string name_;
  std::vector<Bus> buses_;
  std::vector<LineBranch> lines_;
  std::vector<InverterSpec> inverters_;
  double base_kv_;
  double base_mva_;

  std::vector<NodeIndex> nodes_;
  std::vector<Index> bus_offsets_;
  std::map<std::string, std::size_t> bus_lookup_;
  std::size_t slack_bus_ = 0;
};

namespace detail {

inline bool is_symmetric(const Eigen::MatrixXcd& m, double tol) {
  return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace detail

inline void GridCase::validate() {
  if (!(base_kv_ > 0.0) || !(base_mva_ > 0.0)) {
    throw ValidationError("base_kv and base_mva must be positive");
  }
  if (buses_.empty()) throw ValidationError("case has no buses");

  int slack_count = 0;
  for (std::size_t b = 0; b < buses_.size(); ++b) {
    const Bus& bus = buses_[b];
    if (!bus_lookup_.emplace(bus.id, b).second) {
      throw ValidationError("duplicated bus id '" + bus.id + "'");
    }
    if (bus.phases.empty()) throw ValidationError("bus '" + bus.id + "' has no phases");
    if (!bus.load.empty() && static_cast<int>(bus.load.size()) != bus.phases.size()) {
      throw ValidationError("bus '" + bus.id + "': load needs one entry per phase");
    }
    if (bus.kind == BusKind::slack) {
      ++slack_count;
      slack_bus_ = b;
    }
    bus_offsets_.push_back(static_cast<Index>(nodes_.size()));
    for (Phase p : bus.phases.phases()) nodes_.push_back(NodeIndex{bus.id, p});
  }
  if (slack_count != 1) {
    throw ValidationError("exactly one slack bus required, found " + std::to_string(slack_count));
  }

  constexpr double kSymTol = 1e-12;
  std::vector<std::vector<std::size_t>> adjacency(buses_.size());
  for (std::size_t l = 0; l < lines_.size(); ++l) {
    const LineBranch& line = lines_[l];
    const std::string tag = "line " + std::to_string(l) + " (" + line.from + "-" + line.to + ")";
    auto from = bus_lookup_.find(line.from);
    auto to = bus_lookup_.find(line.to);
    if (from == bus_lookup_.end() || to == bus_lookup_.end()) {
      throw ValidationError(tag + ": unknown endpoint bus");
    }
    if (from->second == to->second) throw ValidationError(tag + ": self loop");
    if (line.phases.empty()) throw ValidationError(tag + ": empty phase set");
    if (!line.phases.subset_of(buses_[from->second].phases) ||
        !line.phases.subset_of(buses_[to->second].phases)) {
      throw ValidationError(tag + ": phase set not contained in both endpoint buses");
    }
    const Index p = line.phases.size();
    for (const auto* block : {&line.series_from, &line.series_to, &line.shunt}) {
      if (block->rows() != p || block->cols() != p) {
        throw ValidationError(tag + ": block dimension does not match phase count");
      }
      if (!detail::is_symmetric(*block, kSymTol * std::max(1.0, block->cwiseAbs().maxCoeff()))) {
        throw ValidationError(tag + ": admittance block is not symmetric");
      }
    }
    const double scale = std::max(1.0, line.series_from.cwiseAbs().maxCoeff());
    if ((line.series_to + line.series_from).cwiseAbs().maxCoeff() > kSymTol * scale) {
      throw ValidationError(tag + ": series_to must equal -series_from");
    }
    adjacency[from->second].push_back(to->second);
    adjacency[to->second].push_back(from->second);
  }

  std::vector<bool> seen(buses_.size(), false);
  std::vector<std::size_t> stack{slack_bus_};
  seen[slack_bus_] = true;
  while (!stack.empty()) {
    const auto b = stack.back();
    stack.pop_back();
    for (auto nb : adjacency[b]) {
      if (!seen[nb]) {
        seen[nb] = true;
        stack.push_back(nb);
      }
    }
  }
  for (std::size_t b = 0; b < buses_.size(); ++b) {
    if (!seen[b]) throw ValidationError("network is not connected: bus '" + buses_[b].id + "'");
  }

  for (const InverterSpec& inv : inverters_) {
    (void)node_position(inv.node);
    if (!(inv.s_rating > 0.0)) {
      throw ValidationError("inverter at " + inv.node.label() + ": s_rating must be positive");
    }
    if (inv.p_actual < 0.0 || inv.p_actual > inv.s_rating) {
      throw ValidationError("inverter at " + inv.node.label() + ": p_actual outside [0, s_rating]");
    }
  }
}

// Complex admittance in p.u., block structure by (bus, phase).
struct AdmittanceMatrix {
  std::vector<NodeIndex> nodes;
  Eigen::SparseMatrix<Complex> y;

  Index dimension() const { return y.rows(); }
  Eigen::MatrixXcd dense() const { return Eigen::MatrixXcd(y); }
};

// Node positions of the phases of `line` at bus `bus`.
inline std::vector<Index> line_node_positions(const GridCase& grid, const LineBranch& line,
                                              const std::string& bus) {
  const auto b = grid.bus_position(bus);
  std::vector<Index> out;
  for (Phase p : line.phases.phases()) {
    out.push_back(grid.bus_offset(b) + grid.buses()[b].phases.position(p));
  }
  return out;
}

inline AdmittanceMatrix assemble_admittance(const GridCase& grid) {
  std::vector<Eigen::Triplet<Complex>> triplets;
  for (const LineBranch& line : grid.lines()) {
    const auto from = line_node_positions(grid, line, line.from);
    const auto to = line_node_positions(grid, line, line.to);
    const Eigen::MatrixXcd self = 0.5 * line.shunt + line.series_from;
    const Index p = line.phases.size();
    for (Index r = 0; r < p; ++r) {
      for (Index c = 0; c < p; ++c) {
        triplets.emplace_back(from[r], from[c], self(r, c));
        triplets.emplace_back(to[r], to[c], self(r, c));
        triplets.emplace_back(from[r], to[c], line.series_to(r, c));
        triplets.emplace_back(to[r], from[c], line.series_to(c, r));
      }
    }
  }
  AdmittanceMatrix out;
  out.nodes = grid.nodes();
  out.y.resize(grid.node_count(), grid.node_count());
  out.y.setFromTriplets(triplets.begin(), triplets.end());
  out.y.makeCompressed();
  return out;
}

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ParseError(where + ": expected a number");
  return v.get<double>();
}

inline std::string text(const json& v, const std::string& where) {
  if (!v.is_string()) throw ParseError(where + ": expected a string");
  return v.get<std::string>();
}

inline Complex complex_pair(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) throw ParseError(where + ": expected [re, im]");
  return {number(v[0], where + "[0]"), number(v[1], where + "[1]")};
}

inline Eigen::MatrixXcd complex_matrix(const json& v, Index n, const std::string& where) {
  if (!v.is_array() || static_cast<Index>(v.size()) != n) {
    throw ParseError(where + ": expected " + std::to_string(n) + " rows");
  }
  Eigen::MatrixXcd m(n, n);
  for (Index r = 0; r < n; ++r) {
    const auto row_where = where + "[" + std::to_string(r) + "]";
    const json& row = v[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != n) {
      throw ParseError(row_where + ": expected " + std::to_string(n) + " entries");
    }
    for (Index c = 0; c < n; ++c) {
      m(r, c) = complex_pair(row[static_cast<std::size_t>(c)],
                             row_where + "[" + std::to_string(c) + "]");
    }
  }
  return m;
}

}  // namespace detail

// Parses a case document. Admittances in the file are siemens, loads MW/MVAr
// per phase, inverter ratings MVA; `base_kv` is line-to-neutral and
// `base_mva` per phase, so Z_base = base_kv^2 / base_mva.
inline GridCase parse_case(const nlohmann::json& doc) {
  using detail::json;
  const std::string root = "case";
  const double base_kv = detail::number(detail::require(doc, "base_kv", root), "base_kv");
  const double base_mva = detail::number(detail::require(doc, "base_mva", root), "base_mva");
  if (!(base_kv > 0.0) || !(base_mva > 0.0)) {
    throw ValidationError("base_kv and base_mva must be positive");
  }
  const double z_base = base_kv * base_kv / base_mva;

  std::vector<Bus> buses;
  const json& jbuses = detail::require(doc, "buses", root);
  if (!jbuses.is_array()) throw ParseError("buses: expected an array");
  for (std::size_t i = 0; i < jbuses.size(); ++i) {
    const std::string where = "buses[" + std::to_string(i) + "]";
    const json& jb = jbuses[i];
    Bus bus;
    bus.id = detail::text(detail::require(jb, "id", where), where + ".id");
    bus.phases = PhaseSet::parse(detail::text(detail::require(jb, "phases", where), where + ".phases"));
    const std::string kind = detail::text(detail::require(jb, "kind", where), where + ".kind");
    if (kind == "slack") {
      bus.kind = BusKind::slack;
    } else if (kind == "load") {
      bus.kind = BusKind::load;
    } else {
      throw ParseError(where + ".kind: expected 'slack' or 'load'");
    }
    if (jb.contains("load")) {
      const json& jl = jb.at("load");
      if (!jl.is_array()) throw ParseError(where + ".load: expected an array");
      for (std::size_t k = 0; k < jl.size(); ++k) {
        bus.load.push_back(detail::complex_pair(jl[k], where + ".load[" + std::to_string(k) + "]") /
                           base_mva);
      }
    }
    buses.push_back(std::move(bus));
  }

  std::vector<LineBranch> lines;
  const json& jlines = detail::require(doc, "lines", root);
  if (!jlines.is_array()) throw ParseError("lines: expected an array");
  for (std::size_t i = 0; i < jlines.size(); ++i) {
    const std::string where = "lines[" + std::to_string(i) + "]";
    const json& jl = jlines[i];
    LineBranch line;
    line.from = detail::text(detail::require(jl, "from", where), where + ".from");
    line.to = detail::text(detail::require(jl, "to", where), where + ".to");
    line.phases = PhaseSet::parse(detail::text(detail::require(jl, "phases", where), where + ".phases"));
    const Index p = line.phases.size();
    line.series_from = detail::complex_matrix(detail::require(jl, "series", where), p, where + ".series") * z_base;
    line.series_to = jl.contains("series_to")
                         ? Eigen::MatrixXcd(detail::complex_matrix(jl.at("series_to"), p, where + ".series_to") * z_base)
                         : Eigen::MatrixXcd(-line.series_from);
    line.shunt = jl.contains("shunt")
                     ? Eigen::MatrixXcd(detail::complex_matrix(jl.at("shunt"), p, where + ".shunt") * z_base)
                     : Eigen::MatrixXcd(Eigen::MatrixXcd::Zero(p, p));
    lines.push_back(std::move(line));
  }

  std::vector<InverterSpec> inverters;
  if (doc.contains("inverters")) {
    const json& jinv = doc.at("inverters");
    if (!jinv.is_array()) throw ParseError("inverters: expected an array");
    for (std::size_t i = 0; i < jinv.size(); ++i) {
      const std::string where = "inverters[" + std::to_string(i) + "]";
      const json& ji = jinv[i];
      InverterSpec inv;
      inv.node.bus = detail::text(detail::require(ji, "bus", where), where + ".bus");
      const PhaseSet ph = PhaseSet::parse(detail::text(detail::require(ji, "phase", where), where + ".phase"));
      if (ph.size() != 1) throw ParseError(where + ".phase: expected a single phase");
      inv.node.phase = ph.phases().front();
      inv.s_rating = detail::number(detail::require(ji, "s_rating", where), where + ".s_rating") / base_mva;
      if (ji.contains("p_actual")) inv.p_actual = detail::number(ji.at("p_actual"), where + ".p_actual") / base_mva;
      inverters.push_back(inv);
    }
  }

  const std::string name = doc.contains("name") && doc.at("name").is_string() ? doc.at("name").get<std::string>() : "";
  return GridCase(name, std::move(buses), std::move(lines), std::move(inverters), base_kv, base_mva);
}

inline GridCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    return parse_case(doc);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace gridgsp
