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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <Eigen/Dense>

#include "gridgsp/errors.hpp"
#include "gridgsp/gso.hpp"

namespace gridgsp::io {

inline std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256: digest failed");
  std::ostringstream out;
  for (unsigned int k = 0; k < len; ++k) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[k]};
  return out.str();
}

inline std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

// Hash of the shape and raw IEEE-754 contents of a matrix.
inline std::string matrix_fingerprint(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd col_major = m;
  std::string bytes;
  const std::int64_t dims[2] = {col_major.rows(), col_major.cols()};
  bytes.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  bytes.append(reinterpret_cast<const char*>(col_major.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
  return sha256_hex(bytes);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size()) throw DimensionError("csv: row width differs from header");
    rows_.push_back(cells);
  }

  void add_row(const std::vector<double>& cells) {
    std::vector<std::string> text;
    for (double v : cells) text.push_back(format_double(v));
    add_row(text);
  }

  std::string str() const {
    std::ostringstream out;
    auto line = [&out](const std::vector<std::string>& cells) {
      for (std::size_t k = 0; k < cells.size(); ++k) out << (k ? "," : "") << cells[k];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out.str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Coordinate text format:
//   %%gridgsp-gso coordinate real symmetric
//   %%dimension <N>
//   %%nodes <label> <label> ...
//   %%p_cst <v> ...
//   %%q_cst <v> ...
//   <row> <col> <value>      (0-based, lower triangle incl. diagonal, nonzeros)
inline std::string export_gso(const RealGso& gso) {
  std::ostringstream out;
  const Index n = gso.node_count();
  out << "%%gridgsp-gso coordinate real symmetric\n%%dimension " << n << "\n%%nodes";
  for (const NodeIndex& node : gso.nodes) out << ' ' << node.label();
  out << "\n%%p_cst";
  for (Index k = 0; k < n; ++k) out << ' ' << format_double(gso.p_cst(k));
  out << "\n%%q_cst";
  for (Index k = 0; k < n; ++k) out << ' ' << format_double(gso.q_cst(k));
  out << '\n';
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c <= r; ++c) {
      if (gso.b_hat(r, c) != 0.0) out << r << ' ' << c << ' ' << format_double(gso.b_hat(r, c)) << '\n';
    }
  }
  return out.str();
}

inline RealGso import_gso(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  RealGso gso;
  Index n = -1;
  auto read_vec = [&n](std::istringstream& s) {
    Eigen::VectorXd v(n);
    for (Index k = 0; k < n; ++k) {
      if (!(s >> v(k))) throw ParseError("gso file: constant vector too short");
    }
    return v;
  };
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream s(line);
    if (line.rfind("%%", 0) == 0) {
      std::string key;
      s >> key;
      if (key == "%%dimension") {
        s >> n;
        if (n < 0) throw ParseError("gso file: bad dimension");
        gso.b_hat = Eigen::MatrixXd::Zero(n, n);
      } else if (key == "%%nodes") {
        std::string label;
        while (s >> label) gso.nodes.push_back(parse_node_label(label));
      } else if (key == "%%p_cst") {
        gso.p_cst = read_vec(s);
      } else if (key == "%%q_cst") {
        gso.q_cst = read_vec(s);
      }
      continue;
    }
    if (n < 0) throw ParseError("gso file: entries before %%dimension");
    Index r = 0;
    Index c = 0;
    double v = 0.0;
    if (!(s >> r >> c >> v) || r < 0 || c < 0 || r >= n || c >= n) {
      throw ParseError("gso file line " + std::to_string(line_no) + ": malformed entry");
    }
    gso.b_hat(r, c) = v;
    gso.b_hat(c, r) = v;
  }
  if (n < 0 || static_cast<Index>(gso.nodes.size()) != n) throw ParseError("gso file: header incomplete");
  gso.s_full = block_diagonal2(gso.b_hat);
  return gso;
}

}  // namespace gridgsp::io
