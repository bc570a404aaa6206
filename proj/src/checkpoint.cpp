// Copyright 2026 The soda-peft Authors
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

#include "soda/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "soda/errors.hpp"
#include "soda/matrix_io.hpp"

namespace soda {

namespace {

constexpr std::string_view kMagic = "soda-adapter";

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

std::size_t to_size(const std::string& s, int line) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError("expected a nonnegative integer, got '" + s + "'", line);
  }
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  const AdapterState& st = ckpt.state;
  os << kMagic << " 1\n";
  os << "method " << to_string(st.method) << '\n';
  os << "shape " << ckpt.rows << ' ' << ckpt.cols << '\n';
  os << "rank " << st.rank << '\n';
  os << "constraint " << to_string(st.constraint) << '\n';
  if (!st.factor_sizes.empty()) {
    os << "factor_sizes";
    for (auto s : st.factor_sizes) os << ' ' << s;
    os << '\n';
  }
  const auto& p = st.params;
  if (!p.b.empty()) {
    os << "tensor b\n";
    write_matrix(os, p.b);
  }
  if (!p.a.empty()) {
    os << "tensor a\n";
    write_matrix(os, p.a);
  }
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    os << "tensor block " << i << '\n';
    write_matrix(os, p.blocks[i]);
  }
  for (std::size_t i = 0; i < p.factors.size(); ++i) {
    os << "tensor factor " << i << '\n';
    write_matrix(os, p.factors[i]);
  }
  if (!p.delta.empty()) {
    os << "tensor delta\n";
    write_matrix(os, Matrix(1, p.delta.size(), p.delta));
  }
  os << "end\n";
}

Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint ck;
  int line_no = 0;
  std::string line;
  auto next = [&]() -> std::vector<std::string> {
    if (!std::getline(is, line)) throw ParseError("unexpected end of checkpoint", line_no + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return tokens(line);
  };

  auto head = next();
  if (head.size() != 2 || head[0] != kMagic || head[1] != "1") {
    throw ParseError("not a soda-adapter version 1 checkpoint", line_no);
  }
  bool have_method = false, have_shape = false;
  auto& p = ck.state.params;
  for (;;) {
    auto t = next();
    if (t.empty()) continue;
    const std::string& key = t[0];
    if (key == "end") break;
    if (key == "method" && t.size() == 2) {
      try {
        ck.state.method = parse_method(t[1]);
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), line_no);
      }
      have_method = true;
    } else if (key == "shape" && t.size() == 3) {
      ck.rows = to_size(t[1], line_no);
      ck.cols = to_size(t[2], line_no);
      have_shape = true;
    } else if (key == "rank" && t.size() == 2) {
      ck.state.rank = to_size(t[1], line_no);
    } else if (key == "constraint" && t.size() == 2) {
      try {
        ck.state.constraint = parse_constraint(t[1]);
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), line_no);
      }
    } else if (key == "factor_sizes" && t.size() >= 2) {
      ck.state.factor_sizes.clear();
      for (std::size_t i = 1; i < t.size(); ++i) ck.state.factor_sizes.push_back(to_size(t[i], line_no));
    } else if (key == "tensor" && t.size() >= 2) {
      const int tensor_line = line_no;
      Matrix m = read_matrix(is, line_no);
      const std::string& name = t[1];
      auto expect_index = [&](std::size_t current) {
        if (t.size() != 3 || to_size(t[2], tensor_line) != current) {
          throw ParseError("tensor " + name + " index out of order", tensor_line);
        }
      };
      if (name == "b" && t.size() == 2) {
        p.b = std::move(m);
      } else if (name == "a" && t.size() == 2) {
        p.a = std::move(m);
      } else if (name == "block") {
        expect_index(p.blocks.size());
        p.blocks.push_back(std::move(m));
      } else if (name == "factor") {
        expect_index(p.factors.size());
        p.factors.push_back(std::move(m));
      } else if (name == "delta" && t.size() == 2) {
        if (m.rows() != 1) throw ParseError("delta must be a single row", tensor_line);
        p.delta.assign(m.data().begin(), m.data().end());
      } else {
        throw ParseError("unknown tensor '" + name + "'", tensor_line);
      }
    } else {
      throw ParseError("unrecognized checkpoint line '" + line + "'", line_no);
    }
  }
  if (!have_method || !have_shape) throw ParseError("checkpoint is missing method or shape", line_no);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'", 0);
  try {
    return read_checkpoint(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void check_compatible(const Checkpoint& ckpt, const FrozenBase& base) {
  if (ckpt.rows != base.rows() || ckpt.cols != base.cols()) {
    throw ShapeError("checkpoint shape " + std::to_string(ckpt.rows) + "x" +
                     std::to_string(ckpt.cols) + " does not match base " +
                     std::to_string(base.rows()) + "x" + std::to_string(base.cols()));
  }
  // Validates tensor shapes against the method.
  (void)effective_weight(base, ckpt.state);
}

}  // namespace soda
