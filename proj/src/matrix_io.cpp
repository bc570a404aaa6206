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

#include "soda/matrix_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "soda/errors.hpp"

namespace soda {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, int line_no) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError("invalid number '" + tok + "'", line_no);
  if (!std::isfinite(v)) throw ParseError("non-finite value '" + tok + "'", line_no);
  return v;
}

std::size_t parse_dim(const std::string& tok, int line_no) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0) {
    throw ParseError("invalid dimension '" + tok + "'", line_no);
  }
  return v;
}

bool next_line(std::istream& is, std::string& line, int& line_no) {
  if (!std::getline(is, line)) return false;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

std::string to_text(const Matrix& m) {
  std::ostringstream os;
  write_matrix(os, m);
  return os.str();
}

Matrix read_matrix(std::istream& is, int& line_no) {
  std::string line;
  if (!next_line(is, line, line_no)) throw ParseError("missing matrix header", line_no + 1);
  auto header = split_ws(line);
  if (header.size() != 2) throw ParseError("expected 'rows cols' header", line_no);
  const std::size_t rows = parse_dim(header[0], line_no);
  const std::size_t cols = parse_dim(header[1], line_no);
  std::vector<double> data;
  data.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!next_line(is, line, line_no)) {
      throw ParseError("expected " + std::to_string(rows) + " rows, found " + std::to_string(i),
                       line_no + 1);
    }
    auto toks = split_ws(line);
    if (toks.size() != cols) {
      throw ParseError("expected " + std::to_string(cols) + " values, found " +
                           std::to_string(toks.size()),
                       line_no);
    }
    for (const auto& t : toks) data.push_back(parse_double(t, line_no));
  }
  return Matrix(rows, cols, std::move(data));
}

Matrix parse_matrix(const std::string& text) {
  std::istringstream is(text);
  int line_no = 0;
  return read_matrix(is, line_no);
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open matrix file '" + path.string() + "'", 0);
  int line_no = 0;
  try {
    return read_matrix(in, line_no);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  write_matrix(out, m);
}

}  // namespace soda
