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

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "soda/matrix.hpp"

namespace soda {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

/// Text format: a `rows cols` header line followed by `rows` lines of `cols`
/// whitespace-separated values. Blank lines are not allowed inside the block.
void write_matrix(std::ostream& os, const Matrix& m);
std::string to_text(const Matrix& m);

/// Reads one matrix block. `line_no` tracks the 1-based position in the stream
/// so parse errors name the offending line.
Matrix read_matrix(std::istream& is, int& line_no);
Matrix parse_matrix(const std::string& text);

Matrix load_matrix(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const Matrix& m);

}  // namespace soda
