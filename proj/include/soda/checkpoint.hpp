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

#include <cstddef>
#include <filesystem>
#include <iosfwd>

#include "soda/adapters.hpp"

namespace soda {

/// Adapter checkpoint: a line-oriented text container.
///
///   soda-adapter 1
///   method SODA_SVD
///   shape <m> <n>
///   rank <r>
///   constraint RELU
///   factor_sizes 2 2 2        (omitted when the method has no Kronecker factors)
///   tensor <name> [index]     followed by one matrix block in the matrix text format
///   end
///
/// Tensor names: b, a, block <i>, factor <i>, delta (delta is a 1 x k row).
struct Checkpoint {
  std::size_t rows = 0;
  std::size_t cols = 0;
  AdapterState state;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ShapeError naming the mismatch if the checkpoint does not fit `base`.
void check_compatible(const Checkpoint& ckpt, const FrozenBase& base);

}  // namespace soda
