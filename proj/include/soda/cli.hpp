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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "soda/harness.hpp"

namespace soda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct KeyInfo {
  std::string_view name;
  std::string_view help;
};

/// Known configuration keys, shared by config files and command-line flags.
std::span<const KeyInfo> known_keys();

/// Flat `key = value` settings. Unknown keys are rejected by name.
class CliConfig {
 public:
  void set(std::string_view key, std::string value);
  /// Reads `key = value` lines; `#` starts a comment. Existing values are kept
  /// when `overwrite` is false, so flags applied earlier win over the file.
  void load_file(const std::filesystem::path& path, bool overwrite = false);
  void parse_text(std::string_view text, bool overwrite = false);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

/// Everything a train/sweep/ablate run needs, range-checked.
struct RunSetup {
  SyntheticTask task;
  TrainConfig train;
  std::vector<double> lrs;
  std::size_t suite_size = 5;
  bool timing = false;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> save_checkpoint;
  std::optional<std::filesystem::path> save_base;
  std::optional<std::filesystem::path> save_residual;
};

RunSetup resolve(const CliConfig& cfg);

int cmd_decompose(const std::filesystem::path& input, std::string_view mode,
                  const std::filesystem::path& out_prefix, std::ostream& out);
int cmd_train(const RunSetup& setup, std::ostream& out);
int cmd_sweep(const RunSetup& setup, std::ostream& out);
int cmd_ablate(std::string_view name, const RunSetup& setup, std::ostream& out);
int cmd_params(std::size_t n, std::size_t r, std::ostream& out);
int cmd_merge(const std::filesystem::path& ckpt1, const std::filesystem::path& ckpt2,
              const std::filesystem::path& base, const std::filesystem::path& out_prefix,
              std::ostream& out);
int cmd_verify(std::uint64_t seed, bool inject_failure, std::ostream& out);

inline constexpr std::string_view kAblationNames[] = {"spectral_vs_orthogonal", "constraint",
                                                      "optimizer"};

/// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace soda::cli
