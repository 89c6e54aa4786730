/*
 * Copyright (C) 2026 The Lightdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lightdiff/error.hpp"

namespace lightdiff::kv {

using Entries = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; '#' starts a comment. Throws kParameter on malformed lines.
Entries parse(const std::string& text);
std::string read_file(const std::filesystem::path& path);

template <class T>
T number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !in.eof() || value.empty()) fail(ErrorCode::kParameter, "invalid value '" + value + "' for " + key);
  return out;
}

std::vector<int> int_list(const std::string& key, const std::string& value);
std::string join(const std::vector<int>& values);

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace lightdiff::kv
