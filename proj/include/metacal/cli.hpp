// Copyright (c) 2026 The metacal Authors. All Rights Reserved.
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

// Command-line front end. Exit codes: 0 success, 1 runtime failure,
// 2 bad usage or configuration. Failures print one JSON line on stderr.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metacal::cli {

inline constexpr const char* kOutEnv = "METACAL_OUT";
inline constexpr const char* kDefaultOut = "metacal_out";

/// args excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(int argc, char** argv);

}  // namespace metacal::cli
