/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MICRODENSE_CLI_HPP_
#define MICRODENSE_CLI_HPP_

#include <string>
#include <vector>

namespace microdense {

/// Entry point behind the `microdense` binary; exposed so tests can drive
/// the CLI in-process. Returns the process exit status.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace microdense

#endif  // MICRODENSE_CLI_HPP_
