// Copyright 2026 The segvar Authors
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

#include <stdexcept>
#include <string>

namespace segvar {

// Validation errors map to CLI exit code 1, runtime errors to exit code 2.
class Error : public std::runtime_error {
public:
  enum class Kind { validation, runtime, io };

  Error(Kind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
  throw Error(Error::Kind::validation, msg);
}

[[noreturn]] inline void throw_runtime(const std::string& msg) {
  throw Error(Error::Kind::runtime, msg);
}

[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(Error::Kind::io, msg);
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw_validation(msg);
}

}  // namespace segvar
