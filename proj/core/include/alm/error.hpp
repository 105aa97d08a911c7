// Copyright 2026 The ALM Align Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace alm {

// Base class for recoverable runtime failures (bad files, bad inputs).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, out-of-range
// argument). Indicates a programming error rather than bad data.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Operation invoked in a state where it is not allowed, e.g. stepping an
// episode that already finished.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace alm
