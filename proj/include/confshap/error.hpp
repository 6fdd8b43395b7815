/*
 * Copyright 2026 The confshap Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace confshap {

// Base class for every error raised by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or incomplete run configuration / scenario file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that fails validation (unreadable file, unknown column, no
// surviving rows, single-class labels, ...). `diagnostics` carries the
// row-numbered messages collected before the failure.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what,
                     std::vector<std::string> diagnostics = {})
      : Error(what), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

// The metric is not defined on the given sample (e.g. AUC with one class).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

// Too many permutations failed the stratum support check.
class AttributionInfeasible : public Error {
 public:
  AttributionInfeasible(const std::string& what,
                        std::vector<std::string> offending_strata)
      : Error(what), offending_strata_(std::move(offending_strata)) {}

  const std::vector<std::string>& offending_strata() const {
    return offending_strata_;
  }

 private:
  std::vector<std::string> offending_strata_;
};

}  // namespace confshap
