/*
 * Copyright 2026 The shapfuse Authors.
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

#ifndef SHAPFUSE_COMMON_HPP_
#define SHAPFUSE_COMMON_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace shapfuse {

// Row-major so that one row is one sample (instance, bag embedding, ...).
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Precondition or configuration violation detected before any work is done.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operand dimensions disagree.
class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// A computation was asked to exceed a hard capacity guard (e.g. exhaustive
// coalition enumeration over too many features).
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable or malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (non-finite loss or parameters).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer. Used to derive independent stream seeds.
std::uint64_t SplitMix64(std::uint64_t x);

// Derives a child seed from `parent`, a textual stage tag and up to two
// integer coordinates (fold, modality, tree index, ...).
std::uint64_t DeriveSeed(std::uint64_t parent, std::string_view tag,
                         std::uint64_t a = 0, std::uint64_t b = 0);

// Throws ShapeError with `what` if `condition` is false.
void CheckShape(bool condition, const std::string& what);

// Throws InvalidArgument with `what` if `condition` is false.
void Require(bool condition, const std::string& what);

// True when every entry is finite.
bool AllFinite(const Eigen::Ref<const Matrix>& m);

// Runs fn(0..n-1) on up to `num_threads` threads (interleaved assignment).
// fn must only write state owned by its index.
void ParallelFor(std::size_t n, int num_threads,
                 const std::function<void(std::size_t)>& fn);

}  // namespace shapfuse

#endif  // SHAPFUSE_COMMON_HPP_
