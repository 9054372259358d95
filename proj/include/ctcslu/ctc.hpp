// Copyright 2026 The ctcslu Authors.
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

#ifndef CTCSLU_CTC_HPP_
#define CTCSLU_CTC_HPP_

#include <cmath>
#include <limits>
#include <span>

#include <Eigen/Core>

#include "ctcslu/tagcodec.hpp"

namespace ctcslu::ctc {

using tagcodec::LabelSequence;
using tagcodec::Vocabulary;

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// T x |V| natural-log probabilities, one row per frame.
using LogProbMatrix = Eigen::MatrixXd;

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits);

// Throws kNumeric unless every entry is finite and every row log-sum-exps to
// zero within `tolerance`.
void validate_log_probs(const LogProbMatrix& p, double tolerance = 1e-6);

struct CtcResult {
  double loss = 0.0;     // -ln P(l|x)
  Eigen::MatrixXd grad;  // d loss / d pre-softmax logits, T x |V|
};

// Merge adjacent repeats, then drop blanks.
LabelSequence collapse(std::span<const int> path);

// Frames needed to emit `labels`: one per label plus one blank between each
// pair of equal neighbours.
int min_frames(std::span<const int> labels);

// Forward-backward in the log domain. Throws kInfeasibleTarget when the
// target cannot be emitted in p.rows() frames.
CtcResult ctc_loss(const LogProbMatrix& p, std::span<const int> labels);

// Loss against the star-mapped target.
CtcResult ctc_star_loss(const LogProbMatrix& p, std::span<const int> labels,
                        const Vocabulary& vocab);

// Exhaustive path enumeration; refuses when |V|^T exceeds 1e7. Returns
// +infinity when no path collapses to `labels`.
double brute_force_ctc(const LogProbMatrix& p, std::span<const int> labels);

// Central finite differences on the logits against ctc_loss's analytic
// gradient. Entries whose analytic value is below 1e-10 in magnitude are
// skipped.
double grad_check(const LogProbMatrix& p, std::span<const int> labels, double eps);

}  // namespace ctcslu::ctc

#endif  // CTCSLU_CTC_HPP_
