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

#include "ctcslu/ctc.hpp"

#include <algorithm>
#include <vector>

#include "ctcslu/error.hpp"

namespace ctcslu::ctc {

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

void validate_log_probs(const LogProbMatrix& p, double tolerance) {
  if (!p.allFinite()) throw Error(ErrorKind::kNumeric, "log-probabilities not finite");
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    const double m = p.row(t).maxCoeff();
    const double lse = m + std::log((p.row(t).array() - m).exp().sum());
    if (std::abs(lse) > tolerance) {
      throw Error(ErrorKind::kNumeric,
                  "row " + std::to_string(t) + " is not normalized (log-sum-exp " +
                      std::to_string(lse) + ")");
    }
  }
}

LabelSequence collapse(std::span<const int> path) {
  LabelSequence out;
  int prev = -1;
  for (int id : path) {
    if (id != prev && id != Vocabulary::blank()) out.push_back(id);
    prev = id;
  }
  return out;
}

int min_frames(std::span<const int> labels) {
  int frames = static_cast<int>(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++frames;
  }
  return frames;
}

CtcResult ctc_loss(const LogProbMatrix& p, std::span<const int> labels) {
  const auto frames = static_cast<int>(p.rows());
  const auto units = static_cast<int>(p.cols());
  if (frames < 1) throw Error(ErrorKind::kShape, "ctc_loss needs at least one frame");
  for (int id : labels) {
    if (id <= Vocabulary::blank() || id >= units) {
      throw Error(ErrorKind::kEncoding,
                  "label " + std::to_string(id) + " outside [1, " + std::to_string(units) + ")");
    }
  }
  if (min_frames(labels) > frames) {
    throw Error(ErrorKind::kInfeasibleTarget,
                "target needs " + std::to_string(min_frames(labels)) + " frames, have " +
                    std::to_string(frames));
  }
  if (!p.allFinite()) throw Error(ErrorKind::kNumeric, "log-probabilities not finite");

  // Extended target: blank, l1, blank, l2, ..., blank.
  const int ext_len = 2 * static_cast<int>(labels.size()) + 1;
  std::vector<int> ext(static_cast<std::size_t>(ext_len), Vocabulary::blank());
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](int s) {
    return s >= 2 && ext[static_cast<std::size_t>(s)] != Vocabulary::blank() &&
           ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)];
  };

  // alpha includes the emission at t; beta covers frames after t only.
  Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(frames, ext_len, kLogZero);
  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(frames, ext_len, kLogZero);
  alpha(0, 0) = p(0, ext[0]);
  if (ext_len > 1) alpha(0, 1) = p(0, ext[1]);
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < ext_len; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kLogZero) acc += p(t, ext[static_cast<std::size_t>(s)]);
      alpha(t, s) = acc;
    }
  }
  beta(frames - 1, ext_len - 1) = 0.0;
  if (ext_len > 1) beta(frames - 1, ext_len - 2) = 0.0;
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < ext_len; ++s) {
      auto step = [&](int next) {
        return beta(t + 1, next) + p(t + 1, ext[static_cast<std::size_t>(next)]);
      };
      double acc = step(s);
      if (s + 1 < ext_len) acc = log_add(acc, step(s + 1));
      if (s + 2 < ext_len && can_skip(s + 2)) acc = log_add(acc, step(s + 2));
      beta(t, s) = acc;
    }
  }
  double log_total = alpha(frames - 1, ext_len - 1);
  if (ext_len > 1) log_total = log_add(log_total, alpha(frames - 1, ext_len - 2));
  if (log_total == kLogZero || !std::isfinite(log_total)) {
    throw Error(ErrorKind::kNumeric, "total path probability underflowed");
  }

  CtcResult result;
  result.loss = -log_total;
  result.grad = p.array().exp().matrix();
  std::vector<double> occupancy(static_cast<std::size_t>(units));
  for (int t = 0; t < frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kLogZero);
    for (int s = 0; s < ext_len; ++s) {
      const double g = alpha(t, s) + beta(t, s);
      if (g == kLogZero) continue;
      auto& slot = occupancy[static_cast<std::size_t>(ext[static_cast<std::size_t>(s)])];
      slot = log_add(slot, g);
    }
    for (int k = 0; k < units; ++k) {
      const double occ = occupancy[static_cast<std::size_t>(k)];
      if (occ != kLogZero) result.grad(t, k) -= std::exp(occ - log_total);
    }
  }
  return result;
}

CtcResult ctc_star_loss(const LogProbMatrix& p, std::span<const int> labels,
                        const Vocabulary& vocab) {
  if (static_cast<std::size_t>(p.cols()) != vocab.size()) {
    throw Error(ErrorKind::kShape, "log-probability width " + std::to_string(p.cols()) +
                                       " differs from vocabulary size " +
                                       std::to_string(vocab.size()));
  }
  const LabelSequence mapped = tagcodec::star_map(labels, vocab);
  return ctc_loss(p, mapped);
}

double brute_force_ctc(const LogProbMatrix& p, std::span<const int> labels) {
  const auto frames = static_cast<int>(p.rows());
  const auto units = static_cast<int>(p.cols());
  double paths = 1.0;
  for (int t = 0; t < frames; ++t) paths *= units;
  if (paths > 1e7) {
    throw Error(ErrorKind::kOracleTooLarge,
                std::to_string(units) + "^" + std::to_string(frames) + " paths exceed 1e7");
  }
  const LabelSequence target(labels.begin(), labels.end());
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  long double mass = 0.0L;
  while (true) {
    if (collapse(path) == target) {
      double logp = 0.0;
      for (int t = 0; t < frames; ++t) logp += p(t, path[static_cast<std::size_t>(t)]);
      mass += std::exp(static_cast<long double>(logp));
    }
    int t = frames - 1;
    while (t >= 0 && ++path[static_cast<std::size_t>(t)] == units) {
      path[static_cast<std::size_t>(t)] = 0;
      --t;
    }
    if (t < 0) break;
  }
  if (mass <= 0.0L) return std::numeric_limits<double>::infinity();
  return -static_cast<double>(std::log(mass));
}

double grad_check(const LogProbMatrix& p, std::span<const int> labels, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw Error(ErrorKind::kConfiguration, "grad_check eps must lie in (0, 1e-2]");
  }
  const CtcResult analytic = ctc_loss(p, labels);
  Eigen::MatrixXd logits = p;
  double worst = 0.0;
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    for (Eigen::Index k = 0; k < p.cols(); ++k) {
      const double a = analytic.grad(t, k);
      if (std::abs(a) <= 1e-10) continue;
      const double saved = logits(t, k);
      logits(t, k) = saved + eps;
      const double up = ctc_loss(log_softmax_rows(logits), labels).loss;
      logits(t, k) = saved - eps;
      const double down = ctc_loss(log_softmax_rows(logits), labels).loss;
      logits(t, k) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(numeric - a) / std::abs(a));
    }
  }
  return worst;
}

}  // namespace ctcslu::ctc
