// SPDX-License-Identifier: Apache-2.0

#include "sslab/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace sslab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

std::vector<int> extend_with_blanks(std::span<const int> target, int blank) {
  std::vector<int> ext(2 * target.size() + 1, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

// alpha(t, s): log prob of all partial alignments ending in extended state s at t.
Matrix forward_lattice(const Matrix& lp, const std::vector<int>& ext, int blank) {
  const Index t_len = lp.rows();
  const auto s_len = static_cast<Index>(ext.size());
  Matrix alpha = Matrix::Constant(t_len, s_len, kNegInf);
  alpha(0, 0) = lp(0, blank);
  if (s_len > 1) alpha(0, 1) = lp(0, ext[1]);
  for (Index t = 1; t < t_len; ++t) {
    for (Index s = 0; s < s_len; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (s >= 2 && ext[static_cast<std::size_t>(s)] != blank && ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s - 2)])
        a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kNegInf ? kNegInf : a + lp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  return alpha;
}

Matrix backward_lattice(const Matrix& lp, const std::vector<int>& ext, int blank) {
  const Index t_len = lp.rows();
  const auto s_len = static_cast<Index>(ext.size());
  Matrix beta = Matrix::Constant(t_len, s_len, kNegInf);
  beta(t_len - 1, s_len - 1) = lp(t_len - 1, ext.back());
  if (s_len > 1) beta(t_len - 1, s_len - 2) = lp(t_len - 1, ext[static_cast<std::size_t>(s_len - 2)]);
  for (Index t = t_len - 2; t >= 0; --t) {
    for (Index s = 0; s < s_len; ++s) {
      double b = beta(t + 1, s);
      if (s + 1 < s_len) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < s_len && ext[static_cast<std::size_t>(s)] != blank &&
          ext[static_cast<std::size_t>(s)] != ext[static_cast<std::size_t>(s + 2)])
        b = log_add(b, beta(t + 1, s + 2));
      beta(t, s) = b == kNegInf ? kNegInf : b + lp(t, ext[static_cast<std::size_t>(s)]);
    }
  }
  return beta;
}

double total_log_prob(const Matrix& alpha) {
  const Index last = alpha.rows() - 1;
  const Index s_len = alpha.cols();
  double p = alpha(last, s_len - 1);
  if (s_len > 1) p = log_add(p, alpha(last, s_len - 2));
  return p;
}

void check_target(const Matrix& logits, std::span<const int> target, int blank) {
  if (logits.rows() < 1) throw Error("CTC needs at least one frame");
  for (int id : target)
    if (id < 0 || id >= logits.cols() || id == blank) throw Error("CTC target id out of range or blank");
}

}  // namespace

LengthCheck ctc_length_guard(std::size_t num_frames, std::span<const int> target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++repeats;
  LengthCheck check;
  check.required = target.size() + repeats;
  check.available = num_frames;
  check.ok = num_frames >= check.required;
  return check;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

double ctc_log_prob(const Matrix& logits, std::span<const int> target, int blank) {
  check_target(logits, target, blank);
  if (!ctc_length_guard(static_cast<std::size_t>(logits.rows()), target).ok) return kNegInf;
  return total_log_prob(forward_lattice(log_softmax(logits), extend_with_blanks(target, blank), blank));
}

CtcResult ctc_loss(const Matrix& logits, std::span<const int> target, int blank) {
  check_target(logits, target, blank);
  const LengthCheck guard = ctc_length_guard(static_cast<std::size_t>(logits.rows()), target);
  if (!guard.ok)
    throw Error("CTC length guard violated: " + std::to_string(guard.available) + " frames for a target needing " +
                std::to_string(guard.required));

  const Matrix lp = log_softmax(logits);
  const std::vector<int> ext = extend_with_blanks(target, blank);
  const Matrix alpha = forward_lattice(lp, ext, blank);
  const Matrix beta = backward_lattice(lp, ext, blank);
  const double log_p = total_log_prob(alpha);
  if (!std::isfinite(log_p)) throw Error("CTC target has zero probability");

  CtcResult result;
  result.loss = -log_p;
  result.grad = lp.array().exp().matrix();
  for (Index t = 0; t < lp.rows(); ++t) {
    std::map<int, double> occupancy;
    for (std::size_t s = 0; s < ext.size(); ++s) {
      const double g = alpha(t, static_cast<Index>(s)) + beta(t, static_cast<Index>(s)) - lp(t, ext[s]);
      if (g == kNegInf) continue;
      auto [it, inserted] = occupancy.emplace(ext[s], g);
      if (!inserted) it->second = log_add(it->second, g);
    }
    for (const auto& [k, g] : occupancy) result.grad(t, k) -= std::exp(g - log_p);
  }
  return result;
}

std::vector<int> ctc_collapse(std::span<const int> path, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int id : path) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

std::vector<int> greedy_decode(const Matrix& logits, int blank) {
  std::vector<int> path(static_cast<std::size_t>(logits.rows()));
  for (Index t = 0; t < logits.rows(); ++t) {
    Index best = 0;
    logits.row(t).maxCoeff(&best);
    path[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return ctc_collapse(path, blank);
}

std::vector<int> viterbi_decode(const Matrix& logits, int beam, int blank) {
  if (beam < 1) throw Error("beam must be at least 1");
  if (beam == 1) return greedy_decode(logits, blank);

  struct Score {
    double blank = kNegInf;
    double label = kNegInf;
    double total() const { return log_add(blank, label); }
  };
  const Matrix lp = log_softmax(logits);
  std::map<std::vector<int>, Score> beams{{{}, Score{0.0, kNegInf}}};

  for (Index t = 0; t < lp.rows(); ++t) {
    std::map<std::vector<int>, Score> next;
    for (const auto& [prefix, score] : beams) {
      Score& stay = next[prefix];
      stay.blank = log_add(stay.blank, score.total() + lp(t, blank));
      for (Index k = 0; k < lp.cols(); ++k) {
        if (k == blank) continue;
        const double p = lp(t, k);
        std::vector<int> extended = prefix;
        extended.push_back(static_cast<int>(k));
        Score& ext = next[extended];
        if (!prefix.empty() && prefix.back() == k) {
          ext.label = log_add(ext.label, score.blank + p);
          Score& same = next[prefix];
          same.label = log_add(same.label, score.label + p);
        } else {
          ext.label = log_add(ext.label, score.total() + p);
        }
      }
    }
    std::vector<std::pair<std::vector<int>, Score>> ranked(next.begin(), next.end());
    // Stable on the map's lexicographic order, so equal scores resolve deterministically.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (ranked.size() > static_cast<std::size_t>(beam)) ranked.resize(static_cast<std::size_t>(beam));
    beams = std::map<std::vector<int>, Score>(ranked.begin(), ranked.end());
  }

  auto best = beams.begin();
  for (auto it = beams.begin(); it != beams.end(); ++it)
    if (it->second.total() > best->second.total()) best = it;
  return best->first;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double wer(std::span<const std::string> hypothesis, std::span<const std::string> reference) {
  if (reference.empty()) throw Error("empty reference");
  return static_cast<double>(edit_distance(hypothesis, reference)) / static_cast<double>(reference.size());
}

}  // namespace sslab
