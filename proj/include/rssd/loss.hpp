#pragma once

// Multibox objective: smooth-L1 localization over positives plus softmax
// cross-entropy over positives and mined hard negatives.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rssd/boxes.hpp"
#include "rssd/tensor.hpp"

namespace rssd {

struct LossBreakdown {
  double loc = 0;
  double conf = 0;
  double total = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline constexpr double kNegPosRatio = 3.0;

inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1 ? 0.5 * x * x : a - 0.5;
}
inline double smooth_l1_grad(double x) { return x > 1 ? 1.0 : x < -1 ? -1.0 : x; }

// log-softmax of row[0..C) into out.
inline void log_softmax(const double* row, std::size_t C, double* out) {
  const double m = *std::max_element(row, row + C);
  double s = 0;
  for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
  const double lse = m + std::log(s);
  for (std::size_t c = 0; c < C; ++c) out[c] = row[c] - lse;
}

// Indices of the `keep` negatives with the largest background loss;
// equal losses keep the lower anchor index.
inline std::vector<std::size_t> select_hard_negatives(const std::vector<double>& background_loss,
                                                      const std::vector<int>& labels,
                                                      std::size_t keep) {
  std::vector<std::size_t> neg;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    if (labels[a] == 0) neg.push_back(a);
  }
  keep = std::min(keep, neg.size());
  std::partial_sort(neg.begin(), neg.begin() + std::ptrdiff_t(keep), neg.end(),
                    [&](std::size_t x, std::size_t y) {
                      if (background_loss[x] != background_loss[y]) return background_loss[x] > background_loss[y];
                      return x < y;
                    });
  neg.resize(keep);
  std::sort(neg.begin(), neg.end());
  return neg;
}

// `pred` is (N, 1, A, C+4): C class logits (0 = background) then 4 offsets.
// Writes d(total)/d(pred) into *grad when given.
template <typename T>
LossBreakdown multibox_loss(const Tensor4<T>& pred, const std::vector<MatchResult>& matches,
                            std::size_t num_classes, Tensor4<T>* grad = nullptr,
                            double neg_pos_ratio = kNegPosRatio) {
  const Shape4 s = pred.shape();
  const std::size_t N = s.n, A = s.h, D = s.w, C = num_classes;
  if (s.c != 1 || D != C + 4) {
    throw DimensionError("w", "predictions " + s.str() + " do not hold " + std::to_string(C) +
                                  " classes plus 4 offsets");
  }
  if (matches.size() != N) throw DimensionError("n", "one match result per image required");
  for (const auto& m : matches) {
    if (m.labels.size() != A) {
      throw DimensionError("h", std::to_string(m.labels.size()) + " matched anchors, predictions have " +
                                    std::to_string(A));
    }
  }
  if (grad) *grad = Tensor4<T>(s);

  LossBreakdown out;
  for (const auto& m : matches) out.positives += m.positives;
  const double norm = double(std::max<std::size_t>(1, out.positives));

  std::vector<double> row(D), logp(C), bg_loss(A);
  for (std::size_t n = 0; n < N; ++n) {
    const MatchResult& m = matches[n];
    const T* p = pred.data().data() + n * A * D;
    std::vector<std::vector<double>> lp(A, std::vector<double>(C));
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t c = 0; c < C; ++c) row[c] = double(p[a * D + c]);
      log_softmax(row.data(), C, lp[a].data());
      bg_loss[a] = -lp[a][0];
    }
    const std::size_t keep = out.positives == 0
                                 ? std::size_t(neg_pos_ratio)
                                 : std::size_t(std::floor(neg_pos_ratio * double(m.positives)));
    const auto negatives = select_hard_negatives(bg_loss, m.labels, keep);
    out.negatives += negatives.size();

    auto add_conf = [&](std::size_t a, int label) {
      out.conf += -lp[a][std::size_t(label)];
      if (!grad) return;
      T* g = grad->data().data() + (n * A + a) * D;
      for (std::size_t c = 0; c < C; ++c) {
        const double soft = std::exp(lp[a][c]);
        g[c] += T((soft - (std::size_t(label) == c ? 1.0 : 0.0)) / norm);
      }
    };
    for (std::size_t a = 0; a < A; ++a) {
      if (m.labels[a] <= 0) continue;
      add_conf(a, m.labels[a]);
      for (std::size_t k = 0; k < 4; ++k) {
        const double d = double(p[a * D + C + k]) - m.targets[a][k];
        out.loc += smooth_l1(d);
        if (grad) (*grad)[(n * A + a) * D + C + k] += T(smooth_l1_grad(d) / norm);
      }
    }
    for (std::size_t a : negatives) add_conf(a, 0);
  }
  out.total = (out.loc + out.conf) / norm;
  return out;
}

}  // namespace rssd
