#pragma once

// Dot-product scores, dustbin augmentation, log-domain Sinkhorn, mutual
// argmax extraction and keypoint score fusion.
//
// Augmented scores are (M+1) x (N+1). Sinkhorn targets the partial
// assignment marginals: object rows and columns sum to 1, the dustbin row
// sums to N and the dustbin column sums to M.

#include <rom/box.hpp>
#include <rom/diffcore.hpp>

#include <cmath>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace rom {

using Match = std::pair<int, int>;

struct KeypointMatch {
  double u1 = 0.0;
  double v1 = 0.0;
  double u2 = 0.0;
  double v2 = 0.0;
  friend bool operator==(const KeypointMatch&, const KeypointMatch&) = default;
};

struct Assignment {
  Tensor<double> probabilities;  // P-bar, (M+1) x (N+1)
  std::vector<Match> matches;
  std::vector<int> unmatched1;
  std::vector<int> unmatched2;
};

// Scores ------------------------------------------------------------------

template <class T>
NodeId score_matrix(Graph<T>& g, NodeId x1, NodeId x2) {
  const auto& a = g.value(x1);
  const auto& b = g.value(x2);
  if (a.cols() != b.cols()) throw Error("score_matrix feature length mismatch: " + shape_of(a) + " vs " + shape_of(b));
  if (a.rows() < 1 || b.rows() < 1) throw Error("score_matrix needs at least one object per image");
  return g.matmul(x1, g.transpose(x2));
}

template <class T>
Tensor<T> score_matrix(const Tensor<T>& x1, const Tensor<T>& x2) {
  Graph<T> g;
  return g.value(score_matrix(g, g.constant(x1), g.constant(x2)));
}

/// Appends a dustbin row and column filled with the 1x1 node `z`.
template <class T>
NodeId augment_dustbin(Graph<T>& g, NodeId scores, NodeId z) {
  const auto& s = g.value(scores);
  if (g.value(z).size() != 1) throw Error("dustbin parameter must be 1x1, got " + shape_of(g.value(z)));
  NodeId col = g.matmul(g.constant(Tensor<T>::Ones(s.rows(), 1)), z);
  NodeId row = g.matmul(z, g.constant(Tensor<T>::Ones(1, s.cols() + 1)));
  return g.concat_rows(g.concat_cols(scores, col), row);
}

template <class T>
Tensor<T> augment_dustbin(const Tensor<T>& scores, T z) {
  Tensor<T> out(scores.rows() + 1, scores.cols() + 1);
  out.setConstant(z);
  out.topLeftCorner(scores.rows(), scores.cols()) = scores;
  return out;
}

// Sinkhorn ----------------------------------------------------------------

namespace detail {

template <class T>
std::pair<Tensor<T>, Tensor<T>> marginal_targets(Eigen::Index rows, Eigen::Index cols) {
  const Eigen::Index m = rows - 1;
  const Eigen::Index n = cols - 1;
  if (m < 1 || n < 1) throw Error("sinkhorn needs an augmented matrix of at least 2x2");
  Tensor<T> log_mu = Tensor<T>::Zero(rows, 1);
  Tensor<T> log_nu = Tensor<T>::Zero(1, cols);
  log_mu(m, 0) = static_cast<T>(std::log(double(n)));
  log_nu(0, n) = static_cast<T>(std::log(double(m)));
  return {log_mu, log_nu};
}

}  // namespace detail

/// Differentiable log-domain Sinkhorn. Returns log P-bar.
template <class T>
NodeId sinkhorn_log(Graph<T>& g, NodeId augmented, int iterations) {
  if (iterations < 1) throw Error("sinkhorn needs at least one iteration");
  const auto& s = g.value(augmented);
  if (!s.allFinite()) throw Error("sinkhorn input has non-finite scores");
  auto [mu, nu] = detail::marginal_targets<T>(s.rows(), s.cols());
  NodeId log_mu = g.constant(std::move(mu));
  NodeId log_nu = g.constant(std::move(nu));
  NodeId v = g.constant(Tensor<T>::Zero(1, s.cols()));
  NodeId u{};
  for (int it = 0; it < iterations; ++it) {
    u = g.sub(log_mu, g.logsumexp_rows(g.add(augmented, v)));
    v = g.sub(log_nu, g.transpose(g.logsumexp_rows(g.transpose(g.add(augmented, u)))));
  }
  return g.add(g.add(augmented, u), v);
}

struct MarginalResidual {
  double max_abs = 0.0;  // largest |marginal - target|
  double l1 = 0.0;       // sum of |marginal - target| over rows and columns
};

inline MarginalResidual marginal_residual(const Tensor<double>& p) {
  const Eigen::Index m = p.rows() - 1;
  const Eigen::Index n = p.cols() - 1;
  MarginalResidual r;
  for (Eigen::Index i = 0; i <= m; ++i) {
    const double target = i < m ? 1.0 : double(n);
    const double e = std::abs(p.row(i).sum() - target);
    r.max_abs = std::max(r.max_abs, e);
    r.l1 += e;
  }
  for (Eigen::Index j = 0; j <= n; ++j) {
    const double target = j < n ? 1.0 : double(m);
    const double e = std::abs(p.col(j).sum() - target);
    r.max_abs = std::max(r.max_abs, e);
    r.l1 += e;
  }
  return r;
}

/// Plain log-domain Sinkhorn on values. `observer` sees P-bar after every
/// full row+column sweep.
inline Tensor<double> sinkhorn(const Tensor<double>& augmented, int iterations,
                               const std::function<void(int, const Tensor<double>&)>& observer = {}) {
  if (iterations < 1) throw Error("sinkhorn needs at least one iteration");
  if (!augmented.allFinite()) throw Error("sinkhorn input has non-finite scores");
  auto [log_mu, log_nu] = detail::marginal_targets<double>(augmented.rows(), augmented.cols());
  const Eigen::Index rows = augmented.rows();
  const Eigen::Index cols = augmented.cols();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(rows);
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(cols);
  auto lse = [](const auto& xs) {
    const double m = xs.maxCoeff();
    return m + std::log((xs.array() - m).exp().sum());
  };
  auto current = [&] {
    Tensor<double> p(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) p(i, j) = std::exp(augmented(i, j) + u(i) + v(j));
    }
    return p;
  };
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < rows; ++i) u(i) = log_mu(i, 0) - lse((augmented.row(i) + v).eval());
    for (Eigen::Index j = 0; j < cols; ++j) v(j) = log_nu(0, j) - lse((augmented.col(j) + u).eval());
    if (observer) observer(it + 1, current());
  }
  return current();
}

// Extraction --------------------------------------------------------------

/// Mutual argmax over object-plus-dustbin candidates; ties go to the lowest
/// index.
inline Assignment extract_assignment(const Tensor<double>& p) {
  const Eigen::Index m = p.rows() - 1;
  const Eigen::Index n = p.cols() - 1;
  if (m < 0 || n < 0) throw Error("extract_assignment on an empty matrix");
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(m));
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j <= n; ++j) {
      if (p(i, j) > p(i, best)) best = j;
    }
    row_best[static_cast<std::size_t>(i)] = best;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i <= m; ++i) {
      if (p(i, j) > p(best, j)) best = i;
    }
    col_best[static_cast<std::size_t>(j)] = best;
  }
  Assignment a;
  a.probabilities = p;
  std::vector<bool> matched2(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = row_best[static_cast<std::size_t>(i)];
    if (j < n && col_best[static_cast<std::size_t>(j)] == i) {
      a.matches.emplace_back(static_cast<int>(i), static_cast<int>(j));
      matched2[static_cast<std::size_t>(j)] = true;
    } else {
      a.unmatched1.push_back(static_cast<int>(i));
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!matched2[static_cast<std::size_t>(j)]) a.unmatched2.push_back(static_cast<int>(j));
  }
  return a;
}

// Keypoint fusion ---------------------------------------------------------

/// ln(1 + count) per object pair, dustbin row, column and corner fixed at 1.
/// A keypoint inside several boxes counts for each of them.
inline Tensor<double> keypoint_scores(std::span<const KeypointMatch> keypoints, std::span<const Box> boxes1,
                                      std::span<const Box> boxes2) {
  const auto m = static_cast<Eigen::Index>(boxes1.size());
  const auto n = static_cast<Eigen::Index>(boxes2.size());
  Tensor<double> counts = Tensor<double>::Zero(m, n);
  for (const KeypointMatch& k : keypoints) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!boxes1[static_cast<std::size_t>(i)].contains(k.u1, k.v1)) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (boxes2[static_cast<std::size_t>(j)].contains(k.u2, k.v2)) counts(i, j) += 1.0;
      }
    }
  }
  Tensor<double> s = Tensor<double>::Ones(m + 1, n + 1);
  s.topLeftCorner(m, n) = counts.array().log1p().matrix();
  return s;
}

inline Assignment fuse_and_match(const Tensor<double>& object_scores, const Tensor<double>& keypoint_scores,
                                 double alpha, int iterations) {
  if (object_scores.rows() != keypoint_scores.rows() || object_scores.cols() != keypoint_scores.cols()) {
    throw Error("fuse_and_match shape mismatch: " + shape_of(object_scores) + " vs " + shape_of(keypoint_scores));
  }
  Tensor<double> fused = object_scores + alpha * keypoint_scores;
  return extract_assignment(sinkhorn(fused, iterations));
}

}  // namespace rom
