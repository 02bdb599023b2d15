#pragma once

// Independent reference computations for tests. Each one is written as a
// plain loop over the definition, sharing no code with the library routine
// it checks.

#include <rom/evalkit.hpp>
#include <rom/scenegen.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <vector>

namespace rom::oracle {

inline Tensor<double> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  }
  return m;
}

/// Best partial assignment on a dustbin-augmented matrix by enumeration.
/// A plan with K matches scores sum(S_ij over matches) plus the dustbin
/// entries it must fill: unmatched rows and columns, and K units in the
/// corner. Returns the sorted match list; `unique` is false if another plan
/// ties the optimum within 1e-9.
struct BruteForceResult {
  std::vector<Match> matches;
  bool unique = true;
};

inline BruteForceResult brute_force_assignment(const Tensor<double>& augmented) {
  const int m = static_cast<int>(augmented.rows()) - 1;
  const int n = static_cast<int>(augmented.cols()) - 1;
  double best = -1e300;
  int best_count = 0;
  std::vector<Match> best_plan;
  std::vector<Match> plan;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::function<void(int)> rec = [&](int i) {
    if (i == m) {
      double value = 0.0;
      std::vector<bool> row_matched(static_cast<std::size_t>(m), false);
      std::vector<bool> col_matched(static_cast<std::size_t>(n), false);
      for (auto [a, b] : plan) {
        value += augmented(a, b);
        row_matched[static_cast<std::size_t>(a)] = true;
        col_matched[static_cast<std::size_t>(b)] = true;
      }
      for (int a = 0; a < m; ++a) {
        if (!row_matched[static_cast<std::size_t>(a)]) value += augmented(a, n);
      }
      for (int b = 0; b < n; ++b) {
        if (!col_matched[static_cast<std::size_t>(b)]) value += augmented(m, b);
      }
      value += static_cast<double>(plan.size()) * augmented(m, n);
      if (value > best + 1e-9) {
        best = value;
        best_plan = plan;
        best_count = 1;
      } else if (std::abs(value - best) <= 1e-9) {
        ++best_count;
      }
      return;
    }
    rec(i + 1);  // row i unmatched
    for (int j = 0; j < n; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      plan.emplace_back(i, j);
      rec(i + 1);
      plan.pop_back();
      used[static_cast<std::size_t>(j)] = false;
    }
  };
  rec(0);
  std::sort(best_plan.begin(), best_plan.end());
  return {best_plan, best_count == 1};
}

/// P/R/F1 straight from the definitions, one mode at a time.
struct NaiveScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline NaiveScores naive_metrics(const std::vector<std::vector<Match>>& pred, const std::vector<std::vector<Match>>& gt,
                                 bool frame_wise) {
  auto f1 = [](double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); };
  auto correct = [](const std::vector<Match>& p, const std::vector<Match>& g) {
    long c = 0;
    for (const Match& a : p) {
      for (const Match& b : g) {
        if (a == b) ++c;
      }
    }
    return c;
  };
  NaiveScores s;
  if (!frame_wise) {
    long c = 0, np = 0, ng = 0;
    for (std::size_t k = 0; k < gt.size(); ++k) {
      c += correct(pred[k], gt[k]);
      np += static_cast<long>(pred[k].size());
      ng += static_cast<long>(gt[k].size());
    }
    s.precision = np == 0 ? 0.0 : double(c) / double(np);
    s.recall = ng == 0 ? 0.0 : double(c) / double(ng);
    s.f1 = f1(s.precision, s.recall);
    return s;
  }
  std::vector<double> ps, rs, fs;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const double c = double(correct(pred[k], gt[k]));
    const double p = pred[k].empty() ? 0.0 : c / double(pred[k].size());
    const double r = gt[k].empty() ? 0.0 : c / double(gt[k].size());
    if (!pred[k].empty()) ps.push_back(p);
    if (!gt[k].empty()) rs.push_back(r);
    if (!pred[k].empty() || !gt[k].empty()) fs.push_back(f1(p, r));
  }
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return v.empty() ? 0.0 : t / double(v.size());
  };
  s.precision = mean(ps);
  s.recall = mean(rs);
  s.f1 = mean(fs);
  return s;
}

/// Mean, median and threshold rates of a list of errors by direct counting.
struct NaiveErrors {
  double mean = 0.0;
  double median = 0.0;
  double half = 0.0;
  double one = 0.0;
};

inline NaiveErrors naive_errors(std::vector<double> e) {
  NaiveErrors r;
  if (e.empty()) return r;
  double total = 0.0;
  int half = 0, one = 0;
  for (double x : e) {
    total += x;
    if (x <= 0.5) ++half;
    if (x <= 1.0) ++one;
  }
  r.mean = total / double(e.size());
  r.half = double(half) / double(e.size());
  r.one = double(one) / double(e.size());
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  r.median = n % 2 ? e[n / 2] : (e[n / 2 - 1] + e[n / 2]) / 2.0;
  return r;
}

/// Pinhole back-projection written out in scalar form.
inline Eigen::Vector3d naive_back_project(const Camera& c, double u_norm, double v_norm, double distance) {
  const double x = (u_norm * c.width - c.cx) / c.focal;
  const double y = (v_norm * c.height - c.cy) / c.focal;
  const double len = std::sqrt(x * x + y * y + 1.0);
  const double pc[3] = {x / len * distance, y / len * distance, distance / len};
  Eigen::Vector3d w;
  for (int r = 0; r < 3; ++r) {
    double acc = 0.0;
    for (int k = 0; k < 3; ++k) acc += c.rotation(k, r) * (pc[k] - c.translation(k));
    w(r) = acc;
  }
  return w;
}

}  // namespace rom::oracle
