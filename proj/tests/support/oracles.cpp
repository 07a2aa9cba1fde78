// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace prefedit::testing {

using subjective::RawRanking;
using subjective::RawRating;

OracleScores oracle_scores(const std::vector<RawRating>& ratings) {
  const std::size_t n = ratings.size();
  OracleScores out;
  out.flags.assign(n, false);

  // Outliers: compare every rating with the others in its cell.
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    int cnt = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (ratings[j].edited_id == ratings[i].edited_id && ratings[j].dimension == ratings[i].dimension) {
        sum += ratings[j].value;
        ++cnt;
      }
    if (cnt < 2) continue;
    const double mean = sum / cnt;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (ratings[j].edited_id == ratings[i].edited_id && ratings[j].dimension == ratings[i].dimension)
        ss += (ratings[j].value - mean) * (ratings[j].value - mean);
    const double sd = std::sqrt(ss / (cnt - 1));
    out.flags[i] = std::fabs(ratings[i].value - mean) > 2.0 * sd;
  }

  std::set<std::string> subjects;
  for (const auto& r : ratings) subjects.insert(r.annotator_id);
  for (const auto& s : subjects) {
    int total = 0, flagged = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (ratings[i].annotator_id == s) {
        ++total;
        flagged += out.flags[i];
      }
    // more than 5 % flagged, in exact integer arithmetic
    if (flagged * 100 > total * 5) out.removed.insert(s);
  }

  auto kept = [&](std::size_t i) { return !out.flags[i] && !out.removed.count(ratings[i].annotator_id); };

  std::vector<double> z(n, 0.0);
  for (const auto& s : subjects) {
    if (out.removed.count(s)) continue;
    double sum = 0.0;
    int cnt = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (kept(i) && ratings[i].annotator_id == s) {
        sum += ratings[i].value;
        ++cnt;
      }
    if (cnt < 2) continue;
    const double mu = sum / cnt;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (kept(i) && ratings[i].annotator_id == s) ss += (ratings[i].value - mu) * (ratings[i].value - mu);
    const double sigma = std::sqrt(ss / (cnt - 1));
    if (sigma == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      if (kept(i) && ratings[i].annotator_id == s) z[i] = (ratings[i].value - mu) / sigma;
  }

  std::map<std::pair<std::string, Dimension>, std::pair<double, int>> acc;
  for (std::size_t i = 0; i < n; ++i)
    if (kept(i)) {
      auto& a = acc[{ratings[i].edited_id, ratings[i].dimension}];
      a.first += z[i];
      a.second += 1;
    }
  for (const auto& [key, a] : acc) out.mos[key] = 100.0 * (a.first / a.second + 3.0) / 6.0;
  return out;
}

double kendall_w_from_spearman(const std::vector<std::vector<std::string>>& orders) {
  const std::size_t k = orders.size();
  const std::size_t m = orders.front().size();
  auto pos = [](const std::vector<std::string>& o, const std::string& id) {
    return static_cast<double>(std::find(o.begin(), o.end(), id) - o.begin());
  };
  double total = 0.0;
  int n_pairs = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      double d2 = 0.0;
      for (const auto& id : orders[a]) {
        const double d = pos(orders[a], id) - pos(orders[b], id);
        d2 += d * d;
      }
      const double md = static_cast<double>(m);
      total += 1.0 - 6.0 * d2 / (md * (md * md - 1.0));
      ++n_pairs;
    }
  const double rho_bar = total / n_pairs;
  const double kd = static_cast<double>(k);
  return ((kd - 1.0) * rho_bar + 1.0) / kd;
}

OracleRankings oracle_rankings(const std::vector<RawRanking>& rankings) {
  OracleRankings out;
  std::map<std::pair<std::string, Dimension>, std::vector<const RawRanking*>> groups;
  for (const auto& r : rankings) groups[{r.group_id, r.dimension}].push_back(&r);

  for (const auto& [key, rs] : groups) {
    const auto& members = rs.front()->order;
    const double k = static_cast<double>(rs.size());
    std::map<std::string, double> sum;
    for (const auto& id : members)
      for (const auto* r : rs)
        sum[id] += static_cast<double>(std::find(r->order.begin(), r->order.end(), id) - r->order.begin() + 1);
    auto& avg = out.avg_rank[key];
    for (const auto& [id, s] : sum) avg[id] = s / k;

    if (rs.size() >= 2 && members.size() >= 2) {
      std::vector<std::vector<std::string>> orders;
      for (const auto* r : rs) orders.push_back(r->order);
      out.concordance[key] = kendall_w_from_spearman(orders);
    }
    // integer sums keep the tie test exact
    for (const auto& a : members)
      for (const auto& b : members) {
        if (a == b || !(sum[a] < sum[b])) continue;
        out.pairs[{key.first, key.second, a, b}] = (sum[b] - sum[a]) / k;
      }
  }
  return out;
}

double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    int less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1.0 + less + (equal - 1) / 2.0;
  }
  return r;
}

double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

double central_difference(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                          std::size_t k, double h) {
  const double orig = x[k];
  x[k] = orig + h;
  const double up = f(x);
  x[k] = orig - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

double relative_error(double analytic, double numeric, double floor) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

}  // namespace prefedit::testing
