#include "rcnn/stats.hpp"

#include "rcnn/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace rcnn {

ContingencyPair tabulate(const std::vector<std::uint8_t>& correct_a,
                         const std::vector<std::uint8_t>& correct_b) {
  if (correct_a.size() != correct_b.size()) {
    throw StatsError("correctness vectors differ in length (" + std::to_string(correct_a.size()) +
                     " vs " + std::to_string(correct_b.size()) + ")");
  }
  ContingencyPair c;
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    const bool a = correct_a[i] != 0;
    const bool b = correct_b[i] != 0;
    if (a && b) {
      ++c.n11;
    } else if (a) {
      ++c.n10;
    } else if (b) {
      ++c.n01;
    } else {
      ++c.n00;
    }
  }
  return c;
}

double chi2_sf_1df(double x) {
  if (!(x >= 0)) throw std::invalid_argument("chi2_sf_1df: x must be >= 0");
  return std::erfc(std::sqrt(x / 2));
}

McNemarResult mcnemar(const ContingencyPair& pair) {
  const double discordant = double(pair.n01) + double(pair.n10);
  if (discordant == 0) throw StatsError("no discordant pairs");
  const double d = std::max(std::abs(double(pair.n01) - double(pair.n10)) - 1.0, 0.0);
  McNemarResult r;
  r.chi2 = d * d / discordant;
  r.p = chi2_sf_1df(r.chi2);
  return r;
}

std::vector<bool> fdr_bh(const std::vector<double>& pvalues, double q) {
  for (double p : pvalues) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("fdr_bh: p-value outside [0, 1]");
  }
  const std::size_t m = pvalues.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvalues[a] < pvalues[b]; });
  std::size_t k = 0;
  for (std::size_t i = m; i > 0; --i) {
    if (pvalues[order[i - 1]] <= double(i) / double(m) * q) {
      k = i;
      break;
    }
  }
  std::vector<bool> reject(m, false);
  for (std::size_t i = 0; i < k; ++i) reject[order[i]] = true;
  return reject;
}

const PairComparison& ComparisonMatrix::pair(std::size_t i, std::size_t j) const {
  if (i == j || i >= models.size() || j >= models.size()) throw std::out_of_range("no such model pair");
  if (i > j) std::swap(i, j);
  const std::size_t m = models.size();
  // Row-major index into the upper triangle.
  return pairs[i * (2 * m - i - 1) / 2 + (j - i - 1)];
}

bool ComparisonMatrix::significant(std::size_t i, std::size_t j) const { return pair(i, j).significant; }

std::string ComparisonMatrix::csv() const {
  std::ostringstream out;
  out << "modelA,modelB,n01,n10,chi2,p,significant\n";
  for (const PairComparison& c : pairs) {
    out << models[c.a] << ',' << models[c.b] << ',' << c.counts.n01 << ',' << c.counts.n10 << ',';
    if (c.test) {
      out << format_number(c.test->chi2) << ',' << format_number(c.test->p);
    } else {
      out << "NA,NA";
    }
    out << ',' << (c.significant ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string ComparisonMatrix::grid() const {
  std::size_t width = 1;
  for (const auto& m : models) width = std::max(width, m.size());
  std::ostringstream out;
  out << std::string(width, ' ');
  for (const auto& m : models) out << ' ' << m << std::string(width - m.size(), ' ');
  out << '\n';
  for (std::size_t i = 0; i < models.size(); ++i) {
    out << models[i] << std::string(width - models[i].size(), ' ');
    for (std::size_t j = 0; j < models.size(); ++j) {
      const char mark = i == j ? '-' : (significant(i, j) ? '#' : '.');
      out << ' ' << mark << std::string(width - 1, ' ');
    }
    out << '\n';
  }
  return out.str();
}

ComparisonMatrix compare_all(const std::vector<std::string>& models,
                             const std::vector<std::vector<std::uint8_t>>& correct, double q) {
  if (models.size() != correct.size()) throw std::invalid_argument("compare_all: one name per vector");
  if (models.size() < 2) throw std::invalid_argument("compare_all: need at least two models");
  ComparisonMatrix r;
  r.models = models;
  r.q = q;
  std::vector<double> p;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      PairComparison c;
      c.a = i;
      c.b = j;
      c.counts = tabulate(correct[i], correct[j]);
      if (c.counts.n01 + c.counts.n10 > 0) c.test = mcnemar(c.counts);
      p.push_back(c.test ? c.test->p : 1.0);
      r.pairs.push_back(c);
    }
  const std::vector<bool> flags = fdr_bh(p, q);
  for (std::size_t k = 0; k < r.pairs.size(); ++k) r.pairs[k].significant = flags[k] && r.pairs[k].test;
  return r;
}

}  // namespace rcnn
