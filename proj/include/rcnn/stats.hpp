#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcnn {

/// Paired outcome counts of two classifiers over the same stimuli.
/// n01: A wrong, B right. n10: A right, B wrong.
struct ContingencyPair {
  std::size_t n00 = 0;
  std::size_t n01 = 0;
  std::size_t n10 = 0;
  std::size_t n11 = 0;

  std::size_t total() const { return n00 + n01 + n10 + n11; }
};

ContingencyPair tabulate(const std::vector<std::uint8_t>& correct_a,
                         const std::vector<std::uint8_t>& correct_b);

/// Survival function of the chi-square distribution with one degree of
/// freedom, erfc(sqrt(x / 2)).
double chi2_sf_1df(double x);

struct McNemarResult {
  double chi2 = 0;
  double p = 1;
};

/// Continuity-corrected McNemar test. Throws StatsError when n01 + n10 = 0.
McNemarResult mcnemar(const ContingencyPair& pair);

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Benjamini-Hochberg step-up: flags (input order) of the rejected hypotheses.
std::vector<bool> fdr_bh(const std::vector<double>& pvalues, double q = 0.05);

struct PairComparison {
  std::size_t a = 0;
  std::size_t b = 0;
  ContingencyPair counts;
  std::optional<McNemarResult> test;  // empty: no discordant pairs
  bool significant = false;
};

struct ComparisonMatrix {
  std::vector<std::string> models;
  std::vector<PairComparison> pairs;  // (0,1), (0,2), ..., (M-2,M-1)
  double q = 0.05;

  const PairComparison& pair(std::size_t i, std::size_t j) const;
  bool significant(std::size_t i, std::size_t j) const;

  std::string csv() const;
  /// Square grid, '#' for a significant difference, '.' otherwise, '-' on
  /// the diagonal.
  std::string grid() const;
};

/// All pairwise tests with BH across the family. Pairs without discordant
/// stimuli enter the family with p = 1 and are never significant.
ComparisonMatrix compare_all(const std::vector<std::string>& models,
                             const std::vector<std::vector<std::uint8_t>>& correct, double q = 0.05);

}  // namespace rcnn
