#pragma once

#include "voxalign/datamodel.hpp"

#include <span>
#include <string>
#include <vector>

namespace voxalign::stats {

enum class Alternative { greater, less, two_sided };

Alternative parse_alternative(const std::string& s);
std::string to_string(Alternative a);

struct TestOutcome {
  double statistic = 0.0;  // t
  double p = 1.0;
  double p_adj = 1.0;      // filled by adjust_bh
  double df = 0.0;
  Alternative alternative = Alternative::greater;
  double estimate = 0.0;   // mean (difference)
  bool degenerate = false; // zero spread; p follows the limit convention
};

/// Regularized incomplete beta I_x(a, b), continued fraction (modified Lentz).
double incomplete_beta(double a, double b, double x);

/// Student-t distribution with df degrees of freedom.
double student_t_cdf(double t, double df);
double student_t_sf(double t, double df);

/// t-test of mean(x) against mu; df = n - 1. With zero spread the statistic
/// is +-inf (or 0 when the mean equals mu) and p takes its limiting value.
TestOutcome one_sample_ttest(std::span<const double> x, double mu = 0.0, Alternative alt = Alternative::greater);

/// One-sample test on a - b.
TestOutcome paired_ttest(std::span<const double> a, std::span<const double> b,
                         Alternative alt = Alternative::greater);

/// Benjamini-Hochberg adjusted p-values, returned in input order.
std::vector<double> fdr_bh(std::span<const double> p);

/// adjusted <= alpha.
std::vector<bool> significant_mask(std::span<const double> adjusted, double alpha = 0.05);

/// Sets p_adj on every outcome from one joint BH correction.
void adjust_bh(std::vector<TestOutcome>& outcomes);

}  // namespace voxalign::stats
