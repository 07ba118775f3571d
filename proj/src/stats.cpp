#include "voxalign/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace voxalign::stats {

Alternative parse_alternative(const std::string& s) {
  if (s == "greater") return Alternative::greater;
  if (s == "less") return Alternative::less;
  if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
  throw Error("unknown alternative '" + s + "' (greater, less, two-sided)");
}

std::string to_string(Alternative a) {
  switch (a) {
    case Alternative::greater: return "greater";
    case Alternative::less: return "less";
    case Alternative::two_sided: return "two-sided";
  }
  return "?";
}

namespace {

// Continued fraction for I_x(a,b); converges for x < (a+1)/(a+b+2).
double beta_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 100000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete_beta: continued fraction did not converge");
}

// x^a (1-x)^b / (a B(a,b)) prefactor in log space.
double beta_front(double a, double b, double x) {
  return std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw Error("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  if (x < (a + 1.0) / (a + b + 2.0)) return beta_front(a, b, x) * beta_fraction(a, b, x) / a;
  return 1.0 - beta_front(a, b, x) * beta_fraction(b, a, 1.0 - x) / b;
}

namespace {

// P(T > |t|) for t finite.
double t_tail(double t, double df) {
  const double t2 = t * t;
  // For small |t| the complementary argument keeps precision.
  if (t2 < df) return 0.5 * (1.0 - incomplete_beta(0.5, 0.5 * df, t2 / (df + t2)));
  return 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t2));
}

}  // namespace

double student_t_cdf(double t, double df) {
  if (!(df > 0)) throw Error("student_t: df must be positive");
  if (std::isnan(t)) return std::nan("");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = t_tail(t, df);
  return t > 0 ? 1.0 - tail : tail;
}

double student_t_sf(double t, double df) {
  if (!(df > 0)) throw Error("student_t: df must be positive");
  if (std::isnan(t)) return std::nan("");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double tail = t_tail(t, df);
  return t > 0 ? tail : 1.0 - tail;
}

TestOutcome one_sample_ttest(std::span<const double> x, double mu, Alternative alt) {
  if (x.size() < 2) throw Error("t-test: need at least 2 samples");
  const auto n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) {
    if (!std::isfinite(v)) throw Error("t-test: non-finite sample");
    mean += v;
  }
  mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double diff = mean - mu;

  TestOutcome out;
  out.df = n - 1.0;
  out.alternative = alt;
  out.estimate = diff;
  const double scale = std::max({std::abs(mean), std::abs(mu), std::numeric_limits<double>::min()});
  if (!(sd > 1e-14 * scale)) {
    out.degenerate = true;
    if (std::abs(diff) <= 1e-14 * scale) {
      out.statistic = 0.0;
      out.p = 1.0;
    } else {
      out.statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      const bool up = diff > 0;
      out.p = alt == Alternative::greater ? (up ? 0.0 : 1.0) : alt == Alternative::less ? (up ? 1.0 : 0.0) : 0.0;
    }
    out.p_adj = out.p;
    return out;
  }
  out.statistic = diff / (sd / std::sqrt(n));
  switch (alt) {
    case Alternative::greater: out.p = student_t_sf(out.statistic, out.df); break;
    case Alternative::less: out.p = student_t_cdf(out.statistic, out.df); break;
    case Alternative::two_sided:
      out.p = std::min(1.0, 2.0 * student_t_sf(std::abs(out.statistic), out.df));
      break;
  }
  out.p_adj = out.p;
  return out;
}

TestOutcome paired_ttest(std::span<const double> a, std::span<const double> b, Alternative alt) {
  if (a.size() != b.size()) throw Error("paired t-test: samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return one_sample_ttest(std::span<const double>(d), 0.0, alt);
}

std::vector<double> fdr_bh(std::span<const double> p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw Error("fdr_bh: p-value outside [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    // p * m / m can round below p.
    const double scaled = std::max(p[order[r]], p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1));
    running = std::min(running, std::min(1.0, scaled));
    adj[order[r]] = running;
  }
  return adj;
}

std::vector<bool> significant_mask(std::span<const double> adjusted, double alpha) {
  std::vector<bool> out(adjusted.size());
  // Adjusted values sitting exactly on alpha pick up an ulp from p * m / j.
  const double limit = alpha * (1.0 + 1e-12);
  for (std::size_t i = 0; i < adjusted.size(); ++i) out[i] = adjusted[i] <= limit;
  return out;
}

void adjust_bh(std::vector<TestOutcome>& outcomes) {
  std::vector<double> p(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) p[i] = outcomes[i].p;
  const auto adj = fdr_bh(std::span<const double>(p));
  for (std::size_t i = 0; i < outcomes.size(); ++i) outcomes[i].p_adj = adj[i];
}

}  // namespace voxalign::stats
