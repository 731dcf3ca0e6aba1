#include "aarchive/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "aarchive/errors.hpp"

namespace aarchive {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp01(double p) { return std::min(1.0, std::max(0.0, p)); }

double vec_mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Central moment sum of order k around mu (not normalized).
double central_sum(const std::vector<double>& x, double mu, int k) {
  double s = 0.0;
  for (double v : x) s += std::pow(v - mu, k);
  return s;
}

double sample_variance(const std::vector<double>& x) {
  const double mu = vec_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  return s / static_cast<double>(x.size() - 1);
}

double sample_covariance(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = vec_mean(x), my = vec_mean(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size() - 1);
}

/// Midranks (1-based, ties averaged).
std::vector<double> rank_average(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Sum of t^3 - t over tie groups of a sorted vector.
double tie_term(std::vector<double> sorted) {
  double t = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double g = static_cast<double>(j - i + 1);
    t += g * g * g - g;
    i = j + 1;
  }
  return t;
}

double tail_p_from_t(double t, double df, Alternative alt) {
  switch (alt) {
    case Alternative::TwoSided:
      return clamp01(2.0 * student_t_sf(std::abs(t), df));
    case Alternative::Greater:
      return student_t_sf(t, df);
    case Alternative::Less:
      return 1.0 - student_t_sf(t, df);
  }
  throw ConfigError("invalid alternative");
}

std::pair<double, double> one_sample_t(const std::vector<double>& d, Alternative alt) {
  const auto n = static_cast<double>(d.size());
  const double mu = vec_mean(d);
  const double var = sample_variance(d);
  if (var == 0.0) throw DomainError("t-test on a zero-variance sample");
  const double t = mu / std::sqrt(var / n);
  return {t, tail_p_from_t(t, n - 1.0, alt)};
}

void require_group_sizes(const std::vector<double>& a, const std::vector<double>& b,
                         std::size_t min_n) {
  if (a.size() < min_n || b.size() < min_n)
    throw DomainError("group too small: need at least " + std::to_string(min_n) +
                      " samples per group");
}

/// scipy-style symmetric trimming: drop int(trim * n) values from each end
/// of the sorted sample.
std::vector<double> trim_both(std::vector<double> x, double trim) {
  std::sort(x.begin(), x.end());
  const auto cut = static_cast<std::size_t>(trim * static_cast<double>(x.size()));
  if (2 * cut >= x.size()) throw DomainError("trimming removes the whole sample");
  return std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(cut),
                             x.end() - static_cast<std::ptrdiff_t>(cut));
}

/// Survival function of the limiting Kolmogorov distribution. The two
/// regimes follow the classical series pair: a Jacobi-theta form of the CDF
/// below 1.08, the alternating tail series above.
double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.08) {
    const double w = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
    double cdf = 0.0;
    for (int k = 1; k <= 64; k += 2) {
      const double term = std::exp(-w * static_cast<double>(k) * static_cast<double>(k));
      cdf += term;
      if (term < 1e-18 * cdf) break;
    }
    cdf *= std::sqrt(2.0 * std::numbers::pi) / x;
    return clamp01(1.0 - cdf);
  }
  double sf = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 64; ++k) {
    const double term = std::exp(-2.0 * x * x * static_cast<double>(k) * static_cast<double>(k));
    sf += sign * term;
    if (term < 1e-18) break;
    sign = -sign;
  }
  return clamp01(2.0 * sf);
}

}  // namespace

const char* to_string(Alternative alt) {
  switch (alt) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Greater: return "greater";
    case Alternative::Less: return "less";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Distributions.
// ---------------------------------------------------------------------------

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("normal quantile defined on (0, 1)");
  // Acklam's rational approximation, then two Halley refinements against
  // erfc-based tails for full double precision.
  static const double A[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double B[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double C[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double D[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  double x;
  if (q < p_low) {
    const double r = std::sqrt(-2.0 * std::log(q));
    x = (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5]) /
        ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0);
  } else if (q <= 1.0 - p_low) {
    const double u = q - 0.5;
    const double r = u * u;
    x = (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u /
        (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0);
  } else {
    const double r = std::sqrt(-2.0 * std::log1p(-q));
    x = -(((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5]) /
        ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    const double err = (q < 0.5) ? normal_cdf(x) - q : (1.0 - q) - normal_sf(x);
    const double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete beta needs a, b > 0");
  if (std::isnan(x)) throw DomainError("incomplete beta of NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);

  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  // Modified Lentz continued fraction.
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 400; ++m) {
    const double dm = static_cast<double>(m);
    const double m2 = 2.0 * dm;
    double num = dm * (b - dm) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + dm) * (a + b + dm) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 3e-16) break;
  }
  return std::exp(ln_front) * h / a;
}

double student_t_sf(double t, double df) {
  if (!(df > 0.0)) throw DomainError("t distribution needs df > 0");
  if (std::isnan(t)) return kNan;
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double half = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? half : 1.0 - half;
}

double f_dist_sf(double f, double d1, double d2) {
  if (!(d1 > 0.0) || !(d2 > 0.0)) throw DomainError("F distribution needs positive dof");
  if (std::isnan(f)) return kNan;
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

// ---------------------------------------------------------------------------
// Moments.
// ---------------------------------------------------------------------------

double skewness(const std::vector<double>& x) {
  if (x.size() < 2) throw DomainError("skewness needs at least two samples");
  const auto n = static_cast<double>(x.size());
  const double mu = vec_mean(x);
  const double m2 = central_sum(x, mu, 2) / n;
  if (m2 == 0.0) throw DomainError("skewness of a constant sample");
  const double m3 = central_sum(x, mu, 3) / n;
  return m3 / std::pow(m2, 1.5);
}

double excess_kurtosis(const std::vector<double>& x) {
  if (x.size() < 2) throw DomainError("kurtosis needs at least two samples");
  const auto n = static_cast<double>(x.size());
  const double mu = vec_mean(x);
  const double m2 = central_sum(x, mu, 2) / n;
  if (m2 == 0.0) throw DomainError("kurtosis of a constant sample");
  const double m4 = central_sum(x, mu, 4) / n;
  return m4 / (m2 * m2) - 3.0;
}

// ---------------------------------------------------------------------------
// Normality.
// ---------------------------------------------------------------------------

double normality_test(const std::vector<double>& x) {
  const auto sz = x.size();
  if (sz < 20) throw DomainError("normality test needs at least 20 samples");
  const auto n = static_cast<double>(sz);

  // Transformed skewness z-score.
  const double g1 = skewness(x);
  double y = g1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
  const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                       ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
  const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  const double alpha = std::sqrt(2.0 / (w2 - 1.0));
  if (y == 0.0) y = 1.0;
  const double zs = delta * std::log(y / alpha + std::sqrt((y / alpha) * (y / alpha) + 1.0));

  // Transformed kurtosis z-score.
  const double b2 = excess_kurtosis(x) + 3.0;
  const double eb2 = 3.0 * (n - 1.0) / (n + 1.0);
  const double vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) /
                     ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
  const double xk = (b2 - eb2) / std::sqrt(vb2);
  const double sqrt_b1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                         std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
  const double aa = 6.0 + 8.0 / sqrt_b1 *
                              (2.0 / sqrt_b1 + std::sqrt(1.0 + 4.0 / (sqrt_b1 * sqrt_b1)));
  const double term1 = 1.0 - 2.0 / (9.0 * aa);
  const double denom = 1.0 + xk * std::sqrt(2.0 / (aa - 4.0));
  const double term2 = std::cbrt((1.0 - 2.0 / aa) / denom);
  const double zk = (term1 - term2) / std::sqrt(2.0 / (9.0 * aa));

  const double k2 = zs * zs + zk * zk;
  return clamp01(std::exp(-0.5 * k2));  // chi-squared survival, 2 dof
}

// ---------------------------------------------------------------------------
// Location tests.
// ---------------------------------------------------------------------------

std::pair<double, double> t_test_equal_var(const std::vector<double>& a,
                                           const std::vector<double>& b, Alternative alt) {
  require_group_sizes(a, b, 2);
  const auto n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double v1 = sample_variance(a), v2 = sample_variance(b);
  const double sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
  if (sp2 == 0.0) throw DomainError("t-test on zero-variance groups");
  const double t = (vec_mean(a) - vec_mean(b)) / std::sqrt(sp2 * (1.0 / n1 + 1.0 / n2));
  return {t, tail_p_from_t(t, n1 + n2 - 2.0, alt)};
}

std::pair<double, double> t_test_welch(const std::vector<double>& a,
                                       const std::vector<double>& b, Alternative alt) {
  require_group_sizes(a, b, 2);
  const auto n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double w1 = sample_variance(a) / n1, w2 = sample_variance(b) / n2;
  if (w1 + w2 == 0.0) throw DomainError("t-test on zero-variance groups");
  const double t = (vec_mean(a) - vec_mean(b)) / std::sqrt(w1 + w2);
  const double df = (w1 + w2) * (w1 + w2) /
                    (w1 * w1 / (n1 - 1.0) + w2 * w2 / (n2 - 1.0));
  return {t, tail_p_from_t(t, df, alt)};
}

std::pair<double, double> t_test_paired(const std::vector<double>& a,
                                        const std::vector<double>& b, Alternative alt) {
  require_group_sizes(a, b, 2);
  if (a.size() != b.size()) throw DomainError("paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return one_sample_t(d, alt);
}

std::pair<double, double> mann_whitney_u(const std::vector<double>& a,
                                         const std::vector<double>& b, Alternative alt) {
  if (a.empty() || b.empty()) throw DomainError("Mann-Whitney U needs non-empty groups");
  const auto n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;

  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = rank_average(pooled);
  double r1 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r1 += ranks[i];

  const double u1 = r1 - n1 * (n1 + 1.0) / 2.0;
  const double u2 = n1 * n2 - u1;
  const double mu = n1 * n2 / 2.0;
  std::sort(pooled.begin(), pooled.end());
  const double ties = tie_term(std::move(pooled));
  const double s2 = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  if (s2 <= 0.0) throw DomainError("Mann-Whitney U degenerate: all values tied");
  const double s = std::sqrt(s2);

  double p;
  switch (alt) {
    case Alternative::TwoSided:
      p = clamp01(2.0 * normal_sf((std::max(u1, u2) - mu - 0.5) / s));
      break;
    case Alternative::Greater:
      p = normal_sf((u1 - mu - 0.5) / s);
      break;
    case Alternative::Less:
      p = normal_sf((u2 - mu - 0.5) / s);
      break;
    default:
      throw ConfigError("invalid alternative");
  }
  return {u1, p};
}

std::pair<double, double> wilcoxon_signed_rank(const std::vector<double>& a,
                                               const std::vector<double>& b,
                                               Alternative alt) {
  if (a.size() != b.size()) throw DomainError("paired samples differ in length");
  std::vector<double> d;
  d.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double di = a[i] - b[i];
    if (di != 0.0) d.push_back(di);
  }
  if (d.empty()) throw DomainError("signed-rank test degenerate: all differences zero");
  const auto n = static_cast<double>(d.size());

  std::vector<double> mags(d.size());
  std::transform(d.begin(), d.end(), mags.begin(), [](double v) { return std::abs(v); });
  const auto ranks = rank_average(mags);
  double r_plus = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.0) r_plus += ranks[i];
  const double r_minus = n * (n + 1.0) / 2.0 - r_plus;

  const double mn = n * (n + 1.0) / 4.0;
  std::sort(mags.begin(), mags.end());
  const double se2 = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term(std::move(mags)) / 48.0;
  if (se2 <= 0.0) throw DomainError("signed-rank test degenerate: all magnitudes tied");
  const double se = std::sqrt(se2);

  double stat, p;
  switch (alt) {
    case Alternative::TwoSided: {
      const double cc = 0.5 * ((r_plus > mn) - (r_plus < mn));
      p = clamp01(2.0 * normal_sf(std::abs((r_plus - mn - cc) / se)));
      stat = std::min(r_plus, r_minus);
      break;
    }
    case Alternative::Greater:
      p = normal_sf((r_plus - mn - 0.5) / se);
      stat = r_plus;
      break;
    case Alternative::Less:
      p = normal_cdf((r_plus - mn + 0.5) / se);
      stat = r_plus;
      break;
    default:
      throw ConfigError("invalid alternative");
  }
  return {stat, p};
}

// ---------------------------------------------------------------------------
// Variance tests.
// ---------------------------------------------------------------------------

std::pair<double, double> f_test_variance(const std::vector<double>& a,
                                          const std::vector<double>& b) {
  require_group_sizes(a, b, 2);
  const double va = sample_variance(a), vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0) throw DomainError("F-test on constant groups");
  const double f = vb == 0.0 ? kInf : va / vb;
  const double sf = f_dist_sf(f, static_cast<double>(a.size() - 1),
                              static_cast<double>(b.size() - 1));
  return {f, clamp01(2.0 * std::min(sf, 1.0 - sf))};
}

std::pair<double, double> levene_test(const std::vector<double>& a,
                                      const std::vector<double>& b, LeveneCenter center,
                                      double trim) {
  require_group_sizes(a, b, 2);
  std::vector<std::vector<double>> groups{a, b};
  if (center == LeveneCenter::Trimmed) {
    for (auto& g : groups) g = trim_both(std::move(g), trim);
  }

  std::vector<std::vector<double>> z(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    auto& g = groups[gi];
    double c;
    if (center == LeveneCenter::Median) {
      std::sort(g.begin(), g.end());
      const std::size_t m = g.size() / 2;
      c = g.size() % 2 ? g[m] : 0.5 * (g[m - 1] + g[m]);
    } else {
      c = vec_mean(g);
    }
    z[gi].resize(g.size());
    std::transform(g.begin(), g.end(), z[gi].begin(),
                   [c](double v) { return std::abs(v - c); });
  }

  const double k = static_cast<double>(z.size());
  double n_total = 0.0, grand_sum = 0.0;
  for (const auto& zi : z) {
    n_total += static_cast<double>(zi.size());
    grand_sum = std::accumulate(zi.begin(), zi.end(), grand_sum);
  }
  const double grand = grand_sum / n_total;

  double between = 0.0, within = 0.0;
  for (const auto& zi : z) {
    const double zm = vec_mean(zi);
    between += static_cast<double>(zi.size()) * (zm - grand) * (zm - grand);
    within += central_sum(zi, zm, 2);
  }
  const double num = (n_total - k) / (k - 1.0) * between;
  if (within == 0.0) {
    if (num == 0.0) throw DomainError("Levene statistic degenerate: no spread");
    return {kInf, 0.0};
  }
  const double w = num / within;
  return {w, f_dist_sf(w, k - 1.0, n_total - k)};
}

std::pair<std::string, double> variance_test_auto(const std::vector<double>& a,
                                                  const std::vector<double>& b,
                                                  double sensitivity) {
  require_group_sizes(a, b, 2);
  const double va = sample_variance(a), vb = sample_variance(b);
  if (va == 0.0 && vb == 0.0) throw DomainError("variance test on two constant groups");

  bool normal = false;
  if (a.size() >= 20 && b.size() >= 20) {
    try {
      normal = normality_test(a) > sensitivity && normality_test(b) > sensitivity;
    } catch (const DomainError&) {
      normal = false;
    }
  }
  if (normal) return {"F-test", f_test_variance(a, b).second};

  double max_kurt = -kInf, max_abs_skew = 0.0;
  for (const auto* g : {&a, &b}) {
    if (sample_variance(*g) == 0.0) continue;
    max_kurt = std::max(max_kurt, excess_kurtosis(*g));
    max_abs_skew = std::max(max_abs_skew, std::abs(skewness(*g)));
  }
  if (max_kurt > 3.0)
    return {"trimmed Brown-Forsythe", levene_test(a, b, LeveneCenter::Trimmed, 0.1).second};
  if (max_abs_skew > 1.0)
    return {"Brown-Forsythe", levene_test(a, b, LeveneCenter::Median).second};
  return {"Levene", levene_test(a, b, LeveneCenter::Mean).second};
}

// ---------------------------------------------------------------------------
// Decision tree.
// ---------------------------------------------------------------------------

double TestReport::p() const { return p_values.at(chosen_mean_test); }

TestReport ttest_with_auto_checks(const std::vector<double>& a, const std::vector<double>& b,
                                  bool paired, Alternative alt, double sensitivity,
                                  bool include_f) {
  require_group_sizes(a, b, 2);
  if (paired && a.size() != b.size()) throw DomainError("paired samples differ in length");

  TestReport rep;
  rep.alternative = alt;

  const auto attach_variance = [&]() {
    if (rep.chosen_variance_test) return;
    try {
      auto [vname, vp] = variance_test_auto(a, b, sensitivity);
      rep.chosen_variance_test = vname;
      rep.p_values[vname] = vp;
    } catch (const DomainError& e) {
      rep.notes.push_back(std::string("variance test unavailable: ") + e.what());
    }
  };

  if (paired) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];

    if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) {
      rep.chosen_mean_test = "Wilcoxon signed-rank";
      rep.p_values[rep.chosen_mean_test] = 1.0;
      rep.notes.push_back("all paired differences are zero; no evidence of a shift");
      if (include_f) attach_variance();
      return rep;
    }

    bool normal = false;
    if (d.size() >= 20) {
      try {
        const double pd = normality_test(d);
        rep.normality_p = {pd};
        rep.p_values["normality (differences)"] = pd;
        normal = pd > sensitivity;
      } catch (const DomainError&) {
        rep.notes.push_back("normality of differences degenerate; using non-parametric test");
      }
    } else {
      rep.notes.push_back(
          "sample too small for a reliable normality assessment; using non-parametric test");
    }

    if (normal) {
      rep.chosen_mean_test = "paired t-test";
      rep.p_values[rep.chosen_mean_test] = t_test_paired(a, b, alt).second;
    } else {
      rep.chosen_mean_test = "Wilcoxon signed-rank";
      rep.p_values[rep.chosen_mean_test] = wilcoxon_signed_rank(a, b, alt).second;
    }
    if (include_f) attach_variance();
    return rep;
  }

  bool normal = false;
  if (a.size() >= 20 && b.size() >= 20) {
    try {
      const double pa = normality_test(a);
      const double pb = normality_test(b);
      rep.normality_p = {pa, pb};
      rep.p_values["normality (group 1)"] = pa;
      rep.p_values["normality (group 2)"] = pb;
      normal = pa > sensitivity && pb > sensitivity;
    } catch (const DomainError&) {
      rep.notes.push_back("normality assessment degenerate; using non-parametric test");
    }
  } else {
    rep.notes.push_back(
        "sample too small for a reliable normality assessment; using non-parametric test");
  }

  if (normal) {
    attach_variance();
    const bool equal_var =
        rep.chosen_variance_test && rep.p_values[*rep.chosen_variance_test] > sensitivity;
    if (equal_var) {
      rep.chosen_mean_test = "t-test";
      rep.p_values[rep.chosen_mean_test] = t_test_equal_var(a, b, alt).second;
    } else {
      rep.chosen_mean_test = "Welch's t-test";
      rep.p_values[rep.chosen_mean_test] = t_test_welch(a, b, alt).second;
    }
  } else {
    rep.chosen_mean_test = "Mann-Whitney U";
    rep.p_values[rep.chosen_mean_test] = mann_whitney_u(a, b, alt).second;
    if (include_f) attach_variance();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Agreement.
// ---------------------------------------------------------------------------

double occc(const Eigen::MatrixXd& raters) {
  const auto n = raters.rows();
  const auto j_count = raters.cols();
  if (n < 2 || j_count < 2) throw DomainError("OCCC needs at least 2 subjects and 2 raters");
  if (!raters.allFinite()) throw DomainError("OCCC input has missing entries");

  const Eigen::RowVectorXd mu = raters.colwise().mean();
  const Eigen::MatrixXd centered = raters.rowwise() - mu;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);

  double num = 0.0, den = 0.0;
  for (Eigen::Index j = 0; j < j_count; ++j) {
    for (Eigen::Index k = j + 1; k < j_count; ++k) {
      num += 2.0 * cov(j, k);
      const double dmu = mu(j) - mu(k);
      den += cov(j, j) + cov(k, k) + dmu * dmu;
    }
  }
  if (den == 0.0) throw DomainError("OCCC undefined: zero variances and equal means");
  return num / den;
}

double icc(const Eigen::MatrixXd& raters, const std::string& form) {
  if (form != "ICC(2,1)")
    throw UnsupportedError("ICC form not implemented: " + form);
  const auto n = static_cast<double>(raters.rows());
  const auto j_count = static_cast<double>(raters.cols());
  if (raters.rows() < 2 || raters.cols() < 2)
    throw DomainError("ICC needs at least 2 subjects and 2 raters");
  if (!raters.allFinite()) throw DomainError("ICC input has missing entries");

  const double grand = raters.mean();
  const Eigen::VectorXd row_mean = raters.rowwise().mean();
  const Eigen::RowVectorXd col_mean = raters.colwise().mean();

  const double msr =
      j_count * (row_mean.array() - grand).square().sum() / (n - 1.0);
  const double msc =
      n * (col_mean.array() - grand).square().sum() / (j_count - 1.0);
  const Eigen::MatrixXd resid = ((raters.colwise() - row_mean).rowwise() - col_mean).array() + grand;
  const double mse = resid.array().square().sum() / ((n - 1.0) * (j_count - 1.0));

  const double den = msr + (j_count - 1.0) * mse + j_count * (msc - mse) / n;
  if (den == 0.0) throw DomainError("ICC undefined: degenerate ANOVA decomposition");
  return (msr - mse) / den;
}

// ---------------------------------------------------------------------------
// ROC.
// ---------------------------------------------------------------------------

void RocData::validate() const {
  if (scores.size() != truth.size()) throw DomainError("scores and truth differ in length");
  if (scores.empty()) throw DomainError("empty ROC data");
  const bool has_pos = std::any_of(truth.begin(), truth.end(), [](int t) { return t != 0; });
  const bool has_neg = std::any_of(truth.begin(), truth.end(), [](int t) { return t == 0; });
  if (!has_pos || !has_neg) throw DomainError("ROC data needs both classes present");
}

namespace {

struct DelongComponents {
  double auc = 0.0;
  std::vector<double> v10;  // one per positive sample
  std::vector<double> v01;  // one per negative sample
};

DelongComponents delong_components(const RocData& r) {
  r.validate();
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < r.scores.size(); ++i)
    (r.truth[i] != 0 ? pos : neg).push_back(r.scores[i]);

  DelongComponents c;
  c.v10.assign(pos.size(), 0.0);
  c.v01.assign(neg.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (std::size_t j = 0; j < neg.size(); ++j) {
      const double psi = pos[i] > neg[j] ? 1.0 : (pos[i] == neg[j] ? 0.5 : 0.0);
      c.v10[i] += psi;
      c.v01[j] += psi;
      total += psi;
    }
  }
  const auto m = static_cast<double>(pos.size());
  const auto n = static_cast<double>(neg.size());
  for (auto& v : c.v10) v /= n;
  for (auto& v : c.v01) v /= m;
  c.auc = total / (m * n);
  return c;
}

void require_two_per_class(const DelongComponents& c) {
  if (c.v10.size() < 2 || c.v01.size() < 2)
    throw DomainError("DeLong variance needs at least two samples per class");
}

}  // namespace

double roc_auc(const RocData& r) { return delong_components(r).auc; }

DelongResult delong_test(const RocData& r1, const RocData& r2, bool paired) {
  const auto c1 = delong_components(r1);
  const auto c2 = delong_components(r2);
  require_two_per_class(c1);
  require_two_per_class(c2);

  double var;
  if (paired) {
    if (r1.truth != r2.truth)
      throw DomainError("paired DeLong requires identical ground truth");
    const auto m = static_cast<double>(c1.v10.size());
    const auto n = static_cast<double>(c1.v01.size());
    var = (sample_variance(c1.v10) + sample_variance(c2.v10) -
           2.0 * sample_covariance(c1.v10, c2.v10)) / m +
          (sample_variance(c1.v01) + sample_variance(c2.v01) -
           2.0 * sample_covariance(c1.v01, c2.v01)) / n;
  } else {
    var = sample_variance(c1.v10) / static_cast<double>(c1.v10.size()) +
          sample_variance(c1.v01) / static_cast<double>(c1.v01.size()) +
          sample_variance(c2.v10) / static_cast<double>(c2.v10.size()) +
          sample_variance(c2.v01) / static_cast<double>(c2.v01.size());
  }

  DelongResult res;
  res.auc1 = c1.auc;
  res.auc2 = c2.auc;
  const double delta = c1.auc - c2.auc;
  if (var <= 0.0) {
    res.z = 0.0;
    res.p = delta == 0.0 ? 1.0 : 0.0;
  } else {
    res.z = delta / std::sqrt(var);
    res.p = clamp01(2.0 * normal_sf(std::abs(res.z)));
  }
  return res;
}

AucInterval auc_confidence_interval(const RocData& r, double level) {
  if (!(level >= 0.0 && level < 1.0))
    throw DomainError("confidence level must lie in [0, 1)");
  const auto c = delong_components(r);
  require_two_per_class(c);
  const double var = sample_variance(c.v10) / static_cast<double>(c.v10.size()) +
                     sample_variance(c.v01) / static_cast<double>(c.v01.size());
  const double z = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
  const double half = z * std::sqrt(std::max(0.0, var));
  AucInterval out;
  out.auc = c.auc;
  out.low = clamp01(c.auc - half);
  out.high = clamp01(c.auc + half);
  return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov.
// ---------------------------------------------------------------------------

KsResult ks_compare(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw DomainError("KS test needs non-empty samples");
  std::vector<double> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto m = static_cast<double>(sa.size());
  const auto n = static_cast<double>(sb.size());

  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    const double v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= v) ++i;
    while (j < sb.size() && sb[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / m - static_cast<double>(j) / n));
  }

  KsResult res;
  res.d = d;
  res.p = kolmogorov_sf(d * std::sqrt(m * n / (m + n)));
  return res;
}

// ---------------------------------------------------------------------------
// Feature robustness.
// ---------------------------------------------------------------------------

const char* to_string(RobustnessMode mode) {
  switch (mode) {
    case RobustnessMode::Baseline: return "baseline";
    case RobustnessMode::Standardized: return "standardized";
    case RobustnessMode::Sap: return "sap";
  }
  return "?";
}

namespace {

std::vector<std::vector<std::string>> combinations(const std::vector<std::string>& items,
                                                   int k) {
  std::vector<std::vector<std::string>> out;
  const int n = static_cast<int>(items.size());
  std::vector<int> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    std::vector<std::string> subset;
    subset.reserve(static_cast<std::size_t>(k));
    for (int v : idx) subset.push_back(items[static_cast<std::size_t>(v)]);
    out.push_back(std::move(subset));
    int pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[static_cast<std::size_t>(pos)];
    for (int q = pos + 1; q < k; ++q)
      idx[static_cast<std::size_t>(q)] = idx[static_cast<std::size_t>(q - 1)] + 1;
  }
  return out;
}

const std::vector<double>& feature_column(const VoxelFeatureMap& cond,
                                          const std::string& feature) {
  const auto it = cond.features.find(feature);
  if (it == cond.features.end())
    throw DomainError("condition '" + cond.condition + "' lacks feature '" + feature + "'");
  return it->second;
}

void write_stats_csv(const std::string& path, const std::vector<RobustnessRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write stats CSV: " + path);
  out << "feature,mode,subset,occc,p_median,p_variance\n";
  char buf[64];
  const auto num = [&buf](double v) -> std::string {
    if (std::isnan(v)) return "";
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& r : rows) {
    out << r.feature << ',' << r.mode << ',' << r.subset << ',' << num(r.occc) << ','
        << num(r.p_median) << ',' << num(r.p_variance) << '\n';
  }
  if (!out) throw IoError("short write on stats CSV: " + path);
}

}  // namespace

RobustnessReport eval_feature_robustness(const FeatureMapStack& stack, RobustnessMode mode,
                                         int n_components, bool do_ttest,
                                         const std::string& save_stats_path) {
  const auto names = stack.condition_names();
  const auto j_count = static_cast<int>(names.size());
  if (j_count < 2) throw DomainError("feature robustness needs at least two conditions");
  if (mode == RobustnessMode::Sap && (n_components < 1 || n_components > j_count))
    throw DomainError("n_components out of range [1, " + std::to_string(j_count) + "]");

  const std::size_t n_voxels = stack.conditions.front().size();
  for (const auto& cond : stack.conditions)
    if (cond.size() != n_voxels)
      throw DomainError("conditions cover different VOIs");
  if (n_voxels < 2) throw DomainError("feature robustness needs at least two VOI voxels");

  const auto& feats = first_order_feature_names();

  const auto rater_matrix = [&](const std::string& feature, bool standardized) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n_voxels), j_count);
    for (int j = 0; j < j_count; ++j) {
      const auto& col = feature_column(stack.conditions[static_cast<std::size_t>(j)], feature);
      if (standardized) {
        const auto z = zscore(col);
        for (std::size_t i = 0; i < n_voxels; ++i)
          m(static_cast<Eigen::Index>(i), j) = z[i];
      } else {
        for (std::size_t i = 0; i < n_voxels; ++i)
          m(static_cast<Eigen::Index>(i), j) = col[i];
      }
    }
    return m;
  };

  RobustnessReport rep;
  if (mode == RobustnessMode::Sap) {
    rep.subsets = combinations(names, n_components);
    if (rep.subsets.size() < 2)
      throw DomainError("SAP robustness needs at least two subsets; lower n_components");
  }

  std::vector<double> mode_occc, base_occc;
  mode_occc.reserve(feats.size());

  char subset_buf[32];
  std::string subset_label = "all";
  if (mode == RobustnessMode::Sap) {
    std::snprintf(subset_buf, sizeof subset_buf, "C(%d,%d)", j_count, n_components);
    subset_label = subset_buf;
  }

  for (const auto& feature : feats) {
    double value;
    switch (mode) {
      case RobustnessMode::Baseline:
        value = occc(rater_matrix(feature, false));
        break;
      case RobustnessMode::Standardized:
        value = occc(rater_matrix(feature, true));
        break;
      case RobustnessMode::Sap: {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(n_voxels),
                          static_cast<Eigen::Index>(rep.subsets.size()));
        for (std::size_t s = 0; s < rep.subsets.size(); ++s) {
          const auto pooled = sap_pool(stack, feature, rep.subsets[s]);
          for (std::size_t i = 0; i < n_voxels; ++i)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) = pooled.pooled[i];
        }
        value = occc(m);
        break;
      }
      default:
        throw ConfigError("invalid robustness mode");
    }
    rep.rows.push_back({feature, to_string(mode), subset_label, value, kNan, kNan});
    mode_occc.push_back(value);
  }

  if (do_ttest) {
    if (mode == RobustnessMode::Baseline) {
      base_occc = mode_occc;
    } else {
      base_occc.reserve(feats.size());
      for (const auto& feature : feats) base_occc.push_back(occc(rater_matrix(feature, false)));
    }
    rep.median_test = ttest_with_auto_checks(mode_occc, base_occc, /*paired=*/true,
                                             Alternative::TwoSided, 0.05, /*include_f=*/true);
    const double p_med = rep.median_test->p();
    double p_var = kNan;
    if (rep.median_test->chosen_variance_test) {
      const auto& vname = *rep.median_test->chosen_variance_test;
      p_var = rep.median_test->p_values.at(vname);
      rep.variance_report = std::make_pair(vname, p_var);
    }
    for (auto& row : rep.rows) {
      row.p_median = p_med;
      row.p_variance = p_var;
    }
  }

  if (!save_stats_path.empty()) write_stats_csv(save_stats_path, rep.rows);
  return rep;
}

}  // namespace aarchive
