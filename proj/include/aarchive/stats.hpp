#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aarchive/features.hpp"

namespace aarchive {

/// Tail convention of a two-sample test.
enum class Alternative { TwoSided, Greater, Less };

const char* to_string(Alternative alt);

// ---------------------------------------------------------------------------
// Distribution helpers. Exposed because the oracles in the test-suite pin
// them directly; accuracy is ~1e-12 relative over the ranges used here.
// ---------------------------------------------------------------------------

/// Standard normal CDF.
double normal_cdf(double z);

/// Standard normal survival function 1 - CDF.
double normal_sf(double z);

/// Standard normal quantile (probit). DomainError outside (0, 1).
double normal_quantile(double q);

/// Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

/// Student's t survival function with df degrees of freedom.
double student_t_sf(double t, double df);

/// F distribution survival function. f < 0 maps to 1.
double f_dist_sf(double f, double d1, double d2);

// ---------------------------------------------------------------------------
// Sample moments (population convention, matching the omnibus test).
// ---------------------------------------------------------------------------

/// Population skewness g1 = m3 / m2^(3/2). DomainError when n < 2 or the
/// sample is constant.
double skewness(const std::vector<double>& x);

/// Population excess kurtosis g2 = m4 / m2^2 - 3.
double excess_kurtosis(const std::vector<double>& x);

// ---------------------------------------------------------------------------
// Normality and location tests.
// ---------------------------------------------------------------------------

/// D'Agostino-Pearson omnibus normality test. Combines the transformed
/// skewness and kurtosis z-scores into K^2 = z_s^2 + z_k^2, chi-squared with
/// two degrees of freedom. Requires n >= 20 (DomainError below).
double normality_test(const std::vector<double>& x);

/// Two-sample t-test assuming equal variances. Returns (t, p).
std::pair<double, double> t_test_equal_var(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           Alternative alt = Alternative::TwoSided);

/// Welch's t-test (unequal variances, Welch-Satterthwaite df).
std::pair<double, double> t_test_welch(const std::vector<double>& a,
                                       const std::vector<double>& b,
                                       Alternative alt = Alternative::TwoSided);

/// Paired t-test: one-sample test of a - b against zero mean.
std::pair<double, double> t_test_paired(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        Alternative alt = Alternative::TwoSided);

/// Mann-Whitney U with tie-corrected normal approximation and continuity
/// correction. Returns (U1, p) where U1 counts pairs won by `a`.
std::pair<double, double> mann_whitney_u(const std::vector<double>& a,
                                         const std::vector<double>& b,
                                         Alternative alt = Alternative::TwoSided);

/// Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped; tie-corrected normal approximation with continuity correction.
/// Returns (W, p): W = min(W+, W-) two-sided, W+ otherwise. DomainError
/// when every difference is zero.
std::pair<double, double> wilcoxon_signed_rank(const std::vector<double>& a,
                                               const std::vector<double>& b,
                                               Alternative alt = Alternative::TwoSided);

// ---------------------------------------------------------------------------
// Variance tests.
// ---------------------------------------------------------------------------

/// Two-sided F-test of variance equality. Returns (F = var_a/var_b, p).
std::pair<double, double> f_test_variance(const std::vector<double>& a,
                                          const std::vector<double>& b);

/// Centering rule of the Levene family: mean (classic Levene), median
/// (Brown-Forsythe), or two-sided trimmed mean (trimmed Brown-Forsythe).
enum class LeveneCenter { Mean, Median, Trimmed };

/// Levene / Brown-Forsythe test of variance equality across two groups.
/// `trim` is the per-tail trimming proportion used by LeveneCenter::Trimmed;
/// the trimmed variant also restricts scores to the trimmed samples.
/// Returns (W, p).
std::pair<double, double> levene_test(const std::vector<double>& a,
                                      const std::vector<double>& b,
                                      LeveneCenter center,
                                      double trim = 0.1);

/// Variance-test ladder. Both groups normal at `sensitivity` (n >= 20 each)
/// selects the F-test; otherwise the deviation kind picks the Levene family
/// member: excess kurtosis above 3 in either group selects the trimmed
/// Brown-Forsythe (10% per tail), |skewness| above 1 the median-centered
/// Brown-Forsythe, and mild deviations the mean-centered Levene test.
/// Returns (test name, p). DomainError when both groups are constant.
std::pair<std::string, double> variance_test_auto(const std::vector<double>& a,
                                                  const std::vector<double>& b,
                                                  double sensitivity = 0.05);

// ---------------------------------------------------------------------------
// Mean-test decision tree.
// ---------------------------------------------------------------------------

/// Outcome of ttest_with_auto_checks: every p-value computed along the way,
/// keyed by test name, plus the chosen test names and per-group normality
/// p-values (for paired data: the normality of the differences).
struct TestReport {
  std::map<std::string, double> p_values;
  std::string chosen_mean_test;
  std::optional<std::string> chosen_variance_test;
  Alternative alternative = Alternative::TwoSided;
  std::vector<double> normality_p;
  std::vector<std::string> notes;

  double p() const;  ///< p-value of the chosen mean test.
};

/// Location comparison with automatic assumption checks.
///
/// Normality is assessed at `sensitivity` per group (on the differences for
/// paired data). Normal data: paired -> paired t-test; unpaired -> variance
/// ladder decides between the regular t-test (equal variances) and Welch's
/// t-test. Non-normal data: paired -> Wilcoxon signed-rank, unpaired ->
/// Mann-Whitney U. Groups below 20 samples skip the normality test and take
/// the non-parametric branch with an explanatory note. include_f forces a
/// variance report even on branches that do not need one. Identical paired
/// samples (all differences zero) report p = 1 with a note instead of the
/// degenerate signed-rank test.
TestReport ttest_with_auto_checks(const std::vector<double>& a,
                                  const std::vector<double>& b,
                                  bool paired,
                                  Alternative alt = Alternative::TwoSided,
                                  double sensitivity = 0.05,
                                  bool include_f = false);

// ---------------------------------------------------------------------------
// Agreement coefficients.
// ---------------------------------------------------------------------------

/// Overall Concordance Correlation Coefficient over an n x J rater matrix
/// (rows: subjects, columns: raters). Computed as the weighted average of
/// all pairwise CCCs with each pair's denominator as weight, which reduces
/// to sum of 2*cov_jk over sum of (var_j + var_k + (mean_j - mean_k)^2).
/// Population moments. DomainError when n < 2, J < 2, or the denominator
/// vanishes (every rater constant and equal).
double occc(const Eigen::MatrixXd& raters);

/// Intra-class correlation, two-way random effects, absolute agreement,
/// single rater: ICC(2,1) = (MSR - MSE) / (MSR + (J-1) MSE + J (MSC - MSE)/n)
/// from the two-way ANOVA mean squares. Other forms raise UnsupportedError;
/// a degenerate decomposition (zero denominator) raises DomainError.
double icc(const Eigen::MatrixXd& raters, const std::string& form = "ICC(2,1)");

// ---------------------------------------------------------------------------
// ROC analysis.
// ---------------------------------------------------------------------------

/// Scores with binary ground truth (nonzero = positive class).
struct RocData {
  std::vector<double> scores;
  std::vector<int> truth;

  /// DomainError unless sizes match and both classes are present.
  void validate() const;
};

/// Mann-Whitney AUC with ties counted one half.
double roc_auc(const RocData& r);

struct DelongResult {
  double auc1 = 0.0;
  double auc2 = 0.0;
  double z = 0.0;
  double p = 1.0;
};

/// DeLong's test comparing two ROC curves via structural components.
/// paired requires identical truth vectors and uses the component
/// covariances; unpaired treats the AUCs as independent. A zero variance of
/// the difference yields p = 1 when the AUCs agree and p = 0 otherwise.
/// DomainError when any class has fewer than two samples.
DelongResult delong_test(const RocData& r1, const RocData& r2, bool paired = true);

struct AucInterval {
  double auc = 0.0;
  double low = 0.0;
  double high = 0.0;
};

/// DeLong-variance normal confidence interval for one AUC, clipped to
/// [0, 1]. level = 0 degenerates to a point. DomainError for level outside
/// [0, 1) or classes with fewer than two samples.
AucInterval auc_confidence_interval(const RocData& r, double level = 0.95);

// ---------------------------------------------------------------------------
// Distribution comparison.
// ---------------------------------------------------------------------------

struct KsResult {
  double d = 0.0;
  double p = 1.0;
};

/// Two-sample Kolmogorov-Smirnov test: exact ECDF sup-distance, asymptotic
/// Kolmogorov p-value. DomainError on empty input.
KsResult ks_compare(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Feature-robustness evaluation.
// ---------------------------------------------------------------------------

enum class RobustnessMode { Baseline, Standardized, Sap };

const char* to_string(RobustnessMode mode);

/// One OCCC evaluation: a feature under one mode. subset names the pooled
/// combination set for SAP mode ("C(4,2)"), "all" otherwise. p_median /
/// p_variance hold the mode-vs-baseline test results when requested (NaN
/// otherwise) and repeat on every row of the mode.
struct RobustnessRow {
  std::string feature;
  std::string mode;
  std::string subset;
  double occc = 0.0;
  double p_median = 0.0;
  double p_variance = 0.0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::vector<std::vector<std::string>> subsets;  ///< SAP combinations used.
  std::optional<TestReport> median_test;
  std::optional<std::pair<std::string, double>> variance_report;
};

/// Feature robustness across extraction conditions.
///
/// baseline: one OCCC per feature, raw per-condition vectors as raters.
/// standardized: the same with per-condition z-scored vectors.
/// sap: every size-n_components subset of conditions is pooled with
/// sap_pool; the pooled vectors act as raters (one OCCC per feature).
/// do_ttest compares the mode's OCCC distribution over the features against
/// the baseline distribution (paired) and attaches the location test p as
/// p_median and the variance ladder p as p_variance. save_stats_path, when
/// non-empty, writes the rows as CSV
/// (feature,mode,subset,occc,p_median,p_variance).
///
/// DomainError when the stack has fewer than two conditions or
/// n_components is outside [1, |conditions|].
RobustnessReport eval_feature_robustness(const FeatureMapStack& stack,
                                         RobustnessMode mode,
                                         int n_components = 2,
                                         bool do_ttest = false,
                                         const std::string& save_stats_path = "");

}  // namespace aarchive
