#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ardm::stats {

// Number of kernel invocations so far in this process. Every statistical
// kernel below bumps it; callers can assert that a code path (e.g. a
// render) performed no computation.
std::uint64_t kernel_call_count();

// Standard normal quantile via the Wichura AS 241 rational approximation
// (double precision). p must lie strictly inside (0, 1).
double norm_quantile(double p);

// Type-7 quantile: linear interpolation between order statistics at
// h = (n-1)p. values must be sorted ascending and non-empty, p in [0, 1].
double quantile(std::span<const double> sorted_values, double p);

struct DescriptiveSummary {
  long n = 0;
  long n_missing = 0;
  std::optional<double> mean, sd, median, q1, q3, min, max;
};

// Summary over the non-null values; all statistics null when n = 0, sd null
// when n < 2 (sample sd, divisor n-1).
DescriptiveSummary describe_continuous(
    std::span<const std::optional<double>> values);

struct LevelCount {
  std::string level;
  long count = 0;
  double percent = 0.0;  // of non-missing
};

struct CategoricalSummary {
  std::vector<LevelCount> levels;  // sorted by label
  long n_missing = 0;
};

CategoricalSummary describe_categorical(
    std::span<const std::optional<std::string>> values);

struct AeRow {
  std::string usubjid;
  std::string group;
  std::string term;
};

struct IncidenceRow {
  std::string group;
  std::string term;
  long n_subjects = 0;  // distinct subjects with >= 1 qualifying event
  long denom = 0;       // arm population size
  double percent = 0.0;
};

// Distinct-subject incidence per (group, term), plus a synthetic
// "ANY EVENT" term per group. Output sorted by (group, percent desc, term).
// Throws DomainError when a group has no denominator.
std::vector<IncidenceRow> ae_incidence(
    std::span<const AeRow> ae_rows,
    const std::map<std::string, long>& denominators);

struct KmPoint {
  double time = 0.0;
  long n_risk = 0;    // at risk just before this time
  long n_event = 0;
  long n_censor = 0;
  double surv = 1.0;  // product-limit estimate
  double std_err = 0.0;  // Greenwood standard error of surv
  std::optional<double> ci_lower, ci_upper;  // null when surv is 0 or 1
};

struct KmCurve {
  std::string stratum;
  std::vector<KmPoint> points;  // distinct times ascending, censor-only
                                // times included with n_event = 0
  long n_subjects = 0;
  long n_events = 0;
  std::optional<double> median_survival;
  double conf_level = 0.95;
};

// Product-limit estimator with Greenwood variance and log-log confidence
// bounds. Events precede censorings at tied times: both are counted in the
// risk set at their own time. Throws DomainError for negative times, flags
// outside {0,1}, mismatched lengths, empty input, or conf_level outside
// (0, 1).
KmCurve km_estimate(std::span<const double> times,
                    std::span<const int> event_flags,
                    double conf_level = 0.95);

// Smallest listed time with surv <= 0.5; null when the curve never reaches
// 0.5.
std::optional<double> km_median(const KmCurve& curve);

}  // namespace ardm::stats
