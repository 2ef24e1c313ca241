#include "ardm/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>

#include "ardm/errors.hpp"

namespace ardm::stats {

namespace {

std::atomic<std::uint64_t> g_kernel_calls{0};

void bump() { g_kernel_calls.fetch_add(1, std::memory_order_relaxed); }

// Neumaier-compensated sum: keeps describe_continuous means honest against
// the two-pass oracle at 1e-12.
double compensated_sum(std::span<const double> values) {
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  return sum + comp;
}

double horner(const double* coef, int n, double x) {
  double r = coef[n - 1];
  for (int i = n - 2; i >= 0; --i) r = r * x + coef[i];
  return r;
}

std::optional<double> median_from_points(const std::vector<KmPoint>& points) {
  for (const auto& point : points) {
    if (point.surv <= 0.5) return point.time;
  }
  return std::nullopt;
}

}  // namespace

std::uint64_t kernel_call_count() {
  return g_kernel_calls.load(std::memory_order_relaxed);
}

double norm_quantile(double p) {
  bump();
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("norm_quantile: p must be in (0, 1)");
  }
  // Wichura's algorithm AS 241 (PPND16), accurate to ~1e-16 relative.
  static constexpr double a[8] = {
      3.3871328727963666080e0,  1.3314166789178437745e2,
      1.9715909503065514427e3,  1.3731693765509461125e4,
      4.5921953931549871457e4,  6.7265770927008700853e4,
      3.3430575583588128105e4,  2.5090809287301226727e3};
  static constexpr double b[8] = {
      1.0,                      4.2313330701600911252e1,
      6.8718700749205790830e2,  5.3941960214247511077e3,
      2.1213794301586595867e4,  3.9307895800092710610e4,
      2.8729085735721942674e4,  5.2264952788528545610e3};
  static constexpr double c[8] = {
      1.42343711074968357734e0,  4.63033784615654529590e0,
      5.76949722146069140550e0,  3.64784832476320460504e0,
      1.27045825245236838258e0,  2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr double d[8] = {
      1.0,                       2.05319162663775882187e0,
      1.67638483018380384940e0,  6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2,
      5.47593808499534494600e-4, 1.05075007164441684324e-9};
  static constexpr double e[8] = {
      6.65790464350110377720e0,  5.46378491116411436990e0,
      1.78482653991729133580e0,  2.96560571828504891230e-1,
      2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr double f[8] = {
      1.0,                       5.99832206555887937690e-1,
      1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5,
      1.42151175831644588870e-7, 2.04426310338993978564e-15};

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(a, 8, r) / horner(b, 8, r);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = horner(c, 8, r) / horner(d, 8, r);
  } else {
    r -= 5.0;
    value = horner(e, 8, r) / horner(f, 8, r);
  }
  return q < 0.0 ? -value : value;
}

double quantile(std::span<const double> sorted_values, double p) {
  bump();
  if (sorted_values.empty()) throw DomainError("quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError("quantile: p must be in [0, 1]");
  }
  const std::size_t n = sorted_values.size();
  const double h = static_cast<double>(n - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= n || frac == 0.0) return sorted_values[lo];
  return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

DescriptiveSummary describe_continuous(
    std::span<const std::optional<double>> values) {
  bump();
  DescriptiveSummary summary;
  std::vector<double> observed;
  observed.reserve(values.size());
  for (const auto& v : values) {
    if (v) {
      observed.push_back(*v);
    } else {
      ++summary.n_missing;
    }
  }
  summary.n = static_cast<long>(observed.size());
  if (observed.empty()) return summary;

  std::sort(observed.begin(), observed.end());
  const double n = static_cast<double>(observed.size());
  const double mean = compensated_sum(observed) / n;
  summary.mean = mean;
  if (observed.size() >= 2) {
    std::vector<double> sq;
    sq.reserve(observed.size());
    for (double v : observed) sq.push_back((v - mean) * (v - mean));
    summary.sd = std::sqrt(compensated_sum(sq) / (n - 1.0));
  }
  summary.min = observed.front();
  summary.max = observed.back();
  summary.median = quantile(observed, 0.5);
  summary.q1 = quantile(observed, 0.25);
  summary.q3 = quantile(observed, 0.75);
  return summary;
}

CategoricalSummary describe_categorical(
    std::span<const std::optional<std::string>> values) {
  bump();
  CategoricalSummary summary;
  std::map<std::string, long> counts;
  for (const auto& v : values) {
    if (v) {
      ++counts[*v];
    } else {
      ++summary.n_missing;
    }
  }
  long total = 0;
  for (const auto& [level, count] : counts) total += count;
  for (const auto& [level, count] : counts) {
    summary.levels.push_back(
        {level, count,
         100.0 * static_cast<double>(count) / static_cast<double>(total)});
  }
  return summary;
}

std::vector<IncidenceRow> ae_incidence(
    std::span<const AeRow> ae_rows,
    const std::map<std::string, long>& denominators) {
  bump();
  // Distinct-subject semantics: a subject counts once per (group, term) and
  // once in the group's ANY EVENT row, however many records they have.
  std::map<std::pair<std::string, std::string>, std::set<std::string>>
      subjects_by_term;
  std::map<std::string, std::set<std::string>> subjects_any;
  for (const auto& row : ae_rows) {
    auto denom = denominators.find(row.group);
    if (denom == denominators.end()) {
      throw DomainError("ae_incidence: no denominator for group " + row.group);
    }
    subjects_by_term[{row.group, row.term}].insert(row.usubjid);
    subjects_any[row.group].insert(row.usubjid);
  }

  std::vector<IncidenceRow> rows;
  for (const auto& [group, subjects] : subjects_any) {
    const long denom = denominators.at(group);
    auto make_row = [&](const std::string& term, long n_subjects) {
      IncidenceRow row;
      row.group = group;
      row.term = term;
      row.n_subjects = n_subjects;
      row.denom = denom;
      row.percent =
          100.0 * static_cast<double>(n_subjects) / static_cast<double>(denom);
      return row;
    };
    std::vector<IncidenceRow> group_rows;
    group_rows.push_back(
        make_row("ANY EVENT", static_cast<long>(subjects.size())));
    for (const auto& [key, term_subjects] : subjects_by_term) {
      if (key.first != group) continue;
      group_rows.push_back(
          make_row(key.second, static_cast<long>(term_subjects.size())));
    }
    std::sort(group_rows.begin(), group_rows.end(),
              [](const IncidenceRow& a, const IncidenceRow& b) {
                if (a.percent != b.percent) return a.percent > b.percent;
                return a.term < b.term;
              });
    rows.insert(rows.end(), group_rows.begin(), group_rows.end());
  }
  return rows;
}

KmCurve km_estimate(std::span<const double> times,
                    std::span<const int> event_flags, double conf_level) {
  bump();
  if (times.size() != event_flags.size()) {
    throw DomainError("km_estimate: times and flags differ in length");
  }
  if (times.empty()) throw DomainError("km_estimate: empty input");
  if (!(conf_level > 0.0 && conf_level < 1.0)) {
    throw DomainError("km_estimate: conf_level must be in (0, 1)");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(times[i]) || times[i] < 0.0) {
      throw DomainError("km_estimate: times must be finite and non-negative");
    }
    if (event_flags[i] != 0 && event_flags[i] != 1) {
      throw DomainError("km_estimate: event flags must be 0 or 1");
    }
  }

  std::vector<std::pair<double, int>> pairs;
  pairs.reserve(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    pairs.emplace_back(times[i], event_flags[i]);
  }
  std::sort(pairs.begin(), pairs.end());

  const double z = norm_quantile(1.0 - (1.0 - conf_level) / 2.0);

  KmCurve curve;
  curve.conf_level = conf_level;
  curve.n_subjects = static_cast<long>(pairs.size());

  double surv = 1.0;
  double greenwood = 0.0;  // running sum of d / (n (n - d))
  std::size_t i = 0;
  while (i < pairs.size()) {
    const double t = pairs[i].first;
    long d = 0, c = 0;
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].first == t) {
      if (pairs[j].second == 1) {
        ++d;
      } else {
        ++c;
      }
      ++j;
    }
    const long n_risk = static_cast<long>(pairs.size() - i);

    KmPoint point;
    point.time = t;
    point.n_risk = n_risk;
    point.n_event = d;
    point.n_censor = c;
    if (d > 0) {
      surv *= 1.0 - static_cast<double>(d) / static_cast<double>(n_risk);
      if (n_risk > d) {
        greenwood += static_cast<double>(d) /
                     (static_cast<double>(n_risk) *
                      static_cast<double>(n_risk - d));
      }
      curve.n_events += d;
    }
    point.surv = surv;
    point.std_err = surv * std::sqrt(greenwood);
    if (surv > 0.0 && surv < 1.0) {
      const double se_loglog = std::sqrt(greenwood) / std::abs(std::log(surv));
      point.ci_lower = std::pow(surv, std::exp(z * se_loglog));
      point.ci_upper = std::pow(surv, std::exp(-z * se_loglog));
    }
    curve.points.push_back(point);
    i = j;
  }
  curve.median_survival = median_from_points(curve.points);
  return curve;
}

std::optional<double> km_median(const KmCurve& curve) {
  bump();
  return median_from_points(curve.points);
}

}  // namespace ardm::stats
