#include "topdown/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace topdown {

LeafCounts leaf_counts_of(const MdfOutput& out) {
  LeafCounts leaves;
  for (const auto& id : out.leaf_order) leaves[id] = out.node_solutions.at(id);
  return leaves;
}

LeafCounts leaf_counts_of(const NodeData& data, const Schema& schema) {
  LeafCounts leaves;
  for (const auto& [id, hist] : data.leaf_histograms) {
    if (hist.size() != schema.cell_count())
      throw std::invalid_argument("histogram at '" + id + "' has the wrong cell count");
    leaves[id] = std::vector<std::int64_t>(hist.counts().begin(), hist.counts().end());
  }
  return leaves;
}

UnitSet UnitSet::at_level(const Spine& spine, int level) {
  UnitSet set;
  for (const int v : spine.nodes_at_level(level)) {
    std::vector<std::string> ids;
    for (const int leaf : spine.leaves_under(v)) ids.push_back(spine.node(leaf).id);
    set.units.emplace_back(spine.node(v).id, std::move(ids));
  }
  return set;
}

UnitSet UnitSet::of_entities(const std::vector<OffSpineEntity>& entities) {
  UnitSet set;
  for (const auto& e : entities) set.units.emplace_back(e.name, e.leaf_ids);
  return set;
}

std::vector<std::int64_t> tabulate_unit(const LeafCounts& leaves,
                                        const std::vector<std::string>& leaf_ids,
                                        const QueryGroup& query, const Schema& schema) {
  std::vector<std::int64_t> sum(schema.cell_count(), 0);
  for (const auto& id : leaf_ids) {
    const auto it = leaves.find(id);
    if (it == leaves.end())
      throw std::invalid_argument("geocode '" + id + "' missing from the tabulated data");
    for (std::size_t cell = 0; cell < sum.size(); ++cell) sum[cell] += it->second[cell];
  }
  return query.evaluate(Histogram(schema, std::move(sum)));
}

double abs_error_by_level(const LeafCounts& mdf, const LeafCounts& cef, const UnitSet& units,
                          const QueryGroup& query, const Schema& schema) {
  if (units.units.empty()) throw std::invalid_argument("no geographic units to evaluate");
  double total = 0.0;
  for (const auto& [name, ids] : units.units) {
    (void)name;
    const auto got = tabulate_unit(mdf, ids, query, schema);
    const auto want = tabulate_unit(cef, ids, query, schema);
    double l1 = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
      l1 += std::abs(static_cast<double>(got[i] - want[i]));
    total += l1;
  }
  return total / static_cast<double>(units.units.size());
}

std::string PopulationBucket::label() const {
  if (hi < 0) return std::to_string(lo) + "+";
  return std::to_string(lo) + " to " + std::to_string(hi);
}

namespace {

// Lower-interpolation (type-1) quantile of a sorted sample.
double quantile_lower(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  const double idx = std::ceil(p * static_cast<double>(n)) - 1.0;
  const std::size_t i = static_cast<std::size_t>(std::max(0.0, idx));
  return sorted[std::min(i, n - 1)];
}

}  // namespace

std::vector<QuantileRow> signed_quantiles(const LeafCounts& mdf, const LeafCounts& cef,
                                          const UnitSet& units, const QueryGroup& query,
                                          const Schema& schema,
                                          const std::vector<PopulationBucket>& buckets,
                                          const std::vector<double>& probabilities) {
  const QueryGroup total = total_query(schema);
  std::vector<QuantileRow> rows;
  for (const auto& bucket : buckets) {
    std::vector<double> signed_errors;
    std::vector<double> l1s;
    for (const auto& [name, ids] : units.units) {
      (void)name;
      const std::int64_t pop = tabulate_unit(cef, ids, total, schema)[0];
      if (pop < bucket.lo || (bucket.hi >= 0 && pop > bucket.hi)) continue;
      const auto got = tabulate_unit(mdf, ids, query, schema);
      const auto want = tabulate_unit(cef, ids, query, schema);
      double l1 = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) {
        const double e = static_cast<double>(got[i] - want[i]);
        signed_errors.push_back(e);
        l1 += std::abs(e);
      }
      l1s.push_back(l1);
    }
    QuantileRow row;
    row.bucket = bucket.label();
    row.unit_count = l1s.size();
    if (l1s.empty()) {
      row.empty = true;
      rows.push_back(std::move(row));
      continue;
    }
    for (const double v : l1s) row.mean_l1 += v;
    row.mean_l1 /= static_cast<double>(l1s.size());
    std::sort(signed_errors.begin(), signed_errors.end());
    for (const double p : probabilities) row.quantiles.push_back(quantile_lower(signed_errors, p));
    rows.push_back(std::move(row));
  }
  return rows;
}

double blau_index(const std::vector<double>& shares) {
  double sum = 0.0;
  for (const double s : shares) {
    if (s < 0) throw std::invalid_argument("blau_index: negative share");
    sum += s;
  }
  if (sum <= 0) throw std::invalid_argument("blau_index: all-zero counts are undefined");
  double sq = 0.0;
  for (const double s : shares) sq += (s / sum) * (s / sum);
  return 1.0 - sq;
}

std::vector<BlauQuintileRow> blau_quintile_bias(const LeafCounts& mdf, const LeafCounts& cef,
                                                const UnitSet& units, const QueryGroup& blau_query,
                                                const Schema& schema) {
  if (units.units.size() < 5)
    throw std::invalid_argument("blau quintiles need at least 5 geographic units");
  const QueryGroup total = total_query(schema);

  struct UnitStat {
    double blau = 0.0;
    double signed_total_error = 0.0;
  };
  std::vector<UnitStat> stats;
  for (const auto& [name, ids] : units.units) {
    (void)name;
    const auto groups = tabulate_unit(cef, ids, blau_query, schema);
    std::vector<double> shares(groups.begin(), groups.end());
    UnitStat s;
    s.blau = blau_index(shares);
    s.signed_total_error = static_cast<double>(tabulate_unit(mdf, ids, total, schema)[0] -
                                               tabulate_unit(cef, ids, total, schema)[0]);
    stats.push_back(s);
  }

  std::vector<double> sorted_blau;
  for (const auto& s : stats) sorted_blau.push_back(s.blau);
  std::sort(sorted_blau.begin(), sorted_blau.end());
  double thresholds[4];
  for (int k = 1; k <= 4; ++k) thresholds[k - 1] = quantile_lower(sorted_blau, k / 5.0);

  std::vector<BlauQuintileRow> rows(5);
  std::vector<double> sums(5, 0.0);
  std::vector<std::size_t> counts(5, 0);
  for (const auto& s : stats) {
    int bucket = 0;  // ties at edges fall to the lower bucket
    for (int k = 0; k < 4; ++k)
      if (s.blau > thresholds[k]) bucket = k + 1;
    sums[bucket] += s.signed_total_error;
    counts[bucket] += 1;
  }
  for (int q = 0; q < 5; ++q) {
    rows[q].quintile = q + 1;
    rows[q].unit_count = counts[q];
    if (counts[q] == 0)
      rows[q].empty = true;
    else
      rows[q].mean_signed_total_error = sums[q] / static_cast<double>(counts[q]);
  }
  return rows;
}

LargestGroupReport largest_group_criterion(const LeafCounts& mdf, const LeafCounts& cef,
                                           const UnitSet& units, const QueryGroup& group_query,
                                           const Schema& schema, double threshold_pp,
                                           std::int64_t min_pop, double min_fraction) {
  const QueryGroup total = total_query(schema);
  LargestGroupReport report;
  report.threshold_pp = threshold_pp;
  report.min_fraction = min_fraction;
  for (const auto& [name, ids] : units.units) {
    (void)name;
    const std::int64_t pop = tabulate_unit(cef, ids, total, schema)[0];
    if (pop < min_pop) continue;
    ++report.eligible;
    const auto groups = tabulate_unit(cef, ids, group_query, schema);
    std::size_t largest = 0;
    for (std::size_t g = 1; g < groups.size(); ++g)
      if (groups[g] > groups[largest]) largest = g;
    const std::int64_t prot_pop = tabulate_unit(mdf, ids, total, schema)[0];
    if (prot_pop <= 0) continue;  // counted as a failure, flagged by omission
    const auto prot_groups = tabulate_unit(mdf, ids, group_query, schema);
    const double share_cef = static_cast<double>(groups[largest]) / static_cast<double>(pop);
    const double share_mdf =
        static_cast<double>(prot_groups[largest]) / static_cast<double>(prot_pop);
    if (std::abs(share_mdf - share_cef) * 100.0 <= threshold_pp + 1e-12) ++report.within;
  }
  report.fraction = report.eligible == 0
                        ? 1.0
                        : static_cast<double>(report.within) / static_cast<double>(report.eligible);
  report.pass = report.fraction >= min_fraction;
  return report;
}

void MetricReport::add(std::string geography, std::string query, std::string metric,
                       double value) {
  rows.push_back({std::move(geography), std::move(query), std::move(metric), value});
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "geography,query,metric,value\n";
  for (const auto& r : rows)
    os << r.geography << ',' << r.query << ',' << r.metric << ',' << r.value << '\n';
}

void MetricReport::write_text(std::ostream& os) const {
  std::size_t w1 = 9, w2 = 5, w3 = 6;
  for (const auto& r : rows) {
    w1 = std::max(w1, r.geography.size());
    w2 = std::max(w2, r.query.size());
    w3 = std::max(w3, r.metric.size());
  }
  os << std::left << std::setw(static_cast<int>(w1) + 2) << "geography"
     << std::setw(static_cast<int>(w2) + 2) << "query" << std::setw(static_cast<int>(w3) + 2)
     << "metric" << "value\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(w1) + 2) << r.geography
       << std::setw(static_cast<int>(w2) + 2) << r.query << std::setw(static_cast<int>(w3) + 2)
       << r.metric << std::setprecision(6) << r.value << '\n';
  }
}

}  // namespace topdown
