#include "topdown/schema.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace topdown {

Schema::Schema(std::vector<AttributeSpec> attributes) : attributes_(std::move(attributes)) {
  if (attributes_.empty()) throw std::invalid_argument("schema needs at least one attribute");
  std::set<std::string> names;
  for (const auto& attr : attributes_) {
    if (attr.levels.empty())
      throw std::invalid_argument("attribute '" + attr.name + "' has no levels");
    if (!names.insert(attr.name).second)
      throw std::invalid_argument("duplicate attribute name '" + attr.name + "'");
    std::set<std::string> labels(attr.levels.begin(), attr.levels.end());
    if (labels.size() != attr.levels.size())
      throw std::invalid_argument("duplicate level label in attribute '" + attr.name + "'");
    cell_count_ *= attr.levels.size();
  }
}

std::size_t Schema::attribute_index(const std::string& name) const {
  for (std::size_t i = 0; i < attributes_.size(); ++i)
    if (attributes_[i].name == name) return i;
  throw std::invalid_argument("unknown attribute '" + name + "'");
}

std::size_t Schema::level_index(std::size_t attribute, const std::string& label) const {
  const auto& levels = attributes_.at(attribute).levels;
  const auto it = std::find(levels.begin(), levels.end(), label);
  if (it == levels.end())
    throw std::invalid_argument("unknown level '" + label + "' in attribute '" +
                                attributes_[attribute].name + "'");
  return static_cast<std::size_t>(it - levels.begin());
}

std::size_t Schema::flatten_index(std::span<const std::size_t> level_indices) const {
  if (level_indices.size() != attributes_.size())
    throw std::out_of_range("flatten_index: expected one index per attribute");
  std::size_t cell = 0;
  for (std::size_t a = 0; a < attributes_.size(); ++a) {
    const std::size_t n = attributes_[a].levels.size();
    if (level_indices[a] >= n)
      throw std::out_of_range("flatten_index: level index out of range for attribute '" +
                              attributes_[a].name + "'");
    cell = cell * n + level_indices[a];
  }
  return cell;
}

std::vector<std::size_t> Schema::unflatten_index(std::size_t cell) const {
  if (cell >= cell_count_) throw std::out_of_range("unflatten_index: cell out of range");
  std::vector<std::size_t> idx(attributes_.size());
  for (std::size_t a = attributes_.size(); a-- > 0;) {
    const std::size_t n = attributes_[a].levels.size();
    idx[a] = cell % n;
    cell /= n;
  }
  return idx;
}

Histogram::Histogram(const Schema& schema, std::vector<std::int64_t> counts)
    : counts_(std::move(counts)) {
  if (counts_.size() != schema.cell_count())
    throw std::invalid_argument("histogram length does not match schema cell count");
}

std::int64_t Histogram::total() const {
  std::int64_t t = 0;
  for (const auto v : counts_) t += v;
  return t;
}

QueryGroup::QueryGroup(std::string name, QueryKind kind, std::size_t rows,
                       std::vector<std::int32_t> row_of_cell)
    : name_(std::move(name)), kind_(kind), rows_(rows), row_of_cell_(std::move(row_of_cell)) {
  for (const auto r : row_of_cell_)
    if (r < -1 || r >= static_cast<std::int32_t>(rows_))
      throw std::invalid_argument("query group '" + name_ + "': row index out of range");
}

bool QueryGroup::exhaustive() const {
  return std::all_of(row_of_cell_.begin(), row_of_cell_.end(),
                     [](std::int32_t r) { return r >= 0; });
}

std::vector<std::int64_t> QueryGroup::evaluate(const Histogram& x) const {
  if (x.size() != cells()) throw std::invalid_argument("query/histogram dimension mismatch");
  std::vector<std::int64_t> out(rows_, 0);
  for (std::size_t c = 0; c < cells(); ++c)
    if (row_of_cell_[c] >= 0) out[row_of_cell_[c]] += x[c];
  return out;
}

std::vector<double> QueryGroup::evaluate(std::span<const double> x) const {
  if (x.size() != cells()) throw std::invalid_argument("query/vector dimension mismatch");
  std::vector<double> out(rows_, 0.0);
  for (std::size_t c = 0; c < cells(); ++c)
    if (row_of_cell_[c] >= 0) out[row_of_cell_[c]] += x[c];
  return out;
}

QueryGroup total_query(const Schema& schema) {
  return QueryGroup("TOTAL", QueryKind::kTotal, 1,
                    std::vector<std::int32_t>(schema.cell_count(), 0));
}

QueryGroup detailed_query(const Schema& schema) {
  std::vector<std::int32_t> rows(schema.cell_count());
  for (std::size_t c = 0; c < rows.size(); ++c) rows[c] = static_cast<std::int32_t>(c);
  return QueryGroup("DETAILED", QueryKind::kDetailed, schema.cell_count(), std::move(rows));
}

QueryGroup build_marginal(const Schema& schema, const std::vector<Recode>& recodes,
                          std::string name) {
  const auto& attrs = schema.attributes();
  // group_of[a][level] = group index within attribute a, or -1.
  std::vector<std::vector<std::int32_t>> group_of(attrs.size());
  std::vector<std::size_t> group_counts(attrs.size(), 1);
  std::vector<bool> seen(attrs.size(), false);
  for (std::size_t a = 0; a < attrs.size(); ++a)
    group_of[a].assign(attrs[a].levels.size(), 0);  // implicit single all-levels group

  for (const auto& recode : recodes) {
    const std::size_t a = schema.attribute_index(recode.attribute);
    if (seen[a])
      throw std::invalid_argument("more than one recode for attribute '" + recode.attribute + "'");
    seen[a] = true;
    group_of[a].assign(attrs[a].levels.size(), -1);
    for (std::size_t g = 0; g < recode.groups.size(); ++g) {
      if (recode.groups[g].empty())
        throw std::invalid_argument("empty recode group for attribute '" + recode.attribute + "'");
      for (const std::size_t level : recode.groups[g]) {
        if (level >= attrs[a].levels.size())
          throw std::invalid_argument("recode level out of range for attribute '" +
                                      recode.attribute + "'");
        if (group_of[a][level] != -1)
          throw std::invalid_argument("overlapping recode groups for attribute '" +
                                      recode.attribute + "'");
        group_of[a][level] = static_cast<std::int32_t>(g);
      }
    }
    group_counts[a] = recode.groups.size();
  }

  std::size_t rows = 1;
  for (const auto g : group_counts) rows *= g;

  std::vector<std::int32_t> row_of(schema.cell_count(), -1);
  for (std::size_t cell = 0; cell < schema.cell_count(); ++cell) {
    const auto idx = schema.unflatten_index(cell);
    std::int64_t row = 0;
    bool dropped = false;
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      const std::int32_t g = group_of[a][idx[a]];
      if (g < 0) {
        dropped = true;
        break;
      }
      row = row * static_cast<std::int64_t>(group_counts[a]) + g;
    }
    if (!dropped) row_of[cell] = static_cast<std::int32_t>(row);
  }

  QueryKind kind = QueryKind::kMarginal;
  if (rows == 1 && recodes.empty()) kind = QueryKind::kTotal;
  if (rows == schema.cell_count()) {
    bool identity = true;
    for (std::size_t c = 0; c < row_of.size(); ++c)
      identity = identity && row_of[c] == static_cast<std::int32_t>(c);
    if (identity) kind = QueryKind::kDetailed;
  }
  return QueryGroup(std::move(name), kind, rows, std::move(row_of));
}

double group_l2_sensitivity(const QueryGroup& q) {
  // A bounded-neighbor change moves one record from cell a to cell b, so the
  // answer vector moves by column(b) - column(a). With at most one nonzero
  // per column the squared distance is 2 (distinct rows), 1 (row vs
  // dropped), or 0 (same row / both dropped).
  bool has_dropped = false;
  std::int32_t first_row = -1;
  bool two_rows = false;
  for (std::size_t c = 0; c < q.cells(); ++c) {
    const std::int32_t r = q.row_of(c);
    if (r < 0) {
      has_dropped = true;
    } else if (first_row < 0) {
      first_row = r;
    } else if (r != first_row) {
      two_rows = true;
    }
  }
  if (two_rows) return std::sqrt(2.0);
  if (first_row >= 0 && has_dropped) return 1.0;
  return 0.0;
}

}  // namespace topdown
