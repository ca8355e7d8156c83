#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace topdown {

struct AttributeSpec {
  std::string name;
  std::vector<std::string> levels;  // ordered, unique, at least one
};

// Attribute schema for one record universe. Cells of the flattened
// contingency-table vector are indexed row-major over the declared
// attribute order; geography is never part of the schema.
class Schema {
 public:
  explicit Schema(std::vector<AttributeSpec> attributes);

  std::size_t cell_count() const { return cell_count_; }
  const std::vector<AttributeSpec>& attributes() const { return attributes_; }

  std::size_t attribute_index(const std::string& name) const;
  std::size_t level_index(std::size_t attribute, const std::string& label) const;

  // Row-major bijection from per-attribute level indices to [0, cell_count).
  std::size_t flatten_index(std::span<const std::size_t> level_indices) const;
  std::vector<std::size_t> unflatten_index(std::size_t cell) const;

 private:
  std::vector<AttributeSpec> attributes_;
  std::size_t cell_count_ = 1;
};

// Flattened non-negative contingency-table vector for one geographic node.
class Histogram {
 public:
  Histogram(const Schema& schema, std::vector<std::int64_t> counts);

  std::span<const std::int64_t> counts() const { return counts_; }
  std::int64_t operator[](std::size_t cell) const { return counts_[cell]; }
  std::size_t size() const { return counts_.size(); }
  std::int64_t total() const;

 private:
  std::vector<std::int64_t> counts_;
};

// Partial regrouping of one attribute's levels. Groups are pairwise disjoint
// and non-empty; levels left out of every group are dropped from the query.
struct Recode {
  std::string attribute;
  std::vector<std::vector<std::size_t>> groups;
};

enum class QueryKind { kTotal, kMarginal, kDetailed };

// Binary marginal query matrix with at most one nonzero per column, stored
// as the row index each cell maps to (-1 for dropped cells).
class QueryGroup {
 public:
  QueryGroup(std::string name, QueryKind kind, std::size_t rows,
             std::vector<std::int32_t> row_of_cell);

  const std::string& name() const { return name_; }
  QueryKind kind() const { return kind_; }
  std::size_t rows() const { return rows_; }
  std::size_t cells() const { return row_of_cell_.size(); }
  std::int32_t row_of(std::size_t cell) const { return row_of_cell_[cell]; }
  // Every cell maps to exactly one row.
  bool exhaustive() const;

  std::vector<std::int64_t> evaluate(const Histogram& x) const;
  std::vector<double> evaluate(std::span<const double> x) const;

 private:
  std::string name_;
  QueryKind kind_;
  std::size_t rows_;
  std::vector<std::int32_t> row_of_cell_;
};

QueryGroup total_query(const Schema& schema);
QueryGroup detailed_query(const Schema& schema);

// Cartesian product of the recode groups (row-major over attribute order);
// attributes without a recode are marginalized out.
QueryGroup build_marginal(const Schema& schema, const std::vector<Recode>& recodes,
                          std::string name);

// Exact L2 sensitivity under bounded neighbors (one record modified, total
// count fixed), from pairwise column signatures.
double group_l2_sensitivity(const QueryGroup& q);

}  // namespace topdown
