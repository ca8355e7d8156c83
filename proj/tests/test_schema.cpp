#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "topdown/schema.hpp"

using namespace topdown;

namespace {

Schema schema_2x3() {
  return Schema({{"A", {"a0", "a1"}}, {"B", {"b0", "b1", "b2"}}});
}

// Brute-force marginal evaluation straight from the recode definition, used
// as the oracle for build_marginal and evaluate.
std::vector<std::int64_t> brute_marginal(const Schema& schema, const std::vector<Recode>& recodes,
                                         const Histogram& x) {
  // Group index per attribute per level, -1 = dropped / marginalized-in.
  std::vector<std::vector<int>> gid(schema.attributes().size());
  std::vector<std::size_t> counts(schema.attributes().size(), 1);
  for (std::size_t a = 0; a < schema.attributes().size(); ++a)
    gid[a].assign(schema.attributes()[a].levels.size(), 0);
  for (const auto& r : recodes) {
    const std::size_t a = schema.attribute_index(r.attribute);
    gid[a].assign(schema.attributes()[a].levels.size(), -1);
    for (std::size_t g = 0; g < r.groups.size(); ++g)
      for (const std::size_t lvl : r.groups[g]) gid[a][lvl] = static_cast<int>(g);
    counts[a] = r.groups.size();
  }
  std::size_t rows = 1;
  for (const auto n : counts) rows *= n;
  std::vector<std::int64_t> out(rows, 0);
  for (std::size_t cell = 0; cell < schema.cell_count(); ++cell) {
    const auto idx = schema.unflatten_index(cell);
    std::int64_t row = 0;
    bool dropped = false;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      if (gid[a][idx[a]] < 0) {
        dropped = true;
        break;
      }
      row = row * static_cast<std::int64_t>(counts[a]) + gid[a][idx[a]];
    }
    if (!dropped) out[row] += x[cell];
  }
  return out;
}

}  // namespace

TEST_CASE("flatten_index is the row-major bijection") {
  const Schema s = schema_2x3();
  CHECK(s.cell_count() == 6);
  CHECK(s.flatten_index(std::vector<std::size_t>{0, 0}) == 0);
  CHECK(s.flatten_index(std::vector<std::size_t>{1, 2}) == 5);
  // Derived by enumerating the 6 tuples in row-major order.
  CHECK(s.flatten_index(std::vector<std::size_t>{1, 0}) == 3);
  for (std::size_t cell = 0; cell < 6; ++cell)
    CHECK(s.flatten_index(s.unflatten_index(cell)) == cell);
  CHECK_THROWS_AS(s.flatten_index(std::vector<std::size_t>{2, 0}), std::out_of_range);
  CHECK_THROWS_AS(s.flatten_index(std::vector<std::size_t>{0, 3}), std::out_of_range);
}

TEST_CASE("schema validation") {
  CHECK_THROWS(Schema(std::vector<AttributeSpec>{{"A", {}}}));
  CHECK_THROWS(Schema(std::vector<AttributeSpec>{{"A", {"x", "x"}}}));
  CHECK_THROWS(Schema(std::vector<AttributeSpec>{{"A", {"x"}}, {"A", {"y"}}}));
  CHECK_THROWS(Histogram(schema_2x3(), {1, 2, 3}));
}

TEST_CASE("total and detailed query groups") {
  const Schema s = schema_2x3();
  const Schema s2({{"A", {"a0", "a1"}}});
  const Histogram x(s2, {3, 4});
  CHECK(total_query(s2).evaluate(x) == std::vector<std::int64_t>{7});
  CHECK(detailed_query(s2).evaluate(x) == std::vector<std::int64_t>{3, 4});
  CHECK(total_query(s).kind() == QueryKind::kTotal);
  CHECK(detailed_query(s).kind() == QueryKind::kDetailed);
  // Stacking TOTAL and DETAILED answers is just their concatenation.
  const auto t = total_query(s2).evaluate(x);
  const auto d = detailed_query(s2).evaluate(x);
  CHECK(t[0] == 7);
  CHECK(d == std::vector<std::int64_t>{3, 4});
}

TEST_CASE("build_marginal follows the recode definition") {
  const Schema s = schema_2x3();
  const Histogram x(s, {1, 2, 3, 4, 5, 6});

  SUBCASE("no recodes is the total query") {
    const QueryGroup q = build_marginal(s, {}, "t");
    CHECK(q.kind() == QueryKind::kTotal);
    CHECK(q.evaluate(x) == std::vector<std::int64_t>{21});
  }
  SUBCASE("identity recodes give the detailed query") {
    const QueryGroup q =
        build_marginal(s, {{"A", {{0}, {1}}}, {"B", {{0}, {1}, {2}}}}, "d");
    CHECK(q.kind() == QueryKind::kDetailed);
    CHECK(q.evaluate(x) == std::vector<std::int64_t>{1, 2, 3, 4, 5, 6});
  }
  SUBCASE("recode B into {0},{1,2}, marginalize A") {
    const QueryGroup q = build_marginal(s, {{"B", {{0}, {1, 2}}}}, "m");
    CHECK(q.rows() == 2);
    CHECK(q.evaluate(x) == std::vector<std::int64_t>{1 + 4, 2 + 3 + 5 + 6});
  }
  SUBCASE("overlapping groups are rejected") {
    CHECK_THROWS_AS(build_marginal(s, {{"B", {{0, 1}, {1, 2}}}}, "bad"), std::invalid_argument);
  }
}

TEST_CASE("evaluate equals brute-force cell summation on random schemas") {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n1 = 1 + gen() % 4, n2 = 1 + gen() % 4;
    std::vector<std::string> l1, l2;
    for (std::size_t i = 0; i < n1; ++i) l1.push_back("a" + std::to_string(i));
    for (std::size_t i = 0; i < n2; ++i) l2.push_back("b" + std::to_string(i));
    const Schema s({{"A", l1}, {"B", l2}});
    if (s.cell_count() > 20) continue;
    std::vector<std::int64_t> counts(s.cell_count());
    for (auto& v : counts) v = gen() % 9;
    const Histogram x(s, counts);

    std::vector<Recode> recodes;
    if (gen() % 2) {  // random disjoint grouping of A, possibly dropping levels
      Recode r{"A", {}};
      std::vector<std::size_t> pool(n1);
      for (std::size_t i = 0; i < n1; ++i) pool[i] = i;
      while (!pool.empty()) {
        std::vector<std::size_t> g;
        const std::size_t take = 1 + gen() % pool.size();
        for (std::size_t i = 0; i < take; ++i) {
          g.push_back(pool.back());
          pool.pop_back();
        }
        if (gen() % 4 != 0) r.groups.push_back(g);  // sometimes drop a group
      }
      if (!r.groups.empty()) recodes.push_back(r);
    }
    const QueryGroup q = build_marginal(s, recodes, "q");
    CHECK(q.evaluate(x) == brute_marginal(s, recodes, x));
  }
}

TEST_CASE("kronecker composition over attributes") {
  // The row_of mapping of a two-attribute marginal equals the Kronecker
  // composition of the single-attribute mappings, checked entrywise.
  std::mt19937 gen(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n1 = 2 + gen() % 3, n2 = 2 + gen() % 3;
    std::vector<std::string> l1, l2;
    for (std::size_t i = 0; i < n1; ++i) l1.push_back("a" + std::to_string(i));
    for (std::size_t i = 0; i < n2; ++i) l2.push_back("b" + std::to_string(i));
    const Schema s({{"A", l1}, {"B", l2}});
    if (s.cell_count() > 64) continue;

    Recode ra{"A", {}};
    for (std::size_t i = 0; i < n1; ++i) ra.groups.push_back({i});
    Recode rb{"B", {{0}, {1, n2 - 1}}};
    if (n2 == 2) rb = Recode{"B", {{0}, {1}}};

    const QueryGroup qa = build_marginal(s, {ra}, "qa");       // rows index A levels
    const QueryGroup qb = build_marginal(s, {rb}, "qb");       // rows index B groups
    const QueryGroup qab = build_marginal(s, {ra, rb}, "qab"); // rows = A x B-groups
    for (std::size_t cell = 0; cell < s.cell_count(); ++cell) {
      const std::int32_t a_row = qa.row_of(cell);
      const std::int32_t b_row = qb.row_of(cell);
      if (a_row < 0 || b_row < 0)
        CHECK(qab.row_of(cell) == -1);
      else
        CHECK(qab.row_of(cell) ==
              a_row * static_cast<std::int32_t>(qb.rows()) + b_row);
    }
  }
}

namespace {

// Brute-force L2 sensitivity over all bounded-neighbor pairs: one record
// moves between two cells.
double brute_sensitivity(const QueryGroup& q) {
  double best = 0.0;
  for (std::size_t a = 0; a < q.cells(); ++a) {
    for (std::size_t b = 0; b < q.cells(); ++b) {
      if (a == b) continue;
      double sq = 0.0;
      for (std::size_t r = 0; r < q.rows(); ++r) {
        const double va = q.row_of(a) == static_cast<std::int32_t>(r) ? 1.0 : 0.0;
        const double vb = q.row_of(b) == static_cast<std::int32_t>(r) ? 1.0 : 0.0;
        sq += (vb - va) * (vb - va);
      }
      best = std::max(best, sq);
    }
  }
  return std::sqrt(best);
}

}  // namespace

TEST_CASE("group L2 sensitivity under bounded neighbors") {
  const Schema s3({{"A", {"x", "y", "z"}}});
  // Exhaustive marginal group: sqrt(2).
  const QueryGroup d = detailed_query(s3);
  CHECK(group_l2_sensitivity(d) == doctest::Approx(std::sqrt(2.0)));
  // Total query: unchanged under bounded neighbors.
  CHECK(group_l2_sensitivity(total_query(s3)) == doctest::Approx(0.0));
  // Dropping one level: a record can move from a covered to a dropped cell.
  const QueryGroup partial = build_marginal(s3, {{"A", {{0, 1}}}}, "p");
  CHECK(group_l2_sensitivity(partial) == doctest::Approx(1.0));
  CHECK(brute_sensitivity(partial) == doctest::Approx(1.0));

  std::mt19937 gen(99);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + gen() % 5;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back("l" + std::to_string(i));
    const Schema s({{"A", labels}, {"B", {"u", "v"}}});
    if (s.cell_count() > 12) continue;
    Recode r{"A", {}};
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    while (!pool.empty()) {
      std::vector<std::size_t> g;
      const std::size_t take = 1 + gen() % pool.size();
      for (std::size_t i = 0; i < take; ++i) {
        g.push_back(pool.back());
        pool.pop_back();
      }
      if (gen() % 3 != 0) r.groups.push_back(g);
    }
    if (r.groups.empty()) continue;
    const QueryGroup q = build_marginal(s, {r}, "q");
    CHECK(group_l2_sensitivity(q) == doctest::Approx(brute_sensitivity(q)));
  }
}
