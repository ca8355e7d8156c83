#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "topdown/app.hpp"
#include "topdown/config.hpp"
#include "topdown/engine.hpp"
#include "topdown/evaluation.hpp"
#include "topdown/oracle.hpp"
#include "topdown/privacy.hpp"
#include "topdown/schema.hpp"
#include "topdown/solvers.hpp"
#include "topdown/spine.hpp"

namespace py = pybind11;
using namespace topdown;

namespace {

Rational fraction_of(const std::string& text) { return parse_fraction(text); }

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw std::invalid_argument("ragged matrix");
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical differentially private tabulation engine";

  py::class_<Schema>(m, "Schema")
      .def(py::init([](const std::vector<std::pair<std::string, std::vector<std::string>>>& a) {
        std::vector<AttributeSpec> attrs;
        for (const auto& [name, levels] : a) attrs.push_back({name, levels});
        return Schema(std::move(attrs));
      }))
      .def_property_readonly("cell_count", &Schema::cell_count)
      .def("flatten_index",
           [](const Schema& s, const std::vector<std::size_t>& idx) {
             return s.flatten_index(idx);
           })
      .def("unflatten_index", &Schema::unflatten_index);

  py::class_<QueryGroup>(m, "QueryGroup")
      .def_property_readonly("name", &QueryGroup::name)
      .def_property_readonly("rows", &QueryGroup::rows)
      .def("row_of", &QueryGroup::row_of)
      .def("evaluate", [](const QueryGroup& q, const Schema& s,
                          const std::vector<std::int64_t>& x) {
        return q.evaluate(Histogram(s, x));
      });

  m.def("total_query", &total_query);
  m.def("detailed_query", &detailed_query);
  m.def("build_marginal",
        [](const Schema& s,
           const std::vector<std::pair<std::string, std::vector<std::vector<std::size_t>>>>& rec,
           const std::string& name) {
          std::vector<Recode> recodes;
          for (const auto& [attr, groups] : rec) recodes.push_back({attr, groups});
          return build_marginal(s, recodes, name);
        });
  m.def("group_l2_sensitivity", &group_l2_sensitivity);

  py::class_<BitSource>(m, "BitSource").def(py::init<std::uint64_t>());
  m.def("sample_discrete_gaussian",
        [](const std::string& sigma2, BitSource& bits) {
          return sample_discrete_gaussian(fraction_of(sigma2), bits);
        });
  m.def("discrete_gaussian_samples",
        [](const std::string& sigma2, std::uint64_t seed, std::size_t n) {
          BitSource bits(seed);
          const Rational s2 = fraction_of(sigma2);
          std::vector<std::int64_t> out(n);
          for (auto& v : out) v = sample_discrete_gaussian(s2, bits);
          return out;
        });
  m.def("discrete_gaussian_pmf",
        [](std::int64_t x, double sigma2) { return discrete_gaussian_pmf(x, sigma2); });
  m.def("discrete_gaussian_variance",
        [](double sigma2) { return discrete_gaussian_variance(sigma2); });
  m.def("epsilon_of_rho", &epsilon_of_rho);

  py::class_<Spine>(m, "Spine")
      .def_static("load_csv",
                  [](const std::string& text) {
                    std::istringstream in(text);
                    return Spine::load_csv(in);
                  })
      .def_static("load_csv_file", &Spine::load_csv_file)
      .def_property_readonly("level_names", &Spine::level_names)
      .def_property_readonly("node_count", &Spine::node_count)
      .def("leaf_ids", [](const Spine& s) {
        std::vector<std::string> ids;
        for (const int leaf : s.leaves()) ids.push_back(s.node(leaf).id);
        return ids;
      });

  m.def("build_aian_spine", [](const Spine& s) { return build_aian_spine(s); });
  m.def("off_spine_distance", [](const Spine& s, const std::string& name,
                                 const std::vector<std::string>& leaf_ids) {
    return off_spine_distance({name, leaf_ids}, s);
  });
  m.def("optimize_block_groups",
        [](const Spine& s,
           const std::vector<std::pair<std::string, std::vector<std::string>>>& targets) {
          std::vector<OffSpineEntity> entities;
          for (const auto& [name, ids] : targets) entities.push_back({name, ids});
          return optimize_block_groups(s, entities);
        });

  m.def("nnls_solve",
        [](const std::vector<std::vector<double>>& q, const std::vector<double>& w,
           const std::vector<double>& target,
           const std::vector<std::pair<std::vector<double>, double>>& eq_rows,
           const std::vector<std::pair<std::vector<double>, double>>& ub_rows) {
          const std::size_t n = q.empty() ? (eq_rows.empty() ? 0 : eq_rows[0].first.size())
                                          : q[0].size();
          LeastSquaresProblem p;
          p.query = to_matrix(q, n);
          p.weight = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
          p.target = Eigen::Map<const Eigen::VectorXd>(target.data(), target.size());
          p.constraints = ConstraintSet(n);
          const auto sparse = [&](const std::vector<double>& row, double rhs, std::string tag) {
            SparseRow r;
            for (std::size_t j = 0; j < row.size(); ++j)
              if (row[j] != 0.0) r.entries.emplace_back(j, row[j]);
            r.rhs = rhs;
            r.tag = std::move(tag);
            return r;
          };
          int i = 0;
          for (const auto& [row, rhs] : eq_rows)
            p.constraints.add_equality(sparse(row, rhs, "eq" + std::to_string(i++)));
          i = 0;
          for (const auto& [row, rhs] : ub_rows)
            p.constraints.add_upper_bound(sparse(row, rhs, "ub" + std::to_string(i++)));
          const RealSolution sol = nnls_solve(p);
          return std::make_tuple(
              std::vector<double>(sol.x.data(), sol.x.data() + sol.x.size()), sol.objective,
              sol.iterations);
        });

  m.def("round_solve",
        [](const std::vector<double>& xt, const std::vector<std::vector<double>>& objective,
           const std::vector<std::pair<std::vector<double>, double>>& eq_rows,
           const std::vector<std::pair<std::vector<double>, double>>& ub_rows) {
          const std::size_t n = xt.size();
          RounderProblem p;
          p.fractional_target = Eigen::Map<const Eigen::VectorXd>(xt.data(), n);
          p.constraints = ConstraintSet(n);
          const auto sparse = [&](const std::vector<double>& row, double rhs, std::string tag) {
            SparseRow r;
            for (std::size_t j = 0; j < row.size(); ++j)
              if (row[j] != 0.0) r.entries.emplace_back(j, row[j]);
            r.rhs = rhs;
            r.tag = std::move(tag);
            return r;
          };
          int i = 0;
          for (const auto& [row, rhs] : eq_rows)
            p.constraints.add_equality(sparse(row, rhs, "eq" + std::to_string(i++)));
          i = 0;
          for (const auto& [row, rhs] : ub_rows)
            p.constraints.add_upper_bound(sparse(row, rhs, "ub" + std::to_string(i++)));
          p.objective_rows = to_matrix(objective, n);
          const IntegerSolution sol = round_solve(p);
          return std::make_tuple(sol.x, sol.objective);
        });

  m.def("blau_index", &blau_index);

  // Config-driven application entry points.
  m.def("run", [](const std::string& config) { return run_app(load_run_plan(config)); });
  m.def("run_seeded", [](const std::string& config, std::uint64_t seed) {
    RunOverrides ov;
    ov.seed = seed;
    return run_app(load_run_plan(config), ov);
  });
  m.def("synthesize", [](const std::string& config, const std::string& out) {
    synthesize_app(load_run_plan(config), out);
  });
  m.def("report", [](const std::string& config, const std::string& mdf, const std::string& cef,
                     const std::string& out) {
    return report_app(load_run_plan(config), mdf, cef, out);
  });
  m.def("audit", [](const std::string& config) { return audit_app(load_run_plan(config)); });
  m.def("total_rho_of_config",
        [](const std::string& config) { return to_string(load_run_plan(config).rho); });
}
