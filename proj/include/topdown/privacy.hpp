#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "topdown/rational.hpp"
#include "topdown/schema.hpp"
#include "topdown/spine.hpp"
#include "topdown/strategy.hpp"

namespace topdown {

// Deterministic bit source. Substreams are derived by keyed mixing so that
// per-node noise is independent of worker scheduling.
class BitSource {
 public:
  explicit BitSource(std::uint64_t seed);
  BitSource substream(std::string_view key) const;

  bool bit();
  std::uint64_t raw64();
  // Uniform integer in [0, n), n > 0, by rejection on bit blocks.
  BigInt below(const BigInt& n);
  std::uint64_t below_u64(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
  std::uint64_t word_ = 0;
  int avail_ = 0;
};

// Exact Bernoulli(p) for rational p in [0, 1].
bool bernoulli(const Rational& p, BitSource& bits);
// Exact Bernoulli(exp(-gamma)) for rational gamma >= 0, by the series method.
bool bernoulli_exp(const Rational& gamma, BitSource& bits);
// Two-sided geometric with scale t >= 1 (probability proportional to
// exp(-|x|/t)); the rejection proposal for the discrete Gaussian.
std::int64_t sample_discrete_laplace(std::int64_t t, BitSource& bits);

// Exact discrete Gaussian N_Z(0, sigma2) using only integer/rational
// arithmetic on random bits; no floating-point transforms.
std::int64_t sample_discrete_gaussian(const Rational& sigma2, BitSource& bits);

// Truncated-sum evaluations of the N_Z(0, sigma2) pmf and variance; the
// truncation tail is bounded below 1e-12 of the result.
double discrete_gaussian_pmf(std::int64_t x, const Rational& sigma2);
double discrete_gaussian_pmf(std::int64_t x, double sigma2);
double discrete_gaussian_variance(const Rational& sigma2);
double discrete_gaussian_variance(double sigma2);

// Global scale plus per-node rho shares; group shares live in the strategy.
struct AllocationTable {
  Rational psi;           // sigma2 = psi^2 / (c * d)
  NodeShares node_share;  // c per node id
};

struct NoisyMeasurement {
  std::string node_id;
  std::string group;
  std::vector<std::int64_t> values;
  Rational sigma2;
};

// Verifies the allocation invariants exactly (every root-to-leaf share path
// sums to 1; per-level group shares sum to 1) and returns rho = 1/psi^2.
// Throws std::invalid_argument naming the offending node or level.
Rational total_rho(const AllocationTable& alloc, const Spine& spine,
                   const QueryStrategy& strategy);

Rational measurement_sigma2(const AllocationTable& alloc, const std::string& node_id,
                            const Rational& group_share);

// rho -> epsilon at a given delta; the conversion that overestimates delta,
// epsilon = rho + 2*sqrt(rho*ln(1/delta)).
double epsilon_of_rho(double rho, double delta);

struct AuditReport {
  Rational max_attained;     // max of (1/psi^2) sum c*d*(dq)^2 over neighbor pairs
  Rational bound;            // 2*rho
  bool tight = false;        // bound attained exactly
  std::string witness;       // neighbor pair achieving the max
};

// Brute-force verification of the accounting theorem on desk-scale inputs:
// enumerates every bounded-neighbor pair (same-leaf cell changes and
// cross-leaf moves) and checks the weighted squared query change against
// 2*rho. Throws std::runtime_error with the witness pair on violation.
AuditReport sensitivity_audit(const QueryStrategy& strategy, const AllocationTable& alloc,
                              const Spine& spine, const Schema& schema);

}  // namespace topdown
