#include "topdown/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace topdown {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

BitSource::BitSource(std::uint64_t seed) : gen_(seed), seed_(seed) {}

BitSource BitSource::substream(std::string_view key) const {
  return BitSource(splitmix64(seed_ ^ fnv1a64(key)));
}

std::uint64_t BitSource::raw64() { return gen_(); }

bool BitSource::bit() {
  if (avail_ == 0) {
    word_ = gen_();
    avail_ = 64;
  }
  const bool b = word_ & 1;
  word_ >>= 1;
  --avail_;
  return b;
}

std::uint64_t BitSource::below_u64(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below_u64: n must be positive");
  if (n == 1) return 0;
  int nbits = 64 - __builtin_clzll(n - 1);
  for (;;) {
    std::uint64_t v = 0;
    for (int got = 0; got < nbits; got += 64) {
      const int take = std::min(64, nbits - got);
      std::uint64_t chunk = raw64();
      if (take < 64) chunk &= (1ULL << take) - 1;
      v = take == 64 ? chunk : ((v << take) | chunk);
    }
    if (v < n) return v;
  }
}

BigInt BitSource::below(const BigInt& n) {
  if (n <= 0) throw std::invalid_argument("below: n must be positive");
  if (n <= std::uint64_t(0xffffffffffffffffULL))
    return BigInt(below_u64(n.convert_to<std::uint64_t>()));
  const unsigned nbits = boost::multiprecision::msb(n) + 1;
  for (;;) {
    BigInt v = 0;
    for (unsigned got = 0; got < nbits; got += 64) {
      const unsigned take = std::min<unsigned>(64, nbits - got);
      std::uint64_t chunk = raw64();
      if (take < 64) chunk &= (1ULL << take) - 1;
      v <<= take;
      v |= chunk;
    }
    if (v < n) return v;
  }
}

bool bernoulli(const Rational& p, BitSource& bits) {
  if (p < Rational(0) || p > Rational(1)) throw std::invalid_argument("bernoulli: p outside [0,1]");
  if (p.numerator() == 0) return false;
  if (p == Rational(1)) return true;
  return bits.below(p.denominator()) < p.numerator();
}

namespace {

// Bernoulli(exp(-gamma)) for 0 <= gamma <= 1. Counts how far the alternating
// series survives: accept iff the stopping index is odd.
bool bernoulli_exp_unit(const Rational& gamma, BitSource& bits) {
  BigInt k = 1;
  for (;;) {
    if (!bernoulli(gamma / Rational(k), bits)) break;
    ++k;
  }
  return (k % 2) == 1;
}

// 128-bit fast path. Identical arithmetic on machine words; every branch
// that could overflow defers to the arbitrary-precision route instead.
using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

u128 below_u128(u128 n, BitSource& bits) {
  const std::uint64_t hi = static_cast<std::uint64_t>(n >> 64);
  if (hi == 0) return bits.below_u64(static_cast<std::uint64_t>(n));
  const int nbits = 128 - __builtin_clzll(hi);
  for (;;) {
    u128 v = bits.raw64();
    v &= (nbits - 64 == 64) ? ~u128(0) >> 64 : ((u128(1) << (nbits - 64)) - 1);
    v = (v << 64) | bits.raw64();
    if (v < n) return v;
  }
}

bool bernoulli_frac(u128 num, u128 den, BitSource& bits) {
  if (num == 0) return false;
  if (num >= den) return true;
  return below_u128(den, bits) < num;
}

BigInt to_bigint(u128 v) {
  BigInt out = static_cast<std::uint64_t>(v >> 64);
  out <<= 64;
  out |= static_cast<std::uint64_t>(v);
  return out;
}

// gamma = num/den <= 1.
bool bernoulli_exp_unit_frac(u128 num, u128 den, BitSource& bits) {
  u128 k = 1;
  if (num != 0) {
    const u128 g = gcd128(num, den);
    num /= g;
    den /= g;
    for (;;) {
      if (den > (~u128(0)) / k) {
        // den*k would overflow (astronomically deep chain); finish exactly.
        const BigInt bn = to_bigint(num), bd = to_bigint(den);
        BigInt kk = to_bigint(k);
        while (bernoulli(Rational(bn, bd * kk), bits)) ++kk;
        return (kk % 2) == 1;
      }
      if (!bernoulli_frac(num, den * k, bits)) break;
      ++k;
    }
  }
  return (k & 1) == 1;
}

bool bernoulli_exp_frac(u128 num, u128 den, BitSource& bits) {
  const u128 whole = num / den;
  for (u128 i = 0; i < whole; ++i)
    if (!bernoulli_exp_unit_frac(1, 1, bits)) return false;
  return bernoulli_exp_unit_frac(num - whole * den, den, bits);
}

std::int64_t discrete_laplace_frac(std::uint64_t t, BitSource& bits) {
  for (;;) {
    const std::uint64_t u = bits.below_u64(t);
    if (!bernoulli_exp_unit_frac(u, t, bits)) continue;
    std::int64_t v = 0;
    while (bernoulli_exp_unit_frac(1, 1, bits)) ++v;
    const std::int64_t magnitude = static_cast<std::int64_t>(u) + static_cast<std::int64_t>(t) * v;
    const bool negative = bits.bit();
    if (negative && magnitude == 0) continue;
    return negative ? -magnitude : magnitude;
  }
}

}  // namespace

bool bernoulli_exp(const Rational& gamma, BitSource& bits) {
  if (gamma < Rational(0)) throw std::invalid_argument("bernoulli_exp: gamma must be >= 0");
  if (gamma <= Rational(1)) return bernoulli_exp_unit(gamma, bits);
  // exp(-gamma) = exp(-1)^floor(gamma) * exp(-(gamma - floor(gamma))).
  const BigInt whole = gamma.numerator() / gamma.denominator();
  for (BigInt i = 0; i < whole; ++i)
    if (!bernoulli_exp_unit(Rational(1), bits)) return false;
  return bernoulli_exp_unit(gamma - Rational(whole), bits);
}

std::int64_t sample_discrete_laplace(std::int64_t t, BitSource& bits) {
  if (t < 1) throw std::invalid_argument("discrete laplace: scale must be >= 1");
  for (;;) {
    const std::uint64_t u = bits.below_u64(static_cast<std::uint64_t>(t));
    if (!bernoulli_exp(Rational(BigInt(u), BigInt(t)), bits)) continue;
    std::int64_t v = 0;
    while (bernoulli_exp(Rational(1), bits)) ++v;
    const std::int64_t magnitude = static_cast<std::int64_t>(u) + t * v;
    const bool negative = bits.bit();
    if (negative && magnitude == 0) continue;
    return negative ? -magnitude : magnitude;
  }
}

std::int64_t sample_discrete_gaussian(const Rational& sigma2, BitSource& bits) {
  if (sigma2 <= Rational(0)) throw std::invalid_argument("sigma2 must be positive");
  // t = floor(sigma) + 1, all in integer arithmetic.
  const BigInt n = sigma2.numerator(), d = sigma2.denominator();
  BigInt t = boost::multiprecision::sqrt(BigInt(n / d));
  while ((t + 1) * (t + 1) * d <= n) ++t;
  while (t > 0 && t * t * d > n) --t;
  ++t;
  const std::int64_t ti = t.convert_to<std::int64_t>();

  // Machine-word route whenever sigma2 and the proposal magnitudes fit; the
  // guards push rare large values onto the exact big-integer route below.
  if (n <= BigInt(std::uint64_t(1) << 56) && d <= BigInt(std::uint64_t(1) << 56) &&
      n * d <= BigInt(std::uint64_t(1) << 62) && ti <= static_cast<std::int64_t>(1) << 30) {
    const u128 nn = n.convert_to<std::uint64_t>();
    const u128 dd = d.convert_to<std::uint64_t>();
    const u128 tt = static_cast<std::uint64_t>(ti);
    // |y|*d*t - n must stay within 63 bits so its square fits.
    const u128 y_cap = ((u128(1) << 63) - nn) / (dd * tt);
    const u128 gamma_den = 2 * nn * dd * tt * tt;  // <= 2^124 by the guards
    for (;;) {
      const std::int64_t y = discrete_laplace_frac(static_cast<std::uint64_t>(ti), bits);
      const u128 ya = static_cast<u128>(y < 0 ? -y : y);
      if (ya > y_cap) {
        // Exact fallback for this single proposal.
        const Rational r = Rational(BigInt(y < 0 ? -y : y)) - sigma2 / Rational(t);
        if (bernoulli_exp((r * r) / (Rational(2) * sigma2), bits)) return y;
        continue;
      }
      const u128 ydt = ya * dd * tt;
      const u128 a = ydt > nn ? ydt - nn : nn - ydt;
      if (bernoulli_exp_frac(a * a, gamma_den, bits)) return y;
    }
  }

  const Rational sigma2_over_t = sigma2 / Rational(t);
  for (;;) {
    const std::int64_t y = sample_discrete_laplace(ti, bits);
    const Rational r = Rational(BigInt(y < 0 ? -y : y)) - sigma2_over_t;
    const Rational gamma = (r * r) / (Rational(2) * sigma2);
    if (bernoulli_exp(gamma, bits)) return y;
  }
}

namespace {

// Shared truncated-sum walk; stops once terms fall below 1e-18 relative
// weight, which bounds the geometric tail far under 1e-12.
template <typename F>
void dg_series(double sigma2, F&& accumulate) {
  const double inv = 1.0 / (2.0 * sigma2);
  accumulate(0, 1.0);
  for (std::int64_t y = 1;; ++y) {
    const double term = std::exp(-static_cast<double>(y) * static_cast<double>(y) * inv);
    accumulate(y, term);
    if (term < 1e-18 && static_cast<double>(y) > 2.0 * std::sqrt(sigma2)) break;
  }
}

double dg_normalizer(double sigma2) {
  double z = 0.0;
  dg_series(sigma2, [&](std::int64_t y, double term) { z += (y == 0 ? 1.0 : 2.0) * term; });
  return z;
}

}  // namespace

double discrete_gaussian_pmf(std::int64_t x, double sigma2) {
  if (sigma2 <= 0) throw std::invalid_argument("sigma2 must be positive");
  const double num = std::exp(-static_cast<double>(x) * static_cast<double>(x) / (2.0 * sigma2));
  return num / dg_normalizer(sigma2);
}

double discrete_gaussian_pmf(std::int64_t x, const Rational& sigma2) {
  return discrete_gaussian_pmf(x, to_double(sigma2));
}

double discrete_gaussian_variance(double sigma2) {
  if (sigma2 <= 0) throw std::invalid_argument("sigma2 must be positive");
  double z = 0.0, second = 0.0;
  dg_series(sigma2, [&](std::int64_t y, double term) {
    const double w = (y == 0 ? 1.0 : 2.0);
    z += w * term;
    second += w * static_cast<double>(y) * static_cast<double>(y) * term;
  });
  return second / z;
}

double discrete_gaussian_variance(const Rational& sigma2) {
  return discrete_gaussian_variance(to_double(sigma2));
}

const LevelStrategy& QueryStrategy::at(int level) const {
  if (level < 0 || level >= static_cast<int>(levels.size()))
    throw std::out_of_range("no strategy for level " + std::to_string(level));
  return levels[level];
}

int QueryStrategy::group_index(int level, const std::string& name) const {
  const auto& ls = at(level);
  for (std::size_t i = 0; i < ls.groups.size(); ++i)
    if (ls.groups[i].name() == name) return static_cast<int>(i);
  return -1;
}

void QueryStrategy::validate() const {
  for (std::size_t lv = 0; lv < levels.size(); ++lv) {
    const auto& ls = levels[lv];
    if (ls.groups.size() != ls.shares.size())
      throw std::invalid_argument("level " + std::to_string(lv) +
                                  ": group/share count mismatch");
    Rational sum(0);
    for (const auto& s : ls.shares) {
      if (s < Rational(0)) throw std::invalid_argument("negative group share");
      sum += s;
    }
    if (!ls.groups.empty() && sum != Rational(1))
      throw std::invalid_argument("group shares at level " + std::to_string(lv) + " sum to " +
                                  to_string(sum) + ", expected 1");
    const auto check_schedule = [&](const std::vector<std::vector<int>>& passes, std::size_t n,
                                    const char* what) {
      for (const auto& pass : passes)
        for (const int g : pass)
          if (g < 0 || g >= static_cast<int>(n))
            throw std::invalid_argument(std::string(what) + " schedule references group " +
                                        std::to_string(g) + " at level " + std::to_string(lv));
    };
    check_schedule(ls.l2_passes, ls.groups.size(), "least-squares");
    check_schedule(ls.rounder_passes, ls.rounder_groups.size(), "rounder");
  }
}

void apply_default_passes(const Schema& schema, QueryStrategy& strategy) {
  const int last = static_cast<int>(strategy.levels.size()) - 1;
  for (int lv = 0; lv <= last; ++lv) {
    auto& ls = strategy.levels[lv];
    if (ls.groups.empty()) continue;

    int total_idx = -1;
    for (std::size_t g = 0; g < ls.groups.size(); ++g)
      if (ls.groups[g].kind() == QueryKind::kTotal) total_idx = static_cast<int>(g);

    if (ls.l2_passes.empty()) {
      const bool middle = lv != 0 && lv != last;
      if (middle && total_idx >= 0 && ls.groups.size() > 1) {
        std::vector<int> rest;
        for (std::size_t g = 0; g < ls.groups.size(); ++g)
          if (static_cast<int>(g) != total_idx) rest.push_back(static_cast<int>(g));
        ls.l2_passes = {{total_idx}, rest};
      } else {
        std::vector<int> all(ls.groups.size());
        for (std::size_t g = 0; g < all.size(); ++g) all[g] = static_cast<int>(g);
        ls.l2_passes = {all};
      }
    }
    if (ls.rounder_groups.empty()) {
      ls.rounder_groups = {total_query(schema), detailed_query(schema)};
      ls.rounder_passes.clear();
    }
    if (ls.rounder_passes.empty()) {
      if (ls.l2_passes.size() > 1) {
        ls.rounder_passes = {{0}, {1}};
      } else {
        ls.rounder_passes = {{0, 1}};
      }
      // Clamp to however many rounder groups exist.
      for (auto& pass : ls.rounder_passes)
        pass.erase(std::remove_if(pass.begin(), pass.end(),
                                  [&](int g) {
                                    return g >= static_cast<int>(ls.rounder_groups.size());
                                  }),
                   pass.end());
      ls.rounder_passes.erase(
          std::remove_if(ls.rounder_passes.begin(), ls.rounder_passes.end(),
                         [](const std::vector<int>& p) { return p.empty(); }),
          ls.rounder_passes.end());
    }
  }
}

Rational total_rho(const AllocationTable& alloc, const Spine& spine,
                   const QueryStrategy& strategy) {
  if (alloc.psi <= Rational(0)) throw std::invalid_argument("global scale psi must be positive");
  strategy.validate();
  for (const auto& [id, share] : alloc.node_share) {
    if (share < Rational(0))
      throw std::invalid_argument("negative rho share at node '" + id + "'");
  }
  const auto node_share = [&](int v) {
    const auto it = alloc.node_share.find(spine.node(v).id);
    return it == alloc.node_share.end() ? Rational(0) : it->second;
  };
  for (const int leaf : spine.leaves()) {
    Rational sum(0);
    for (int v = leaf; v >= 0; v = spine.node(v).parent) sum += node_share(v);
    if (sum != Rational(1))
      throw std::invalid_argument("rho shares along the path to leaf '" + spine.node(leaf).id +
                                  "' sum to " + to_string(sum) + ", expected 1");
  }
  if (static_cast<int>(strategy.levels.size()) != spine.leaf_level() + 1)
    throw std::invalid_argument("strategy does not cover every spine level");
  return Rational(1) / (alloc.psi * alloc.psi);
}

Rational measurement_sigma2(const AllocationTable& alloc, const std::string& node_id,
                            const Rational& group_share) {
  const auto it = alloc.node_share.find(node_id);
  if (it == alloc.node_share.end() || it->second == Rational(0))
    throw std::invalid_argument("node '" + node_id + "' has no rho share");
  if (group_share == Rational(0)) throw std::invalid_argument("group has zero rho share");
  return (alloc.psi * alloc.psi) / (it->second * group_share);
}

double epsilon_of_rho(double rho, double delta) {
  if (rho <= 0) throw std::invalid_argument("rho must be positive");
  if (delta <= 0 || delta >= 1) throw std::invalid_argument("delta must be in (0,1)");
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

namespace {

// Squared change of one query group's answers when a record moves from cell
// `from` to cell `to` (either may be -1 for "not in this node").
int squared_group_change(const QueryGroup& q, int from, int to) {
  const int rf = from >= 0 ? q.row_of(from) : -1;
  const int rt = to >= 0 ? q.row_of(to) : -1;
  if (rf == rt) return 0;
  return (rf >= 0 ? 1 : 0) + (rt >= 0 ? 1 : 0);
}

}  // namespace

AuditReport sensitivity_audit(const QueryStrategy& strategy, const AllocationTable& alloc,
                              const Spine& spine, const Schema& schema) {
  if (schema.cell_count() > 12 || spine.leaves().size() > 6)
    throw std::invalid_argument("sensitivity_audit is a desk-scale check (c* <= 12, <= 6 leaves)");
  const Rational rho = total_rho(alloc, spine, strategy);
  const Rational bound = Rational(2) * rho;
  const Rational inv_psi2 = Rational(1) / (alloc.psi * alloc.psi);

  const auto path_of = [&](int leaf) {
    std::vector<int> path;
    for (int v = leaf; v >= 0; v = spine.node(v).parent) path.push_back(v);
    return path;
  };
  const auto node_share = [&](int v) {
    const auto it = alloc.node_share.find(spine.node(v).id);
    return it == alloc.node_share.end() ? Rational(0) : it->second;
  };
  // Weighted squared change at one node when a record moves from -> to.
  const auto node_term = [&](int v, int from, int to) {
    Rational term(0);
    const auto& ls = strategy.at(spine.node(v).level);
    for (std::size_t g = 0; g < ls.groups.size(); ++g) {
      const int sq = squared_group_change(ls.groups[g], from, to);
      if (sq) term += ls.shares[g] * Rational(sq);
    }
    return node_share(v) * term;
  };

  AuditReport report;
  report.bound = bound;
  report.max_attained = Rational(0);
  const auto leaves = spine.leaves();
  const int cells = static_cast<int>(schema.cell_count());

  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto path_i = path_of(leaves[i]);
    for (std::size_t j = i; j < leaves.size(); ++j) {
      const auto path_j = path_of(leaves[j]);
      const std::set<int> on_j(path_j.begin(), path_j.end());
      for (int a = 0; a < cells; ++a) {
        for (int b = 0; b < cells; ++b) {
          if (i == j && a == b) continue;
          // A record in leaf i cell a becomes a record in leaf j cell b.
          Rational total(0);
          for (const int v : path_i) total += node_term(v, a, on_j.count(v) ? b : -1);
          for (const int v : path_j)
            if (!std::count(path_i.begin(), path_i.end(), v)) total += node_term(v, -1, b);
          total *= inv_psi2;
          if (total > report.max_attained) {
            report.max_attained = total;
            report.witness = spine.node(leaves[i]).id + ":cell" + std::to_string(a) + " -> " +
                             spine.node(leaves[j]).id + ":cell" + std::to_string(b);
          }
        }
      }
    }
  }
  report.tight = report.max_attained == bound;
  if (report.max_attained > bound)
    throw std::runtime_error("sensitivity audit failed: " + to_string(report.max_attained) +
                             " > 2*rho = " + to_string(bound) + " at " + report.witness);
  return report;
}

}  // namespace topdown
