#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/error.hpp"
#include "emvae/random.hpp"

namespace emvae::moo {

struct Bounds {
    std::vector<double> lo;
    std::vector<double> hi;

    std::size_t size() const noexcept { return lo.size(); }

    void validate() const {
        if (lo.size() != hi.size() || lo.empty()) throw ConfigError("bounds must be nonempty with equal lengths");
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i]))
                throw ConfigError("bound " + std::to_string(i) + " needs finite lo < hi");
    }

    bool contains(std::span<const double> g) const {
        if (g.size() != size()) return false;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(g[i] >= lo[i] && g[i] <= hi[i])) return false;
        return true;
    }
};

struct Evaluation {
    std::vector<double> objectives; // all minimized
    double violation = 0.0;         // 0 = feasible
};

struct Individual {
    std::vector<double> genome;
    std::vector<double> objectives;
    double violation = 0.0;
    std::size_t rank = 0;
    double crowding = 0.0;

    bool feasible() const noexcept { return violation == 0.0; }
};

struct Nsga2Config {
    std::size_t population = 200;
    std::size_t generations = 100;
    double crossover_prob = 0.9;
    double eta_c = 15.0;
    double mutation_prob = -1.0; // negative: 1 / genome length
    double eta_m = 20.0;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    void validate() const {
        if (population < 2 || population % 2 != 0) throw ConfigError("population must be even and >= 2");
        if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0)) throw ConfigError("crossover probability outside [0, 1]");
        if (mutation_prob > 1.0) throw ConfigError("mutation probability above 1");
        if (!(eta_c >= 0.0) || !(eta_m >= 0.0)) throw ConfigError("distribution indices must be >= 0");
    }

    double mutation_rate(std::size_t genome_len) const {
        return mutation_prob < 0.0 ? 1.0 / static_cast<double>(genome_len) : mutation_prob;
    }

    nlohmann::json to_json() const {
        return {{"population", population}, {"generations", generations}, {"crossover_prob", crossover_prob},
                {"eta_c", eta_c},           {"mutation_prob", mutation_prob}, {"eta_m", eta_m},
                {"seed", seed}};
    }
};

// Constrained domination: feasible beats infeasible, lower violation wins
// among infeasible, Pareto dominance among feasible.
inline bool dominates(std::span<const double> a, double va, std::span<const double> b, double vb) {
    if (a.size() != b.size()) throw DimensionError("objective vectors differ in length");
    const bool fa = va == 0.0, fb = vb == 0.0;
    if (fa && !fb) return true;
    if (!fa && fb) return false;
    if (!fa && !fb) return va < vb;
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) return false;
        if (a[i] < b[i]) strict = true;
    }
    return strict;
}

inline bool dominates(std::span<const double> a, std::span<const double> b) { return dominates(a, 0.0, b, 0.0); }

inline bool dominates(const Individual& a, const Individual& b) {
    return dominates(a.objectives, a.violation, b.objectives, b.violation);
}

// Fronts of indices, front 0 first; sets rank on each individual.
inline std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop) {
    const std::size_t n = pop.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> count(n, 0);
    std::vector<std::vector<std::size_t>> fronts(1);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            if (dominates(pop[p], pop[q])) {
                dominated[p].push_back(q);
                ++count[q];
            } else if (dominates(pop[q], pop[p])) {
                dominated[q].push_back(p);
                ++count[p];
            }
        }
    }
    for (std::size_t p = 0; p < n; ++p)
        if (count[p] == 0) {
            pop[p].rank = 0;
            fronts[0].push_back(p);
        }
    std::size_t i = 0;
    while (!fronts[i].empty()) {
        std::vector<std::size_t> next;
        for (auto p : fronts[i])
            for (auto q : dominated[p])
                if (--count[q] == 0) {
                    pop[q].rank = i + 1;
                    next.push_back(q);
                }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(next));
        ++i;
    }
    fronts.pop_back();
    return fronts;
}

// Crowding distance of each point of one front (rows = points).
inline std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objs) {
    const std::size_t n = objs.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(n, 0.0);
    if (n == 0) return d;
    if (n <= 2) return std::vector<double>(n, inf);
    const std::size_t m = objs.front().size();
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < m; ++k) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return objs[a][k] < objs[b][k]; });
        d[idx.front()] = inf;
        d[idx.back()] = inf;
        const double range = objs[idx.back()][k] - objs[idx.front()][k];
        if (!(range > 0.0) || !std::isfinite(range)) continue;
        for (std::size_t j = 1; j + 1 < n; ++j)
            d[idx[j]] += (objs[idx[j + 1]][k] - objs[idx[j - 1]][k]) / range;
    }
    return d;
}

inline void assign_crowding(std::vector<Individual>& pop, const std::vector<std::size_t>& front) {
    std::vector<std::vector<double>> objs;
    objs.reserve(front.size());
    for (auto i : front) objs.push_back(pop[i].objectives);
    const auto d = crowding_distance(objs);
    for (std::size_t j = 0; j < front.size(); ++j) pop[front[j]].crowding = d[j];
}

// Simulated binary crossover, each dimension recombined with probability 0.5
// and the two child values exchanged with probability 0.5; children are
// clipped to the bounds.
inline std::pair<std::vector<double>, std::vector<double>> sbx_crossover(std::span<const double> p1,
                                                                         std::span<const double> p2,
                                                                         const Bounds& b, double eta_c,
                                                                         std::mt19937_64& rng) {
    if (p1.size() != p2.size() || p1.size() != b.size()) throw DimensionError("sbx: genome length mismatch");
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> c1(p1.begin(), p1.end()), c2(p2.begin(), p2.end());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        const double swap_u = U(rng);
        const double u = U(rng);
        if (swap_u >= 0.5 || std::abs(p1[i] - p2[i]) < 1e-14) continue;
        const double beta = u <= 0.5 ? std::pow(2.0 * u, 1.0 / (eta_c + 1.0))
                                     : std::pow(1.0 / (2.0 * (1.0 - u)), 1.0 / (eta_c + 1.0));
        c1[i] = std::clamp(0.5 * ((1.0 + beta) * p1[i] + (1.0 - beta) * p2[i]), b.lo[i], b.hi[i]);
        c2[i] = std::clamp(0.5 * ((1.0 - beta) * p1[i] + (1.0 + beta) * p2[i]), b.lo[i], b.hi[i]);
        if (U(rng) < 0.5) std::swap(c1[i], c2[i]);
    }
    return {c1, c2};
}

// Bounded polynomial mutation applied per dimension with probability prob.
inline std::vector<double> polynomial_mutation(std::span<const double> g, const Bounds& b, double eta_m, double prob,
                                               std::mt19937_64& rng) {
    if (g.size() != b.size()) throw DimensionError("mutation: genome length mismatch");
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<double> out(g.begin(), g.end());
    const double pw = 1.0 / (eta_m + 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double gate = U(rng);
        const double u = U(rng);
        if (gate >= prob) continue;
        const double lo = b.lo[i], hi = b.hi[i], span = hi - lo;
        const double y = out[i];
        const double d1 = (y - lo) / span, d2 = (hi - y) / span;
        double dq;
        if (u < 0.5) {
            const double v = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, eta_m + 1.0);
            dq = std::pow(v, pw) - 1.0;
        } else {
            const double v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, eta_m + 1.0);
            dq = 1.0 - std::pow(v, pw);
        }
        out[i] = std::clamp(y + dq * span, lo, hi);
    }
    return out;
}

// Problem concept used by evolve():
//   const Bounds& bounds() const;
//   std::vector<Evaluation> evaluate_batch(const std::vector<std::vector<double>>&) const;
// evaluate_batch must be safe to call concurrently and row-independent.
template <class Problem>
std::vector<Evaluation> evaluate_population(const Problem& problem, const std::vector<std::vector<double>>& genomes,
                                            std::size_t threads) {
    threads = std::max<std::size_t>(1, std::min(threads, genomes.size()));
    if (threads == 1) return problem.evaluate_batch(genomes);
    std::vector<std::vector<Evaluation>> parts(threads);
    std::vector<std::thread> pool;
    const std::size_t chunk = (genomes.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t a = std::min(genomes.size(), t * chunk), b = std::min(genomes.size(), a + chunk);
        pool.emplace_back([&, t, a, b] {
            if (a < b)
                parts[t] = problem.evaluate_batch(std::vector<std::vector<double>>(genomes.begin() + a, genomes.begin() + b));
        });
    }
    for (auto& th : pool) th.join();
    std::vector<Evaluation> out;
    out.reserve(genomes.size());
    for (auto& p : parts)
        for (auto& e : p) out.push_back(std::move(e));
    return out;
}

struct Nsga2Result {
    std::vector<Individual> population; // final, ranked and crowded
    std::vector<Individual> archive;    // feasible front 0, deduplicated by genome
    std::size_t evaluations = 0;
};

using GenerationCallback = std::function<void(std::size_t generation, const std::vector<Individual>&)>;

namespace detail {

inline bool crowded_less(const Individual& a, const Individual& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.crowding > b.crowding;
}

inline void rank_and_crowd(std::vector<Individual>& pop) {
    for (const auto& f : fast_nondominated_sort(pop)) assign_crowding(pop, f);
}

// Keeps `target` individuals: whole fronts first, then the least crowded of
// the splitting front.
inline std::vector<Individual> truncate(std::vector<Individual>& pool, std::size_t target) {
    const auto fronts = fast_nondominated_sort(pool);
    std::vector<Individual> next;
    next.reserve(target);
    for (const auto& f : fronts) {
        assign_crowding(pool, f);
        if (next.size() + f.size() <= target) {
            for (auto i : f) next.push_back(pool[i]);
            continue;
        }
        std::vector<std::size_t> order(f);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pool[a].crowding > pool[b].crowding; });
        for (std::size_t j = 0; next.size() < target; ++j) next.push_back(pool[order[j]]);
        break;
    }
    // Crowding is recomputed on the survivors so tournaments see the
    // distances of the population they select from.
    rank_and_crowd(next);
    return next;
}

inline constexpr std::uint64_t stream_init = 0x494e4954ULL;
inline constexpr std::uint64_t stream_offspring = 0x4f4646ULL;

} // namespace detail

// Feasible members of front 0, first occurrence of each distinct genome.
inline std::vector<Individual> pareto_archive(const std::vector<Individual>& pop) {
    std::vector<Individual> out;
    for (const auto& ind : pop) {
        if (ind.rank != 0 || !ind.feasible()) continue;
        const bool dup = std::any_of(out.begin(), out.end(), [&](const Individual& o) { return o.genome == ind.genome; });
        if (!dup) out.push_back(ind);
    }
    return out;
}

template <class Problem>
Nsga2Result evolve(const Problem& problem, const Nsga2Config& cfg, const GenerationCallback& on_generation = {}) {
    cfg.validate();
    const Bounds& b = problem.bounds();
    b.validate();
    const std::size_t dim = b.size(), n = cfg.population;
    const double pm = cfg.mutation_rate(dim);
    Nsga2Result res;

    auto make = [&](std::vector<std::vector<double>> genomes) {
        const auto evals = evaluate_population(problem, genomes, cfg.threads);
        if (evals.size() != genomes.size()) throw StateError("problem returned wrong number of evaluations");
        res.evaluations += genomes.size();
        std::vector<Individual> out(genomes.size());
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            out[i].genome = std::move(genomes[i]);
            out[i].objectives = evals[i].objectives;
            out[i].violation = std::isnan(evals[i].violation) ? std::numeric_limits<double>::infinity()
                                                               : evals[i].violation;
        }
        return out;
    };

    std::vector<std::vector<double>> init(n, std::vector<double>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = make_rng(cfg.seed, {detail::stream_init, i});
        for (std::size_t d = 0; d < dim; ++d) init[i][d] = std::uniform_real_distribution<double>(b.lo[d], b.hi[d])(rng);
    }
    auto pop = make(std::move(init));
    detail::rank_and_crowd(pop);
    if (on_generation) on_generation(0, pop);

    for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
        std::vector<std::vector<double>> kids;
        kids.reserve(n);
        for (std::size_t j = 0; j < n / 2; ++j) {
            auto rng = make_rng(cfg.seed, {detail::stream_offspring, gen, j});
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            auto tournament = [&] {
                const std::size_t a = pick(rng), c = pick(rng);
                return detail::crowded_less(pop[c], pop[a]) ? c : a;
            };
            const std::size_t p1 = tournament(), p2 = tournament();
            std::vector<double> c1 = pop[p1].genome, c2 = pop[p2].genome;
            if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.crossover_prob)
                std::tie(c1, c2) = sbx_crossover(pop[p1].genome, pop[p2].genome, b, cfg.eta_c, rng);
            kids.push_back(polynomial_mutation(c1, b, cfg.eta_m, pm, rng));
            kids.push_back(polynomial_mutation(c2, b, cfg.eta_m, pm, rng));
        }
        auto offspring = make(std::move(kids));
        std::vector<Individual> pool = std::move(pop);
        for (auto& o : offspring) pool.push_back(std::move(o));
        pop = detail::truncate(pool, n);
        if (on_generation) on_generation(gen, pop);
    }
    res.archive = pareto_archive(pop);
    res.population = std::move(pop);
    return res;
}

// ---------------------------------------------------------------------------
// Analytic benchmark
// ---------------------------------------------------------------------------

class Zdt1 {
public:
    explicit Zdt1(std::size_t n = 30) : bounds_{std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)} {
        if (n < 2) throw ConfigError("ZDT1 needs at least 2 variables");
    }

    const Bounds& bounds() const noexcept { return bounds_; }

    static Evaluation evaluate(std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 1; i < x.size(); ++i) s += x[i];
        const double g = 1.0 + 9.0 * s / static_cast<double>(x.size() - 1);
        return {{x[0], g * (1.0 - std::sqrt(x[0] / g))}, 0.0};
    }

    std::vector<Evaluation> evaluate_batch(const std::vector<std::vector<double>>& xs) const {
        std::vector<Evaluation> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(evaluate(x));
        return out;
    }

    // f2 = 1 - sqrt(f1), f1 evenly spaced over [0, 1].
    static std::vector<std::vector<double>> reference_front(std::size_t points = 1000) {
        std::vector<std::vector<double>> f(points);
        for (std::size_t i = 0; i < points; ++i) {
            const double f1 = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
            f[i] = {f1, 1.0 - std::sqrt(f1)};
        }
        return f;
    }

private:
    Bounds bounds_;
};

// Inverted generational distance: mean over reference points of the distance
// to the nearest obtained point.
inline double igd(const std::vector<std::vector<double>>& reference, const std::vector<std::vector<double>>& obtained) {
    if (reference.empty() || obtained.empty()) throw ValidationError("IGD needs nonempty sets");
    double total = 0.0;
    for (const auto& r : reference) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& o : obtained) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < r.size(); ++k) d2 += (r[k] - o[k]) * (r[k] - o[k]);
            best = std::min(best, d2);
        }
        total += std::sqrt(best);
    }
    return total / static_cast<double>(reference.size());
}

} // namespace emvae::moo
