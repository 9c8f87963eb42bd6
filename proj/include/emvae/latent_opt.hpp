#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/design_space.hpp"
#include "emvae/nsga2.hpp"
#include "emvae/vae.hpp"

namespace emvae {

enum class LatentBoundsRule { envelope, mean_std };

struct LatentBoundsResult {
    moo::Bounds bounds;
    std::vector<std::string> warnings;
};

// Per-dimension box over the latent means of the training designs: the
// min/max envelope, or mean +/- c * std. Degenerate dimensions are widened
// by 1e-6 on each side.
inline LatentBoundsResult latent_bounds_from_training(const VaeModel& model, const TopologyRegistry& reg,
                                                      std::span<const DesignSample> train,
                                                      LatentBoundsRule rule = LatentBoundsRule::envelope,
                                                      double c = 3.0) {
    if (train.empty()) throw ValidationError("latent bounds need at least one training sample");
    const std::size_t m = model.latent_dim();
    LatentBoundsResult r;
    r.bounds.lo.assign(m, std::numeric_limits<double>::infinity());
    r.bounds.hi.assign(m, -std::numeric_limits<double>::infinity());
    std::vector<double> sum(m, 0.0), sq(m, 0.0);
    for (std::size_t a = 0; a < train.size(); a += 500) {
        const auto chunk = train.subspan(a, std::min<std::size_t>(500, train.size() - a));
        const Tensor mu = model.encode_mean(embed_batch(reg, chunk));
        for (std::size_t i = 0; i < chunk.size(); ++i)
            for (std::size_t d = 0; d < m; ++d) {
                const double v = mu.at(i, d);
                r.bounds.lo[d] = std::min(r.bounds.lo[d], v);
                r.bounds.hi[d] = std::max(r.bounds.hi[d], v);
                sum[d] += v;
                sq[d] += v * v;
            }
    }
    if (rule == LatentBoundsRule::mean_std) {
        const double n = static_cast<double>(train.size());
        for (std::size_t d = 0; d < m; ++d) {
            const double mean = sum[d] / n;
            const double sd = std::sqrt(std::max(0.0, sq[d] / n - mean * mean));
            r.bounds.lo[d] = mean - c * sd;
            r.bounds.hi[d] = mean + c * sd;
        }
    }
    for (std::size_t d = 0; d < m; ++d)
        if (!(r.bounds.lo[d] < r.bounds.hi[d])) {
            r.bounds.lo[d] -= 1e-6;
            r.bounds.hi[d] += 1e-6;
            r.warnings.push_back("latent dimension " + std::to_string(d) + " is degenerate; widened by 1e-6");
        }
    return r;
}

struct ObjectiveSpec {
    std::size_t kpi = 0;
    bool maximize = false;

    std::string label() const { return std::string(maximize ? "max " : "min ") + KpiVector::names[kpi]; }
};

// Parses "max:y2" / "min:material_cost".
inline ObjectiveSpec parse_objective(std::string_view s) {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos) throw ConfigError("objective '" + std::string(s) + "' is not dir:kpi");
    const auto dir = s.substr(0, colon);
    if (dir != "max" && dir != "min") throw ConfigError("objective direction must be max or min");
    return {KpiVector::index_of(s.substr(colon + 1)), dir == "max"};
}

struct DecodedDesign {
    std::optional<DesignSample> sample; // empty when the topology is ambiguous
    std::vector<double> integrated;     // raw decoder output
    KpiVector kpis;
    double indicator_distance = 0.0;
    double violation = 0.0;
};

// Latent-space machine design problem: a genome is a latent vector, decoded
// to a design and scored by the KPI predictor. Feasibility is the decoded
// parameters lying inside the dataset bounds.
class LatentDesignProblem {
public:
    LatentDesignProblem(const VaeModel& model, const TopologyRegistry& reg, moo::Bounds bounds,
                        std::vector<ObjectiveSpec> objectives)
        : model_(&model), reg_(&reg), bounds_(std::move(bounds)), objectives_(std::move(objectives)) {
        bounds_.validate();
        if (bounds_.size() != model.latent_dim()) throw DimensionError("latent bounds do not match latent size");
        if (objectives_.size() < 2) throw ConfigError("at least two objectives are required");
        for (const auto& o : objectives_)
            if (o.kpi >= KpiVector::size) throw ConfigError("objective KPI index out of range");
    }

    const moo::Bounds& bounds() const noexcept { return bounds_; }
    const std::vector<ObjectiveSpec>& objectives() const noexcept { return objectives_; }

    std::vector<DecodedDesign> decode(const std::vector<std::vector<double>>& genomes) const {
        std::vector<DecodedDesign> out(genomes.size());
        if (genomes.empty()) return out;
        const Tensor z = row_batch(genomes);
        std::optional<Tensor> p, y;
        try {
            p = model_->decode(z);
            y = model_->predict_kpis(z);
        } catch (const NumericError&) {
            // Non-finite latent input; every row is scored individually below.
        }
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            auto& d = out[i];
            if (!p || !y) {
                d.violation = std::numeric_limits<double>::infinity();
                continue;
            }
            d.integrated = row(*p, i);
            for (std::size_t k = 0; k < KpiVector::size; ++k) d.kpis[k] = y->at(i, k);
            score(d);
        }
        return out;
    }

    std::vector<moo::Evaluation> evaluate_batch(const std::vector<std::vector<double>>& genomes) const {
        const auto decoded = decode(genomes);
        std::vector<moo::Evaluation> out(decoded.size());
        for (std::size_t i = 0; i < decoded.size(); ++i) {
            out[i].violation = decoded[i].violation;
            out[i].objectives = objective_values(decoded[i].kpis);
            for (double& v : out[i].objectives)
                if (!std::isfinite(v)) {
                    out[i].violation = std::numeric_limits<double>::infinity();
                    v = std::numeric_limits<double>::infinity();
                }
        }
        return out;
    }

    // Internal (minimized) objective values; maximized KPIs are negated.
    std::vector<double> objective_values(const KpiVector& y) const {
        std::vector<double> v;
        for (const auto& o : objectives_) v.push_back(o.maximize ? -y[o.kpi] : y[o.kpi]);
        return v;
    }

private:
    void score(DecodedDesign& d) const {
        for (double v : d.integrated)
            if (!std::isfinite(v)) {
                d.violation = std::numeric_limits<double>::infinity();
                return;
            }
        for (std::size_t k = 0; k < KpiVector::size; ++k)
            if (!std::isfinite(d.kpis[k])) {
                d.violation = std::numeric_limits<double>::infinity();
                return;
            }
        try {
            auto x = reg_->extract(d.integrated, false);
            d.indicator_distance = x.indicator_distance;
            d.violation = 0.0;
            const auto& t = reg_->topology(x.sample.topology_id);
            for (const auto& v : reg_->validate_bounds(x.sample))
                d.violation += v.magnitude / (t.params[v.index].max - t.params[v.index].min);
            d.sample = std::move(x.sample);
        } catch (const AmbiguousTopologyError&) {
            double dist = 0.0;
            try {
                reg_->resolve_topology(d.integrated[0], &dist);
            } catch (const AmbiguousTopologyError&) {
            }
            d.indicator_distance = dist;
            d.violation = 1.0 + dist;
        }
    }

    const VaeModel* model_;
    const TopologyRegistry* reg_;
    moo::Bounds bounds_;
    std::vector<ObjectiveSpec> objectives_;
};

// Archive member closest to the ideal point after per-objective min-max
// normalization over the archive.
inline std::size_t knee_point(const std::vector<moo::Individual>& archive) {
    if (archive.empty()) throw ValidationError("knee point of an empty archive");
    const std::size_t k = archive.front().objectives.size();
    std::vector<double> lo(k, std::numeric_limits<double>::infinity()), hi(k, -std::numeric_limits<double>::infinity());
    for (const auto& a : archive)
        for (std::size_t j = 0; j < k; ++j) {
            lo[j] = std::min(lo[j], a.objectives[j]);
            hi[j] = std::max(hi[j], a.objectives[j]);
        }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < archive.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double span = hi[j] - lo[j];
            const double v = span > 0.0 ? (archive[i].objectives[j] - lo[j]) / span : 0.0;
            d2 += v * v;
        }
        if (d2 < best_d) {
            best_d = d2;
            best = i;
        }
    }
    return best;
}

// Extremes of each objective plus the knee, without repeats, in that order.
inline std::vector<std::size_t> representative_points(const std::vector<moo::Individual>& archive) {
    std::vector<std::size_t> out;
    auto add = [&](std::size_t i) {
        if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
    };
    const std::size_t k = archive.empty() ? 0 : archive.front().objectives.size();
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < archive.size(); ++i)
            if (archive[i].objectives[j] < archive[best].objectives[j]) best = i;
        add(best);
    }
    if (!archive.empty()) add(knee_point(archive));
    return out;
}

// Archive CSV: topology, k, every integrated parameter column (empty for
// other topologies), predicted KPIs, internal objectives, rank.
inline std::string archive_to_csv(const TopologyRegistry& reg, const LatentDesignProblem& problem,
                                  const std::vector<moo::Individual>& archive) {
    std::vector<std::vector<double>> genomes;
    for (const auto& a : archive) genomes.push_back(a.genome);
    const auto decoded = problem.decode(genomes);
    const auto names = reg.integrated_names();
    std::ostringstream os;
    os << "topology";
    for (const auto& n : names) os << ',' << n;
    os << ",y1,y2,y3,y4";
    for (std::size_t j = 0; j < problem.objectives().size(); ++j) os << ",objective" << (j + 1);
    os << ",rank\n";
    for (std::size_t i = 0; i < archive.size(); ++i) {
        const auto& d = decoded[i];
        if (!d.sample) throw StateError("archive member with unresolved topology");
        const auto& t = reg.topology(d.sample->topology_id);
        os << t.name << ',' << d.sample->topology_id;
        for (int id : reg.ids()) {
            const auto& tt = reg.topology(id);
            for (std::size_t p = 0; p < tt.size(); ++p) {
                os << ',';
                if (id == d.sample->topology_id) os << format_double(d.sample->values[p]);
            }
        }
        for (std::size_t k = 0; k < KpiVector::size; ++k) os << ',' << format_double(d.kpis[k]);
        for (double v : archive[i].objectives) os << ',' << format_double(v);
        os << ',' << archive[i].rank << '\n';
    }
    return os.str();
}

} // namespace emvae
