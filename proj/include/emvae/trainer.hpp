#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/fe_surrogate.hpp"
#include "emvae/random.hpp"
#include "emvae/vae.hpp"

namespace emvae {

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t patience = 10;
    std::size_t batch_size = 40;
    double lr_start = 1e-3;
    double lr_floor = 1e-4;
    // Halve the learning rate after this many epochs without a new best
    // validation loss (counter restarts after each reduction).
    std::size_t plateau_epochs = 5;
    double lr_factor = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (patience > epochs) throw ConfigError("patience must not exceed epochs");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (!(lr_start > 0.0) || !(lr_floor > 0.0)) throw ConfigError("learning rates must be positive");
        if (lr_floor > lr_start) throw ConfigError("lr floor must not exceed lr start");
        if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("lr factor must lie in (0, 1)");
        if (plateau_epochs < 1) throw ConfigError("plateau length must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"epochs", epochs},         {"patience", patience},   {"batch_size", batch_size},
                {"lr_start", lr_start},     {"lr_floor", lr_floor},   {"plateau_epochs", plateau_epochs},
                {"lr_factor", lr_factor},   {"seed", seed}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.patience = j.value("patience", c.patience);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr_start = j.value("lr_start", c.lr_start);
        c.lr_floor = j.value("lr_floor", c.lr_floor);
        c.plateau_epochs = j.value("plateau_epochs", c.plateau_epochs);
        c.lr_factor = j.value("lr_factor", c.lr_factor);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown train;
    LossBreakdown val;
    double lr = 0.0;
};

enum class StopReason { patience, epochs_exhausted, diverged };

inline const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::patience: return "patience";
    case StopReason::epochs_exhausted: return "epochs_exhausted";
    case StopReason::diverged: return "diverged";
    }
    return "?";
}

struct TrainTrace {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_total = std::numeric_limits<double>::infinity();
    StopReason stop = StopReason::epochs_exhausted;
    std::string message; // divergence detail
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct PreparedSplit {
    Tensor p;      // [count, n] integrated vectors
    Tensor y_norm; // [count, kpi] z-scored KPIs
};

inline PreparedSplit prepare_split(const TopologyRegistry& reg, const VaeModel& model,
                                   std::span<const DesignSample> samples) {
    PreparedSplit s{embed_batch(reg, samples), kpi_batch(samples)};
    model.normalize_kpis(s.y_norm);
    return s;
}

inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
    const std::size_t w = t.dim(1);
    Tensor out({idx.size(), w});
    for (std::size_t b = 0; b < idx.size(); ++b) std::copy_n(t.data() + idx[b] * w, w, out.data() + b * w);
    return out;
}

inline void accumulate(LossBreakdown& acc, const LossBreakdown& l, double weight) {
    acc.recon += weight * l.recon;
    acc.kpi += weight * l.kpi;
    acc.kl += weight * l.kl;
    acc.total += weight * l.total;
}

inline constexpr std::uint64_t stream_shuffle = 0x5348554646ULL;
inline constexpr std::uint64_t stream_noise = 0x4e4f495345ULL;
inline constexpr std::uint64_t stream_val = 0x56414cULL;

} // namespace detail

// Loss on a prepared split with a fixed noise stream, in chunks; the value
// is a sample-weighted mean so it does not depend on the chunk size.
inline LossBreakdown split_loss(const VaeModel& model, const detail::PreparedSplit& s, std::uint64_t seed,
                                std::size_t chunk = 500) {
    const std::size_t count = s.p.dim(0);
    auto rng = make_rng(seed, {detail::stream_val});
    const Tensor eps = standard_normal({count, model.latent_dim()}, rng);
    LossBreakdown acc;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < count; start += chunk) {
        const std::size_t end = std::min(count, start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto l = model.evaluate_loss(detail::gather_rows(s.p, idx), detail::gather_rows(s.y_norm, idx),
                                           detail::gather_rows(eps, idx));
        detail::accumulate(acc, l, static_cast<double>(idx.size()) / static_cast<double>(count));
    }
    return acc;
}

// Trains in place: fits KPI statistics on the train split, runs seeded
// mini-batch Adam with validation-driven lr halving and early stopping, and
// leaves the model holding the best-validation parameters.
inline TrainTrace train(VaeModel& model, const TopologyRegistry& reg, const Dataset& ds, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (reg.hash() != model.registry_hash() && !model.registry_hash().empty())
        throw RegistryMismatchError("model was built for a different topology registry");
    if (reg.dimension() != model.input_dim())
        throw DimensionError("model input dimension " + std::to_string(model.input_dim()) +
                             " does not match registry dimension " + std::to_string(reg.dimension()));
    const auto train_samples = ds.subset(Split::train);
    const auto val_samples = ds.subset(Split::val);
    if (train_samples.empty() || val_samples.empty())
        throw ValidationError("training requires nonempty train and val splits");

    std::vector<KpiVector> ys;
    ys.reserve(train_samples.size());
    for (const auto& s : train_samples) {
        if (!s.kpis) throw ValidationError("training sample without KPIs");
        ys.push_back(*s.kpis);
    }
    model.set_kpi_stats(KpiStats::fit(ys));
    const auto tr = detail::prepare_split(reg, model, train_samples);
    const auto va = detail::prepare_split(reg, model, val_samples);

    const auto t0 = std::chrono::steady_clock::now();
    TrainTrace trace;
    VaeModel best = model;
    nn::AdamConfig adam;
    adam.lr = cfg.lr_start;
    std::size_t since_best = 0, since_reduce = 0;
    const std::size_t count = train_samples.size(), m = model.latent_dim();
    std::vector<std::size_t> order(count);
    std::vector<std::size_t> batch_idx;

    auto finish = [&] {
        model = best;
        trace.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return trace;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto shuffle_rng = make_rng(cfg.seed, {detail::stream_shuffle, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        auto noise_rng = make_rng(cfg.seed, {detail::stream_noise, epoch});

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = adam.lr;
        try {
            for (std::size_t start = 0; start < count; start += cfg.batch_size) {
                const std::size_t end = std::min(count, start + cfg.batch_size);
                batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
                const Tensor eps = standard_normal({batch_idx.size(), m}, noise_rng);
                model.zero_grad();
                const auto l =
                    model.loss(detail::gather_rows(tr.p, batch_idx), detail::gather_rows(tr.y_norm, batch_idx), eps);
                nn::adam_step(model.params(), adam);
                detail::accumulate(rec.train, l, static_cast<double>(batch_idx.size()) / static_cast<double>(count));
            }
            rec.val = split_loss(model, va, cfg.seed);
            if (!std::isfinite(rec.val.total)) throw NumericError("non-finite validation loss");
        } catch (const NumericError& e) {
            trace.stop = StopReason::diverged;
            trace.message = "epoch " + std::to_string(epoch) + ": " + e.what();
            return finish();
        }
        trace.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val.total < trace.best_val_total) {
            trace.best_val_total = rec.val.total;
            trace.best_epoch = epoch;
            best = model;
            since_best = 0;
            since_reduce = 0;
        } else {
            ++since_best;
            ++since_reduce;
        }
        if (since_best >= cfg.patience) {
            trace.stop = StopReason::patience;
            return finish();
        }
        if (since_reduce >= cfg.plateau_epochs) {
            adam.lr = std::max(cfg.lr_floor, adam.lr * cfg.lr_factor);
            since_reduce = 0;
        }
    }
    trace.stop = StopReason::epochs_exhausted;
    return finish();
}

inline std::string trace_to_csv(const TrainTrace& t) {
    std::ostringstream os;
    os << "epoch,train_recon,train_kpi,train_kl,train_total,val_recon,val_kpi,val_kl,val_total,lr\n";
    for (const auto& r : t.epochs)
        os << r.epoch << ',' << format_double(r.train.recon) << ',' << format_double(r.train.kpi) << ','
           << format_double(r.train.kl) << ',' << format_double(r.train.total) << ',' << format_double(r.val.recon)
           << ',' << format_double(r.val.kpi) << ',' << format_double(r.val.kl) << ',' << format_double(r.val.total)
           << ',' << format_double(r.lr) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metric {
    std::string name;
    std::string unit;
    std::size_t count = 0;
    double mae = 0.0;
    double rmse = 0.0;
    double pcc = 0.0;
    double mre = 0.0;            // percent
    std::size_t mre_excluded = 0; // |truth| < 1e-9
};

struct MetricReport {
    std::string split;
    std::vector<Metric> entries;
    std::size_t evaluated = 0;
    std::size_t topology_mismatches = 0;

    const Metric& at(std::string_view name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw ConfigError("no metric named '" + std::string(name) + "'");
    }

    double topology_recovery() const {
        return evaluated == 0 ? 0.0
                              : static_cast<double>(evaluated - topology_mismatches) / static_cast<double>(evaluated);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["split"] = split;
        j["evaluated"] = evaluated;
        j["topology_mismatches"] = topology_mismatches;
        j["metrics"] = nlohmann::json::array();
        for (const auto& e : entries)
            j["metrics"].push_back({{"name", e.name},
                                    {"unit", e.unit},
                                    {"count", e.count},
                                    {"mae", e.mae},
                                    {"rmse", e.rmse},
                                    {"pcc", e.pcc},
                                    {"mre_percent", e.mre},
                                    {"mre_excluded", e.mre_excluded}});
        return j;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "split,name,unit,count,mae,rmse,pcc,mre_percent,mre_excluded\n";
        for (const auto& e : entries)
            os << split << ',' << e.name << ',' << e.unit << ',' << e.count << ',' << format_double(e.mae) << ','
               << format_double(e.rmse) << ',' << format_double(e.pcc) << ',' << format_double(e.mre) << ','
               << e.mre_excluded << '\n';
        return os.str();
    }
};

// MAE, RMSE, Pearson correlation and mean relative error (percent) between
// truth and prediction. PCC is 0 when either side has zero variance, except
// for an exact match, which counts as 1.
inline Metric compute_metric(std::span<const double> truth, std::span<const double> pred, std::string name = {},
                             std::string unit = {}) {
    if (truth.size() != pred.size()) throw DimensionError("metric inputs differ in length");
    Metric m{std::move(name), std::move(unit)};
    m.count = truth.size();
    if (truth.empty()) return m;
    const double n = static_cast<double>(truth.size());
    double abs_sum = 0.0, sq_sum = 0.0, rel_sum = 0.0, mt = 0.0, mp = 0.0;
    std::size_t rel_n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = pred[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
        if (std::abs(truth[i]) < 1e-9) {
            ++m.mre_excluded;
        } else {
            rel_sum += std::abs(e) / std::abs(truth[i]);
            ++rel_n;
        }
        mt += truth[i];
        mp += pred[i];
    }
    mt /= n;
    mp /= n;
    double cov = 0.0, vt = 0.0, vp = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        cov += (truth[i] - mt) * (pred[i] - mp);
        vt += (truth[i] - mt) * (truth[i] - mt);
        vp += (pred[i] - mp) * (pred[i] - mp);
    }
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    m.mre = rel_n == 0 ? 0.0 : 100.0 * rel_sum / static_cast<double>(rel_n);
    if (vt > 0.0 && vp > 0.0)
        m.pcc = std::clamp(cov / std::sqrt(vt * vp), -1.0, 1.0);
    else
        m.pcc = abs_sum == 0.0 ? 1.0 : 0.0;
    return m;
}

namespace detail {

template <class Fn>
inline void for_chunks(std::size_t count, std::size_t chunk, Fn&& fn) {
    for (std::size_t start = 0; start < count; start += chunk) fn(start, std::min(count, start + chunk));
}

} // namespace detail

// KPI predictions from the latent mean of each design vs the oracle KPIs.
inline MetricReport evaluate_kpis(const VaeModel& model, const TopologyRegistry& reg,
                                  std::span<const DesignSample> samples, std::string split = {}) {
    MetricReport r;
    r.split = std::move(split);
    r.evaluated = samples.size();
    std::array<std::vector<double>, KpiVector::size> truth, pred;
    detail::for_chunks(samples.size(), 500, [&](std::size_t a, std::size_t b) {
        const auto chunk = samples.subspan(a, b - a);
        const Tensor y = model.predict_kpis(model.encode_mean(embed_batch(reg, chunk)));
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            if (!chunk[i].kpis) throw ValidationError("evaluation sample without KPIs");
            for (std::size_t k = 0; k < KpiVector::size; ++k) {
                truth[k].push_back((*chunk[i].kpis)[k]);
                pred[k].push_back(y.at(i, k));
            }
        }
    });
    for (std::size_t k = 0; k < KpiVector::size; ++k)
        r.entries.push_back(compute_metric(truth[k], pred[k], KpiVector::names[k], KpiVector::units[k]));
    return r;
}

// Native-unit reconstruction error of decode(encode_mean(p)) per parameter,
// named "<topology>.<parameter>". Samples whose topology is not recovered are
// counted in topology_mismatches and left out of the per-parameter stats.
inline MetricReport evaluate_reconstruction(const VaeModel& model, const TopologyRegistry& reg,
                                            std::span<const DesignSample> samples, std::string split = {}) {
    MetricReport r;
    r.split = std::move(split);
    r.evaluated = samples.size();
    std::map<int, std::vector<std::vector<double>>> truth, pred; // id -> param -> values
    for (int id : reg.ids()) {
        truth[id].resize(reg.topology(id).size());
        pred[id].resize(reg.topology(id).size());
    }
    detail::for_chunks(samples.size(), 500, [&](std::size_t a, std::size_t b) {
        const auto chunk = samples.subspan(a, b - a);
        const Tensor rec = model.decode(model.encode_mean(embed_batch(reg, chunk)));
        const std::size_t n = rec.dim(1);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::optional<ExtractResult> x;
            try {
                x = reg.extract(std::span<const double>(rec.data() + i * n, n), false);
            } catch (const AmbiguousTopologyError&) {
            }
            if (!x || x->sample.topology_id != chunk[i].topology_id) {
                ++r.topology_mismatches;
                continue;
            }
            const int id = chunk[i].topology_id;
            for (std::size_t p = 0; p < chunk[i].values.size(); ++p) {
                truth[id][p].push_back(chunk[i].values[p]);
                pred[id][p].push_back(x->sample.values[p]);
            }
        }
    });
    for (int id : reg.ids()) {
        const auto& t = reg.topology(id);
        for (std::size_t p = 0; p < t.size(); ++p)
            r.entries.push_back(compute_metric(truth[id][p], pred[id][p], t.name + "." + t.params[p].name,
                                               t.params[p].unit));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Latent-dimension sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string topology;
    std::string parameter;
    std::size_t latent_dim = 0;
    double mae = std::numeric_limits<double>::quiet_NaN();
    std::string status = "ok";
};

struct SweepConfig {
    std::vector<std::size_t> dims{5, 10, 15, 19, 20};
    // Parameters reported per topology name.
    std::map<std::string, std::vector<std::string>> tracked{
        {"SV", {"air_gap", "iron_length", "rotor_outer_diameter"}},
        {"DV", {"stator_tooth_height", "iron_length", "rotor_outer_diameter"}}};
    Split split = Split::test;
};

inline TrainConfig sweep_train_defaults() {
    TrainConfig c;
    c.epochs = 100;
    return c;
}

using SweepCallback = std::function<void(std::size_t latent_dim, const VaeModel&, const TrainTrace&)>;

// One model per latent dimension, identical seeds otherwise. A cell whose
// training fails is reported with status "failed: ..." and NaN MAE. Cells
// are independent; with threads > 1 they run concurrently and the callback
// is serialized.
inline std::vector<SweepRow> latent_sweep(const TopologyRegistry& reg, const Dataset& ds, const SweepConfig& sweep,
                                          const VaeConfig& base, const TrainConfig& tc,
                                          const SweepCallback& on_cell = {}, std::size_t threads = 1) {
    if (sweep.dims.empty()) throw ConfigError("latent sweep needs at least one dimension");
    for (const auto& [name, params] : sweep.tracked) {
        const auto ids = reg.ids();
        const auto it = std::find_if(ids.begin(), ids.end(), [&](int id) { return reg.topology(id).name == name; });
        if (it == ids.end()) throw ConfigError("sweep tracks unknown topology '" + name + "'");
        for (const auto& p : params)
            if (!reg.topology(*it).index_of(p))
                throw ConfigError("sweep tracks unknown parameter '" + name + "." + p + "'");
    }
    const auto eval_samples = ds.subset(sweep.split);
    std::vector<std::vector<SweepRow>> cells(sweep.dims.size());
    std::mutex callback_mutex;

    auto run_cell = [&](std::size_t c) {
        const std::size_t m = sweep.dims[c];
        VaeConfig vc = base;
        vc.latent_dim = m;
        std::string status = "ok";
        std::optional<MetricReport> rep;
        try {
            VaeModel model(vc, reg.hash());
            const auto trace = train(model, reg, ds, tc);
            if (trace.stop == StopReason::diverged) {
                status = "diverged: " + trace.message;
                std::replace(status.begin(), status.end(), ',', ';');
            }
            rep = evaluate_reconstruction(model, reg, eval_samples, to_string(sweep.split));
            if (on_cell) {
                std::lock_guard<std::mutex> lock(callback_mutex);
                on_cell(m, model, trace);
            }
        } catch (const Error& e) {
            status = std::string("failed: ") + e.what();
            std::replace(status.begin(), status.end(), ',', ';');
        }
        for (const auto& [name, params] : sweep.tracked)
            for (const auto& p : params) {
                SweepRow row{name, p, m};
                row.status = status;
                if (rep) row.mae = rep->at(name + "." + p).mae;
                cells[c].push_back(row);
            }
    };

    threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
    if (threads == 1) {
        for (std::size_t c = 0; c < cells.size(); ++c) run_cell(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t c; (c = next.fetch_add(1)) < cells.size();) run_cell(c);
            });
        for (auto& th : pool) th.join();
    }
    std::vector<SweepRow> rows;
    for (auto& c : cells)
        for (auto& r : c) rows.push_back(std::move(r));
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "topology,parameter,latent_dim,mae,status\n";
    for (const auto& r : rows)
        os << r.topology << ',' << r.parameter << ',' << r.latent_dim << ',' << format_double(r.mae) << ','
           << r.status << '\n';
    return os.str();
}

// Mean MAE over the tracked parameters of one topology at one latent size.
inline double sweep_mean_mae(const std::vector<SweepRow>& rows, std::string_view topology, std::size_t m) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.topology == topology && r.latent_dim == m) {
            s += r.mae;
            ++n;
        }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(n);
}

} // namespace emvae
