#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/checksum.hpp"
#include "emvae/design_space.hpp"
#include "emvae/fe_surrogate.hpp"
#include "emvae/latent_opt.hpp"
#include "emvae/model_io.hpp"
#include "emvae/nsga2.hpp"
#include "emvae/trainer.hpp"
#include "emvae/vae.hpp"

// Command implementations behind the emvae executable. Each command writes
// its artifacts into out_dir and finishes by writing manifest.json.

namespace emvae::pipeline {

namespace fs = std::filesystem;

enum ExitCode : int { exit_ok = 0, exit_failure = 1, exit_config = 2, exit_data = 3, exit_numeric = 4 };

inline int exit_code_for(const Error& e) {
    switch (e.category()) {
    case Error::Category::config: return exit_config;
    case Error::Category::data: return exit_data;
    case Error::Category::numeric: return exit_numeric;
    case Error::Category::state: return exit_failure;
    }
    return exit_failure;
}

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string config; // topology registry JSON; empty = built-in SV/DV
    std::size_t threads = 1;
    bool quiet = false;
};

inline TopologyRegistry load_registry(const GlobalOptions& g) {
    return g.config.empty() ? default_registry() : TopologyRegistry::load_file(g.config);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

class RunManifest {
public:
    RunManifest(std::string command, const GlobalOptions& g)
        : command_(std::move(command)), out_dir_(g.out_dir), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(out_dir_);
        // A stale manifest must not describe a run that is about to change
        // the artifacts.
        std::error_code ec;
        fs::remove(path(), ec);
    }

    std::string path() const { return (fs::path(out_dir_) / "manifest.json").string(); }
    std::string out(const std::string& name) const { return (fs::path(out_dir_) / name).string(); }

    void set_config(nlohmann::json c) { config_ = std::move(c); }
    void set_seed(const std::string& name, std::uint64_t s) { seeds_[name] = s; }
    void set_registry_hash(std::string h) { registry_hash_ = std::move(h); }
    void add_input(const std::string& p) { inputs_.push_back({p, checksum_file(p)}); }
    void add_output(const std::string& p) { outputs_.push_back({p, checksum_file(p)}); }

    // Writes to a temporary file and renames it into place.
    void commit() const {
        nlohmann::json j;
        j["format"] = "emvae-manifest";
        j["version"] = 1;
        j["command"] = command_;
        j["config"] = config_;
        j["seeds"] = seeds_;
        j["registry_hash"] = registry_hash_;
        j["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        auto files = [](const std::vector<std::pair<std::string, std::string>>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (const auto& [p, c] : v) a.push_back({{"path", p}, {"checksum", c}});
            return a;
        };
        j["inputs"] = files(inputs_);
        j["outputs"] = files(outputs_);
        const std::string tmp = path() + ".tmp";
        write_text_file(tmp, j.dump(2) + "\n");
        fs::rename(tmp, path());
    }

private:
    std::string command_;
    std::string out_dir_;
    std::chrono::steady_clock::time_point start_;
    nlohmann::json config_ = nlohmann::json::object();
    nlohmann::json seeds_ = nlohmann::json::object();
    std::string registry_hash_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
};

// Re-reads a manifest and checks every listed output against its checksum.
// Returns the paths that are missing or differ.
inline std::vector<std::string> verify_manifest(const std::string& manifest_path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest: " + std::string(e.what()));
    }
    std::vector<std::string> bad;
    for (const auto& f : j.at("outputs")) {
        const auto p = f.at("path").get<std::string>();
        try {
            if (checksum_file(p) != f.at("checksum").get<std::string>()) bad.push_back(p);
        } catch (const FormatError&) {
            bad.push_back(p);
        }
    }
    return bad;
}

inline void log(const GlobalOptions& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOptions {
    std::map<int, std::size_t> counts{{1, 4000}, {2, 4000}};
    SplitFractions split;
    std::array<double, KpiVector::size> noise{0.0, 0.0, 0.0, 0.0};
    std::string output = "dataset.csv";
};

inline std::string gen_data(const GlobalOptions& g, const GenDataOptions& o) {
    const auto reg = load_registry(g);
    OracleConfig oc;
    if (g.seed) oc.seed = *g.seed;
    oc.counts = o.counts;
    oc.noise_std = o.noise;
    oc.validate();
    o.split.validate();
    RunManifest man("gen-data", g);
    const auto ds = build_dataset(reg, oc, o.split);
    const auto csv = man.out(o.output);
    save_dataset(reg, ds, csv);
    log(g, "gen-data: " + std::to_string(ds.size()) + " samples (train " + std::to_string(ds.count(Split::train)) +
               ", val " + std::to_string(ds.count(Split::val)) + ", test " + std::to_string(ds.count(Split::test)) +
               ") -> " + csv);
    man.set_config({{"oracle", oc.to_json()}, {"split", {o.split.train, o.split.val, o.split.test}}});
    man.set_seed("oracle", oc.seed);
    man.set_registry_hash(reg.hash());
    man.add_output(csv);
    man.add_output(csv + ".json");
    man.commit();
    return csv;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string data = "dataset.csv";
    VaeConfig vae;
    TrainConfig train;
    std::string model = "model.json";
};

inline void write_reports(RunManifest& man, const MetricReport& kpi, const MetricReport& rec) {
    for (const auto& [name, rep] : {std::pair{"kpi_metrics", &kpi}, std::pair{"reconstruction_metrics", &rec}}) {
        const auto csv = man.out(std::string(name) + ".csv");
        const auto json = man.out(std::string(name) + ".json");
        write_text_file(csv, rep->to_csv());
        write_text_file(json, rep->to_json().dump(2) + "\n");
        man.add_output(csv);
        man.add_output(json);
    }
}

inline std::string format_metric_table(const MetricReport& r) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "  %-34s %12s %12s %9s %9s\n", "name", "MAE", "RMSE", "PCC", "MRE%");
    os << line;
    for (const auto& e : r.entries) {
        std::snprintf(line, sizeof line, "  %-34s %12.5g %12.5g %9.5f %9.4f\n", (e.name + " [" + e.unit + "]").c_str(),
                      e.mae, e.rmse, e.pcc, e.mre);
        os << line;
    }
    return os.str();
}

struct TrainOutcome {
    TrainTrace trace;
    MetricReport kpi;
    MetricReport reconstruction;
    std::string model_path;
};

inline TrainOutcome train_cmd(const GlobalOptions& g, TrainOptions o) {
    const auto reg = load_registry(g);
    if (g.seed) {
        o.vae.seed = *g.seed;
        o.train.seed = *g.seed;
    }
    o.vae.input_dim = reg.dimension();
    o.vae.validate();
    o.train.validate();
    const auto ds = load_dataset(reg, o.data);
    RunManifest man("train", g);
    man.add_input(o.data);
    VaeModel model(o.vae, reg.hash());
    log(g, "train: " + std::to_string(model.parameter_count()) + " parameters, m = " +
               std::to_string(o.vae.latent_dim));
    TrainOutcome out;
    out.trace = train(model, reg, ds, o.train, [&](const EpochRecord& r) {
        if (r.epoch % 10 == 0)
            log(g, "  epoch " + std::to_string(r.epoch) + "  train " + format_double(r.train.total) + "  val " +
                       format_double(r.val.total) + "  lr " + format_double(r.lr));
    });
    log(g, std::string("train: stopped (") + to_string(out.trace.stop) + ") after " +
               std::to_string(out.trace.epochs.size()) + " epochs, best epoch " +
               std::to_string(out.trace.best_epoch));
    out.model_path = man.out(o.model);
    save_model(model, out.model_path);
    man.add_output(out.model_path);
    const auto trace_csv = man.out("trace.csv");
    write_text_file(trace_csv, trace_to_csv(out.trace));
    man.add_output(trace_csv);

    const auto test = ds.subset(Split::test);
    out.kpi = evaluate_kpis(model, reg, test, "test");
    out.reconstruction = evaluate_reconstruction(model, reg, test, "test");
    write_reports(man, out.kpi, out.reconstruction);
    log(g, "KPI prediction (test):\n" + format_metric_table(out.kpi));
    log(g, "topology recovery (test): " + format_double(100.0 * out.reconstruction.topology_recovery()) + " %");

    man.set_config({{"vae", o.vae.to_json()}, {"train", o.train.to_json()}, {"data", o.data}});
    man.set_seed("model", o.vae.seed);
    man.set_seed("train", o.train.seed);
    man.set_registry_hash(reg.hash());
    man.commit();
    if (out.trace.stop == StopReason::diverged) throw NumericError("training diverged: " + out.trace.message);
    return out;
}

struct EvalOptions {
    std::string data = "dataset.csv";
    std::string model = "model.json";
    Split split = Split::test;
};

inline std::pair<MetricReport, MetricReport> eval_cmd(const GlobalOptions& g, const EvalOptions& o) {
    const auto reg = load_registry(g);
    const auto ds = load_dataset(reg, o.data);
    const auto model = load_model(o.model, reg.hash());
    RunManifest man("eval", g);
    man.add_input(o.data);
    man.add_input(o.model);
    const auto samples = ds.subset(o.split);
    if (samples.empty()) throw ValidationError(std::string("split '") + to_string(o.split) + "' is empty");
    auto kpi = evaluate_kpis(model, reg, samples, to_string(o.split));
    auto rec = evaluate_reconstruction(model, reg, samples, to_string(o.split));
    write_reports(man, kpi, rec);
    log(g, "KPI prediction (" + std::string(to_string(o.split)) + "):\n" + format_metric_table(kpi));
    log(g, "reconstruction:\n" + format_metric_table(rec));
    log(g, "topology recovery: " + format_double(100.0 * rec.topology_recovery()) + " %");
    man.set_config({{"data", o.data}, {"model", o.model}, {"split", to_string(o.split)}});
    man.set_registry_hash(reg.hash());
    man.commit();
    return {kpi, rec};
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
    std::string data = "dataset.csv";
    SweepConfig sweep;
    VaeConfig vae;
    TrainConfig train = sweep_train_defaults();
    std::string output = "sweep.csv";
};

inline std::vector<SweepRow> sweep_cmd(const GlobalOptions& g, SweepOptions o) {
    const auto reg = load_registry(g);
    if (g.seed) {
        o.vae.seed = *g.seed;
        o.train.seed = *g.seed;
    }
    o.vae.input_dim = reg.dimension();
    o.train.validate();
    const auto ds = load_dataset(reg, o.data);
    RunManifest man("sweep", g);
    man.add_input(o.data);
    std::vector<std::string> models;
    const auto rows = latent_sweep(
        reg, ds, o.sweep, o.vae, o.train,
        [&](std::size_t m, const VaeModel& model, const TrainTrace& t) {
            const auto p = man.out("model_m" + std::to_string(m) + ".json");
            save_model(model, p);
            models.push_back(p);
            log(g, "sweep: m = " + std::to_string(m) + " done (" + std::to_string(t.epochs.size()) + " epochs)");
        },
        g.threads);
    const auto csv = man.out(o.output);
    write_text_file(csv, sweep_to_csv(rows));
    man.add_output(csv);
    std::sort(models.begin(), models.end());
    for (const auto& p : models) man.add_output(p);
    nlohmann::json dims = o.sweep.dims;
    man.set_config({{"dims", dims}, {"vae", o.vae.to_json()}, {"train", o.train.to_json()}, {"data", o.data}});
    man.set_seed("model", o.vae.seed);
    man.set_seed("train", o.train.seed);
    man.set_registry_hash(reg.hash());
    man.commit();
    return rows;
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

struct OptimizeOptions {
    std::string data = "dataset.csv";
    std::string model = "model.json";
    std::vector<ObjectiveSpec> objectives{{1, true}, {3, false}};
    moo::Nsga2Config nsga;
    LatentBoundsRule bounds_rule = LatentBoundsRule::envelope;
    double bounds_c = 3.0;
    std::string output = "pareto.csv";
};

struct OptimizeOutcome {
    moo::Nsga2Result result;
    std::string archive_path;
    std::size_t sv_count = 0, dv_count = 0;
};

inline OptimizeOutcome optimize_cmd(const GlobalOptions& g, OptimizeOptions o) {
    const auto reg = load_registry(g);
    if (g.seed) o.nsga.seed = *g.seed;
    o.nsga.threads = g.threads;
    o.nsga.validate();
    const auto ds = load_dataset(reg, o.data);
    const auto model = load_model(o.model, reg.hash());
    RunManifest man("optimize", g);
    man.add_input(o.data);
    man.add_input(o.model);
    const auto train = ds.subset(Split::train);
    const auto lb = latent_bounds_from_training(model, reg, train, o.bounds_rule, o.bounds_c);
    for (const auto& w : lb.warnings) log(g, "warning: " + w);
    const LatentDesignProblem problem(model, reg, lb.bounds, o.objectives);
    OptimizeOutcome out;
    out.result = moo::evolve(problem, o.nsga, [&](std::size_t gen, const std::vector<moo::Individual>& pop) {
        if (gen % 20 == 0) {
            std::size_t feasible = 0;
            for (const auto& i : pop) feasible += i.feasible();
            log(g, "  generation " + std::to_string(gen) + ": " + std::to_string(feasible) + " feasible");
        }
    });
    if (out.result.archive.empty()) throw ValidationError("optimization produced no feasible Pareto designs");
    out.archive_path = man.out(o.output);
    write_text_file(out.archive_path, archive_to_csv(reg, problem, out.result.archive));
    man.add_output(out.archive_path);

    std::vector<std::vector<double>> genomes;
    for (const auto& a : out.result.archive) genomes.push_back(a.genome);
    for (const auto& d : problem.decode(genomes)) {
        if (d.sample && reg.topology(d.sample->topology_id).name == "SV") ++out.sv_count;
        if (d.sample && reg.topology(d.sample->topology_id).name == "DV") ++out.dv_count;
    }
    nlohmann::json objectives = nlohmann::json::array();
    for (const auto& ob : o.objectives) objectives.push_back(ob.label());
    nlohmann::json meta{{"nsga2", o.nsga.to_json()},
                        {"objectives", objectives},
                        {"bounds_rule", o.bounds_rule == LatentBoundsRule::envelope ? "envelope" : "mean_std"},
                        {"latent_lo", lb.bounds.lo},
                        {"latent_hi", lb.bounds.hi},
                        {"model_checksum", checksum_file(o.model)},
                        {"registry_hash", reg.hash()},
                        {"archive_size", out.result.archive.size()},
                        {"evaluations", out.result.evaluations}};
    const auto meta_path = man.out(fs::path(o.output).stem().string() + "_run.json");
    write_text_file(meta_path, meta.dump(2) + "\n");
    man.add_output(meta_path);
    log(g, "optimize: " + std::to_string(out.result.archive.size()) + " Pareto designs (" +
               std::to_string(out.sv_count) + " SV, " + std::to_string(out.dv_count) + " DV) -> " +
               out.archive_path);
    man.set_config({{"data", o.data}, {"model", o.model}, {"run", meta}});
    man.set_seed("nsga2", o.nsga.seed);
    man.set_registry_hash(reg.hash());
    man.commit();
    return out;
}

// ---------------------------------------------------------------------------
// validate-pareto
// ---------------------------------------------------------------------------

struct ArchiveRow {
    DesignSample sample;
    KpiVector predicted;
    std::vector<double> objectives;
};

inline std::vector<ArchiveRow> read_archive(const TopologyRegistry& reg, const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty archive file");
    const auto header = split_csv_line(line);
    const auto names = reg.integrated_names();
    const std::size_t n_params = names.size() - 1;
    if (header.size() < 2 + n_params + KpiVector::size + 1 || header[0] != "topology")
        throw FormatError("unexpected archive header");
    for (std::size_t i = 0; i < names.size(); ++i)
        if (header[1 + i] != names[i]) throw RegistryMismatchError("archive columns do not match the registry");
    const std::size_t n_obj = header.size() - (2 + n_params + KpiVector::size) - 1;
    std::vector<ArchiveRow> rows;
    std::size_t r = 1;
    while (std::getline(in, line)) {
        ++r;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where = "archive row " + std::to_string(r);
        if (cells.size() != header.size()) throw FormatError("wrong cell count in " + where);
        ArchiveRow a;
        a.sample.topology_id = static_cast<int>(parse_double(cells[1], where));
        const auto& t = reg.topology(a.sample.topology_id);
        const std::size_t off = 2 + reg.block_offset(a.sample.topology_id) - 1;
        for (std::size_t i = 0; i < t.size(); ++i) a.sample.values.push_back(parse_double(cells[off + i], where));
        for (std::size_t k = 0; k < KpiVector::size; ++k) a.predicted[k] = parse_double(cells[2 + n_params + k], where);
        for (std::size_t j = 0; j < n_obj; ++j)
            a.objectives.push_back(parse_double(cells[2 + n_params + KpiVector::size + j], where));
        rows.push_back(std::move(a));
    }
    return rows;
}

struct ValidationEntry {
    std::string design; // e.g. "extreme_objective1", "knee"
    std::string topology;
    std::size_t archive_index = 0;
    KpiVector oracle;
    KpiVector predicted;
    std::array<double, KpiVector::size> mre{};
};

struct ValidationReport {
    std::vector<ValidationEntry> entries;
    double mean_mre = 0.0; // percent, over all selected designs and KPIs

    std::string to_csv() const {
        std::ostringstream os;
        os << "design,topology,archive_index,kpi,oracle,prediction,mre_percent\n";
        for (const auto& e : entries)
            for (std::size_t k = 0; k < KpiVector::size; ++k)
                os << e.design << ',' << e.topology << ',' << e.archive_index << ',' << KpiVector::names[k] << ','
                   << format_double(e.oracle[k]) << ',' << format_double(e.predicted[k]) << ','
                   << format_double(e.mre[k]) << '\n';
        return os.str();
    }
};

// Re-scores selected archive designs (objective extremes and the knee, or the
// first `count` rows when count > 0) with the KPI oracle.
inline ValidationReport validate_archive(const TopologyRegistry& reg, const std::vector<ArchiveRow>& rows,
                                         const OracleConfig& oracle, std::size_t count = 0) {
    if (rows.empty()) throw ValidationError("empty Pareto archive");
    std::vector<std::pair<std::string, std::size_t>> picks;
    if (count > 0) {
        for (std::size_t i = 0; i < std::min(count, rows.size()); ++i) picks.push_back({"row" + std::to_string(i), i});
    } else {
        std::vector<moo::Individual> inds(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) inds[i].objectives = rows[i].objectives;
        auto add = [&](std::string label, std::size_t i) {
            for (const auto& p : picks)
                if (p.second == i) return;
            picks.push_back({std::move(label), i});
        };
        for (std::size_t j = 0; j < rows.front().objectives.size(); ++j) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < rows.size(); ++i)
                if (rows[i].objectives[j] < rows[best].objectives[j]) best = i;
            add("extreme_objective" + std::to_string(j + 1), best);
        }
        add("knee", knee_point(inds));
    }
    ValidationReport rep;
    double total = 0.0;
    for (const auto& [label, i] : picks) {
        ValidationEntry e;
        e.design = label;
        e.archive_index = i;
        e.topology = reg.topology(rows[i].sample.topology_id).name;
        e.predicted = rows[i].predicted;
        e.oracle = kpi_oracle(reg, rows[i].sample, oracle, i);
        for (std::size_t k = 0; k < KpiVector::size; ++k) {
            e.mre[k] = 100.0 * std::abs(e.predicted[k] - e.oracle[k]) / std::abs(e.oracle[k]);
            total += e.mre[k];
        }
        rep.entries.push_back(e);
    }
    rep.mean_mre = total / static_cast<double>(rep.entries.size() * KpiVector::size);
    return rep;
}

struct ValidateOptions {
    std::string archive = "pareto.csv";
    std::array<double, KpiVector::size> noise{0.0, 0.0, 0.0, 0.0};
    std::size_t count = 0;
    std::string output = "pareto_validation.csv";
};

inline ValidationReport validate_pareto_cmd(const GlobalOptions& g, const ValidateOptions& o) {
    const auto reg = load_registry(g);
    const auto rows = read_archive(reg, o.archive);
    OracleConfig oc;
    if (g.seed) oc.seed = *g.seed;
    oc.noise_std = o.noise;
    oc.validate();
    RunManifest man("validate-pareto", g);
    man.add_input(o.archive);
    const auto rep = validate_archive(reg, rows, oc, o.count);
    const auto csv = man.out(o.output);
    write_text_file(csv, rep.to_csv());
    man.add_output(csv);
    std::ostringstream os;
    char line[256];
    for (const auto& e : rep.entries) {
        os << "  " << e.design << " (" << e.topology << ", archive row " << e.archive_index << ")\n";
        for (std::size_t k = 0; k < KpiVector::size; ++k) {
            std::snprintf(line, sizeof line, "    %-18s oracle %12.5g  prediction %12.5g  MRE %7.3f %%\n",
                          KpiVector::labels[k], e.oracle[k], e.predicted[k], e.mre[k]);
            os << line;
        }
    }
    log(g, "validate-pareto:\n" + os.str() + "  mean MRE " + format_double(rep.mean_mre) + " %");
    man.set_config({{"archive", o.archive}, {"oracle", oc.to_json()}, {"count", o.count}});
    man.set_seed("oracle", oc.seed);
    man.set_registry_hash(reg.hash());
    man.commit();
    return rep;
}

} // namespace emvae::pipeline
