#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/checksum.hpp"
#include "emvae/design_space.hpp"
#include "emvae/random.hpp"

namespace emvae {

// Synthetic stand-in for the magneto-static FE evaluation. The formulas in
// kpi_oracle() are the frozen reference; with zero noise every implementation
// must reproduce them bit for bit.

struct OracleConfig {
    std::uint64_t seed = 7;
    // Relative Gaussian noise per KPI (0.01 = 1 % of the value).
    std::array<double, KpiVector::size> noise_std{0.0, 0.0, 0.0, 0.0};
    // Sample count per topology id.
    std::map<int, std::size_t> counts{{1, 4000}, {2, 4000}};

    static OracleConfig realism(std::uint64_t seed = 7) {
        OracleConfig c;
        c.seed = seed;
        c.noise_std = {0.01, 0.01, 0.01, 0.01};
        return c;
    }

    void validate() const {
        for (double s : noise_std)
            if (!(s >= 0.0)) throw ConfigError("noise_std must be >= 0");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["noise_std"] = noise_std;
        nlohmann::json c = nlohmann::json::object();
        for (const auto& [id, n] : counts) c[std::to_string(id)] = n;
        j["counts"] = c;
        return j;
    }

    static OracleConfig from_json(const nlohmann::json& j) {
        OracleConfig c;
        c.seed = j.at("seed").get<std::uint64_t>();
        c.noise_std = j.at("noise_std").get<std::array<double, KpiVector::size>>();
        c.counts.clear();
        for (const auto& [k, v] : j.at("counts").items()) c.counts[std::stoi(k)] = v.get<std::size_t>();
        return c;
    }
};

// Normalized features the oracle reads from a design.
struct OracleFeatures {
    double air_gap = 0.0;
    double magnet_height = 0.0;
    double magnet_angle = 0.0;
    double tooth_height = 0.0;
    double iron_length = 0.0;
    double rotor_diameter = 0.0;
    double auxiliary = 0.5;
    double double_v = 0.0;
};

namespace detail {

inline double normalized_param(const TopologySpec& t, const DesignSample& s, std::string_view name) {
    auto idx = t.index_of(name);
    if (!idx) throw ConfigError("topology '" + t.name + "' lacks parameter '" + std::string(name) + "' needed by the oracle");
    return normalize(s.values[*idx], t.params[*idx]);
}

} // namespace detail

inline OracleFeatures oracle_features(const TopologySpec& t, const DesignSample& s) {
    OracleFeatures f;
    f.air_gap = detail::normalized_param(t, s, "air_gap");
    if (t.index_of("magnet_height_2")) {
        f.double_v = 1.0;
        f.magnet_height = 0.5 * (detail::normalized_param(t, s, "magnet_height_1") +
                                 detail::normalized_param(t, s, "magnet_height_2"));
        f.magnet_angle = 0.5 * (detail::normalized_param(t, s, "magnet_angle_1") +
                                detail::normalized_param(t, s, "magnet_angle_2"));
    } else {
        f.magnet_height = detail::normalized_param(t, s, "magnet_height");
        f.magnet_angle = detail::normalized_param(t, s, "magnet_angle");
    }
    f.tooth_height = detail::normalized_param(t, s, "stator_tooth_height");
    f.iron_length = detail::normalized_param(t, s, "iron_length");
    f.rotor_diameter = detail::normalized_param(t, s, "rotor_outer_diameter");
    double aux_sum = 0.0;
    std::size_t aux_n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.params[i].name.rfind("aux_", 0) == 0) {
            aux_sum += normalize(s.values[i], t.params[i]);
            ++aux_n;
        }
    }
    if (aux_n) f.auxiliary = aux_sum / static_cast<double>(aux_n);
    return f;
}

inline KpiVector kpi_from_features(const OracleFeatures& f) {
    constexpr double pi = std::numbers::pi;
    const double a = f.air_gap, h = f.magnet_height, al = f.magnet_angle, t = f.tooth_height;
    const double l = f.iron_length, d = f.rotor_diameter, g = f.auxiliary, dv = f.double_v;
    KpiVector y;
    y[0] = 150.0 + 300.0 * h * d * l + 50.0 * std::sin(pi * al) - 60.0 * a + 20.0 * (g - 0.5) + 80.0 * dv * h;
    y[1] = 0.35 * y[0] * (0.8 + 0.4 * t);
    const double ripple = std::abs(std::sin(2.0 * pi * al));
    y[2] = 5.0 + 40.0 * ripple * (1.0 - a) + 10.0 * (1.0 - t) + 60.0 * dv * h * ripple;
    y[3] = 50.0 + 120.0 * h * l * d + 30.0 * t + 40.0 * dv * h;
    return y;
}

// Noise-free oracle.
inline KpiVector kpi_oracle(const TopologyRegistry& reg, const DesignSample& s) {
    const auto violations = reg.validate_bounds(s);
    if (!violations.empty())
        throw ValidationError("oracle input out of bounds: '" + violations.front().parameter + "' = " +
                              format_double(violations.front().value));
    return kpi_from_features(oracle_features(reg.topology(s.topology_id), s));
}

// Oracle with the configured relative noise; `stream` keys the sample so the
// draw is independent of evaluation order.
inline KpiVector kpi_oracle(const TopologyRegistry& reg, const DesignSample& s, const OracleConfig& cfg,
                            std::uint64_t stream) {
    KpiVector y = kpi_oracle(reg, s);
    bool noisy = false;
    for (double n : cfg.noise_std) noisy = noisy || n > 0.0;
    if (!noisy) return y;
    auto rng = make_rng(cfg.seed, {0x6e6f697365ULL, stream});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < KpiVector::size; ++i) {
        const double e = normal(rng);
        y[i] *= 1.0 + cfg.noise_std[i] * e;
    }
    y[2] = std::max(0.0, y[2]);
    return y;
}

// i.i.d. uniform samples within bounds; sample i depends only on (seed, id, i).
inline std::vector<DesignSample> sample_designs(const TopologyRegistry& reg, int topology_id, std::size_t count,
                                                std::uint64_t seed) {
    const auto& t = reg.topology(topology_id);
    std::vector<DesignSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto rng = make_rng(seed, {static_cast<std::uint64_t>(topology_id), i});
        DesignSample s;
        s.topology_id = topology_id;
        s.values.resize(t.size());
        for (std::size_t p = 0; p < t.size(); ++p) {
            std::uniform_real_distribution<double> u(t.params[p].min, t.params[p].max);
            s.values[p] = u(rng);
        }
        out.push_back(std::move(s));
    }
    return out;
}

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_string(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split label '" + std::string(s) + "'");
}

struct SplitFractions {
    double train = 0.9;
    double val = 0.05;
    double test = 0.05;

    void validate() const {
        for (double f : {train, val, test})
            if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
        if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    }
};

struct Dataset {
    std::vector<DesignSample> samples;
    std::vector<Split> splits;
    OracleConfig provenance;
    SplitFractions fractions;

    std::size_t size() const noexcept { return samples.size(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    std::vector<DesignSample> subset(Split s) const {
        std::vector<DesignSample> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(samples[i]);
        return out;
    }

    std::size_t count(Split s) const {
        return static_cast<std::size_t>(std::count(splits.begin(), splits.end(), s));
    }
};

struct DatasetSummary {
    std::map<int, std::size_t> per_topology;
    std::array<std::size_t, 3> per_split{};
    std::array<double, KpiVector::size> kpi_min{};
    std::array<double, KpiVector::size> kpi_max{};
    std::array<double, KpiVector::size> kpi_mean{};
};

inline DatasetSummary summarize(const Dataset& ds) {
    DatasetSummary s;
    s.kpi_min.fill(std::numeric_limits<double>::infinity());
    s.kpi_max.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ++s.per_topology[ds.samples[i].topology_id];
        ++s.per_split[static_cast<std::size_t>(ds.splits[i])];
        if (!ds.samples[i].kpis) continue;
        for (std::size_t k = 0; k < KpiVector::size; ++k) {
            const double v = (*ds.samples[i].kpis)[k];
            s.kpi_min[k] = std::min(s.kpi_min[k], v);
            s.kpi_max[k] = std::max(s.kpi_max[k], v);
            s.kpi_mean[k] += v / static_cast<double>(ds.size());
        }
    }
    return s;
}

inline Dataset build_dataset(const TopologyRegistry& reg, const OracleConfig& cfg, const SplitFractions& fr = {}) {
    cfg.validate();
    fr.validate();
    Dataset ds;
    ds.provenance = cfg;
    ds.fractions = fr;
    std::uint64_t stream = 0;
    for (const auto& [id, count] : cfg.counts) {
        auto designs = sample_designs(reg, id, count, cfg.seed);
        for (auto& d : designs) {
            d.kpis = kpi_oracle(reg, d, cfg, stream++);
            ds.samples.push_back(std::move(d));
        }
    }
    const std::size_t n = ds.samples.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = make_rng(cfg.seed, {0x73706c6974ULL});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(fr.train * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(fr.val * static_cast<double>(n))));
    ds.splits.assign(n, Split::test);
    for (std::size_t r = 0; r < n; ++r) {
        if (r < n_train)
            ds.splits[order[r]] = Split::train;
        else if (r < n_train + n_val)
            ds.splits[order[r]] = Split::val;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV: topology,k,<integrated parameter names>,y1,y2,y3,y4,split
// Cells of blocks belonging to other topologies are left empty.
// ---------------------------------------------------------------------------

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string design_csv_header(const TopologyRegistry& reg) {
    std::string h = "topology,k";
    const auto names = reg.integrated_names();
    for (std::size_t i = 1; i < names.size(); ++i) h += "," + names[i];
    return h;
}

// "<topology>,<k>,<blocks...>" for one design.
inline std::string design_csv_cells(const TopologyRegistry& reg, const DesignSample& s) {
    const auto& t = reg.topology(s.topology_id);
    std::string row = t.name + "," + std::to_string(s.topology_id);
    for (int id : reg.ids()) {
        const auto& other = reg.topology(id);
        for (std::size_t i = 0; i < other.size(); ++i) {
            row += ",";
            if (id == s.topology_id) row += format_double(s.values[i]);
        }
    }
    return row;
}

inline std::string dataset_to_csv(const TopologyRegistry& reg, const Dataset& ds) {
    std::string out = design_csv_header(reg) + ",y1,y2,y3,y4,split\n";
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto& s = ds.samples[r];
        out += design_csv_cells(reg, s);
        for (std::size_t k = 0; k < KpiVector::size; ++k)
            out += "," + (s.kpis ? format_double((*s.kpis)[k]) : std::string());
        out += ",";
        out += to_string(ds.splits[r]);
        out += "\n";
    }
    return out;
}

inline nlohmann::json dataset_sidecar(const TopologyRegistry& reg, const Dataset& ds) {
    return {{"format", "emvae-dataset"},
            {"version", 1},
            {"oracle", ds.provenance.to_json()},
            {"fractions", {ds.fractions.train, ds.fractions.val, ds.fractions.test}},
            {"registry_hash", reg.hash()},
            {"rows", ds.size()}};
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw ConfigError("failed writing '" + path + "'");
}

inline void save_dataset(const TopologyRegistry& reg, const Dataset& ds, const std::string& csv_path) {
    write_text_file(csv_path, dataset_to_csv(reg, ds));
    write_text_file(csv_path + ".json", dataset_sidecar(reg, ds).dump(2) + "\n");
}

inline double parse_double(const std::string& cell, const std::string& what) {
    try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse '" + cell + "' as number in " + what);
    }
}

inline Dataset dataset_from_csv(const TopologyRegistry& reg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset file");
    if (line != design_csv_header(reg) + ",y1,y2,y3,y4,split")
        throw RegistryMismatchError("dataset header does not match the registered topologies");
    const std::size_t n_params = reg.dimension() - 1;
    Dataset ds;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where = "row " + std::to_string(row);
        if (cells.size() != 2 + n_params + KpiVector::size + 1) throw FormatError("wrong cell count in " + where);
        DesignSample s;
        s.topology_id = static_cast<int>(parse_double(cells[1], where));
        const auto& t = reg.topology(s.topology_id);
        const std::size_t off = 2 + reg.block_offset(s.topology_id) - 1;
        for (std::size_t i = 0; i < t.size(); ++i) s.values.push_back(parse_double(cells[off + i], where));
        KpiVector y;
        for (std::size_t k = 0; k < KpiVector::size; ++k) y[k] = parse_double(cells[2 + n_params + k], where);
        s.kpis = y;
        ds.samples.push_back(std::move(s));
        ds.splits.push_back(split_from_string(cells.back()));
    }
    return ds;
}

// Loads a dataset and verifies its sidecar against the registry.
inline Dataset load_dataset(const TopologyRegistry& reg, const std::string& csv_path) {
    Dataset ds = dataset_from_csv(reg, read_file(csv_path));
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(read_file(csv_path + ".json"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed dataset sidecar: " + std::string(e.what()));
    }
    if (side.value("registry_hash", "") != reg.hash())
        throw RegistryMismatchError("dataset was generated for a different topology registry");
    ds.provenance = OracleConfig::from_json(side.at("oracle"));
    const auto fr = side.at("fractions");
    ds.fractions = {fr.at(0).get<double>(), fr.at(1).get<double>(), fr.at(2).get<double>()};
    return ds;
}

} // namespace emvae
