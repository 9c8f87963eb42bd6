#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/checksum.hpp"
#include "emvae/error.hpp"

namespace emvae {

struct ParameterSpec {
    std::string name;
    double min = 0.0;
    double max = 1.0;
    std::string unit;
};

struct TopologySpec {
    int id = 0;
    std::string name;
    std::vector<ParameterSpec> params;

    std::size_t size() const noexcept { return params.size(); }

    std::optional<std::size_t> index_of(std::string_view param) const {
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name == param) return i;
        return std::nullopt;
    }

    void validate() const {
        if (id < 1) throw ConfigError("topology id must be >= 1, got " + std::to_string(id));
        if (params.empty()) throw ConfigError("topology '" + name + "' has no parameters");
        std::set<std::string> seen;
        for (const auto& p : params) {
            if (!(p.min < p.max))
                throw ConfigError("parameter '" + p.name + "' of '" + name + "' needs min < max");
            if (!seen.insert(p.name).second)
                throw ConfigError("duplicate parameter '" + p.name + "' in topology '" + name + "'");
        }
    }
};

// Maximum torque [Nm], maximum power [kW], maximum torque ripple [Nm],
// material cost [Euro].
struct KpiVector {
    static constexpr std::size_t size = 4;
    static constexpr std::array<const char*, size> names{"y1", "y2", "y3", "y4"};
    static constexpr std::array<const char*, size> labels{"max_torque", "max_power", "max_torque_ripple",
                                                          "material_cost"};
    static constexpr std::array<const char*, size> units{"Nm", "kW", "Nm", "Euro"};

    std::array<double, size> values{};

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool valid() const noexcept {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return values[0] > 0.0 && values[1] > 0.0 && values[2] >= 0.0 && values[3] > 0.0;
    }

    static std::size_t index_of(std::string_view name) {
        for (std::size_t i = 0; i < size; ++i)
            if (name == names[i] || name == labels[i]) return i;
        throw ConfigError("unknown KPI '" + std::string(name) + "'");
    }
};

struct DesignSample {
    int topology_id = 0;
    std::vector<double> values; // native units
    std::optional<KpiVector> kpis;
};

struct BoundViolation {
    std::size_t index = 0;
    std::string parameter;
    double value = 0.0;
    double limit = 0.0;
    double magnitude = 0.0; // native units, always > 0
};

struct ExtractResult {
    DesignSample sample;
    double indicator_distance = 0.0; // |decoded k - chosen id|, in id units
    std::vector<BoundViolation> clamped;
};

inline double normalize(double value, const ParameterSpec& p) { return (value - p.min) / (p.max - p.min); }
inline double denormalize(double unit_value, const ParameterSpec& p) { return p.min + unit_value * (p.max - p.min); }

// Registry of topologies and the integrated design space built from them:
// [indicator, block(k=lowest id), ..., block(k=highest id)]. Blocks hold
// min-max normalized values; the indicator holds k / max_id.
class TopologyRegistry {
public:
    void register_topology(TopologySpec spec) {
        spec.validate();
        if (by_id_.count(spec.id)) throw ConfigError("topology id " + std::to_string(spec.id) + " already registered");
        by_id_.emplace(spec.id, std::move(spec));
        rebuild_offsets();
    }

    bool empty() const noexcept { return by_id_.empty(); }
    std::size_t topology_count() const noexcept { return by_id_.size(); }

    // n = 1 + sum of n_k.
    std::size_t dimension() const noexcept {
        std::size_t n = 1;
        for (const auto& [id, t] : by_id_) n += t.size();
        return n;
    }

    bool contains(int id) const { return by_id_.count(id) != 0; }

    const TopologySpec& topology(int id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw ValidationError("topology id " + std::to_string(id) + " is not registered");
        return it->second;
    }

    const TopologySpec& topology_by_name(std::string_view name) const {
        for (const auto& [id, t] : by_id_)
            if (t.name == name) return t;
        throw ValidationError("unknown topology '" + std::string(name) + "'");
    }

    std::vector<int> ids() const {
        std::vector<int> out;
        for (const auto& [id, t] : by_id_) out.push_back(id);
        return out;
    }

    std::size_t block_offset(int id) const {
        topology(id);
        return offsets_.at(id);
    }

    int max_id() const { return by_id_.empty() ? 0 : by_id_.rbegin()->first; }

    double indicator_value(int id) const { return static_cast<double>(id) / static_cast<double>(max_id()); }

    std::vector<BoundViolation> validate_bounds(const DesignSample& s) const {
        const auto& t = topology(s.topology_id);
        if (s.values.size() != t.size())
            throw ValidationError("topology '" + t.name + "' expects " + std::to_string(t.size()) + " values, got " +
                                  std::to_string(s.values.size()));
        std::vector<BoundViolation> out;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto& p = t.params[i];
            const double v = s.values[i];
            if (!std::isfinite(v)) {
                out.push_back({i, p.name, v, p.min, std::numeric_limits<double>::infinity()});
            } else if (v < p.min) {
                out.push_back({i, p.name, v, p.min, p.min - v});
            } else if (v > p.max) {
                out.push_back({i, p.name, v, p.max, v - p.max});
            }
        }
        return out;
    }

    std::vector<double> embed(const DesignSample& s) const {
        const auto violations = validate_bounds(s);
        if (!violations.empty()) {
            const auto& v = violations.front();
            throw ValidationError("parameter '" + v.parameter + "' = " + format_double(v.value) +
                                  " outside bounds (limit " + format_double(v.limit) + ")");
        }
        const auto& t = topology(s.topology_id);
        std::vector<double> out(dimension(), 0.0);
        out[0] = indicator_value(s.topology_id);
        const std::size_t off = offsets_.at(s.topology_id);
        for (std::size_t i = 0; i < t.size(); ++i) out[off + i] = normalize(s.values[i], t.params[i]);
        return out;
    }

    // Nearest registered id to the indicator (in id units). Throws when the
    // indicator is more than 0.5 away from every id or exactly between two.
    int resolve_topology(double indicator, double* distance = nullptr) const {
        if (by_id_.empty()) throw StateError("empty topology registry");
        if (!std::isfinite(indicator)) throw AmbiguousTopologyError("non-finite indicator");
        const double k = indicator * static_cast<double>(max_id());
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        double second_d = std::numeric_limits<double>::infinity();
        for (const auto& [id, t] : by_id_) {
            const double d = std::abs(k - static_cast<double>(id));
            if (d < best_d) {
                second_d = best_d;
                best_d = d;
                best = id;
            } else if (d < second_d) {
                second_d = d;
            }
        }
        if (distance) *distance = best_d;
        if (best_d > 0.5 || best_d == second_d)
            throw AmbiguousTopologyError("indicator " + format_double(indicator) + " (k = " + format_double(k) +
                                         ") does not resolve to a single registered topology");
        return best;
    }

    ExtractResult extract(std::span<const double> v, bool snap) const {
        if (v.size() != dimension())
            throw DimensionError("integrated vector length " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(dimension()));
        ExtractResult r;
        const int id = resolve_topology(v[0], &r.indicator_distance);
        const auto& t = topology(id);
        const std::size_t off = offsets_.at(id);
        r.sample.topology_id = id;
        r.sample.values.resize(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) r.sample.values[i] = denormalize(v[off + i], t.params[i]);
        if (snap) {
            r.clamped = validate_bounds(r.sample);
            for (const auto& c : r.clamped) r.sample.values[c.index] = c.limit;
        }
        return r;
    }

    // Fingerprint of the ordered topology definitions.
    std::string hash() const {
        Fnv1a64 h;
        for (const auto& [id, t] : by_id_) {
            h.update(std::to_string(id) + "|" + t.name + "{");
            for (const auto& p : t.params)
                h.update(p.name + "|" + format_double(p.min) + "|" + format_double(p.max) + "|" + p.unit + ";");
            h.update("}");
        }
        return h.hex();
    }

    // Column names of the integrated vector, e.g. "SV.air_gap".
    std::vector<std::string> integrated_names() const {
        std::vector<std::string> out{"k"};
        for (const auto& [id, t] : by_id_)
            for (const auto& p : t.params) out.push_back(t.name + "." + p.name);
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["topologies"] = nlohmann::json::array();
        for (const auto& [id, t] : by_id_) {
            nlohmann::json jt;
            jt["id"] = t.id;
            jt["name"] = t.name;
            jt["parameters"] = nlohmann::json::array();
            for (const auto& p : t.params)
                jt["parameters"].push_back({{"name", p.name}, {"min", p.min}, {"max", p.max}, {"unit", p.unit}});
            j["topologies"].push_back(jt);
        }
        return j;
    }

    static TopologyRegistry from_json(const nlohmann::json& j) {
        TopologyRegistry reg;
        try {
            for (const auto& jt : j.at("topologies")) {
                TopologySpec t;
                t.id = jt.at("id").get<int>();
                t.name = jt.at("name").get<std::string>();
                for (const auto& jp : jt.at("parameters")) {
                    ParameterSpec p;
                    p.name = jp.at("name").get<std::string>();
                    p.min = jp.at("min").get<double>();
                    p.max = jp.at("max").get<double>();
                    p.unit = jp.value("unit", "");
                    t.params.push_back(std::move(p));
                }
                reg.register_topology(std::move(t));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("malformed topology config: ") + e.what());
        }
        if (reg.empty()) throw ConfigError("topology config registers no topologies");
        return reg;
    }

    static TopologyRegistry load_file(const std::string& path) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("cannot parse topology config '" + path + "': " + e.what());
        } catch (const FormatError&) {
            throw ConfigError("cannot read topology config '" + path + "'");
        }
        return from_json(j);
    }

private:
    void rebuild_offsets() {
        offsets_.clear();
        std::size_t off = 1;
        for (const auto& [id, t] : by_id_) {
            offsets_[id] = off;
            off += t.size();
        }
    }

    std::map<int, TopologySpec> by_id_;
    std::map<int, std::size_t> offsets_;
};

inline std::vector<ParameterSpec> auxiliary_parameters(std::size_t count) {
    std::vector<ParameterSpec> out;
    for (std::size_t i = 1; i <= count; ++i) out.push_back({"aux_" + std::to_string(i), 0.0, 1.0, "-"});
    return out;
}

// Single-V rotor: 6 geometric parameters plus 7 auxiliaries (n_1 = 13).
inline TopologySpec single_v_topology() {
    TopologySpec t{1, "SV",
                   {{"air_gap", 0.8, 1.8, "mm"},
                    {"magnet_height", 4.5, 6.5, "mm"},
                    {"magnet_angle", 14.0, 36.0, "deg"},
                    {"stator_tooth_height", 12.0, 20.0, "mm"},
                    {"iron_length", 120.0, 160.0, "mm"},
                    {"rotor_outer_diameter", 150.0, 180.0, "mm"}}};
    auto aux = auxiliary_parameters(7);
    t.params.insert(t.params.end(), aux.begin(), aux.end());
    return t;
}

// Double-V rotor: 8 geometric parameters plus 10 auxiliaries (n_2 = 18).
inline TopologySpec double_v_topology() {
    TopologySpec t{2, "DV",
                   {{"air_gap", 0.8, 1.8, "mm"},
                    {"magnet_height_1", 4.5, 6.5, "mm"},
                    {"magnet_angle_1", 20.0, 40.0, "deg"},
                    {"magnet_height_2", 3.7, 5.6, "mm"},
                    {"magnet_angle_2", 18.0, 35.0, "deg"},
                    {"stator_tooth_height", 10.0, 24.0, "mm"},
                    {"iron_length", 120.0, 160.0, "mm"},
                    {"rotor_outer_diameter", 150.0, 180.0, "mm"}}};
    auto aux = auxiliary_parameters(10);
    t.params.insert(t.params.end(), aux.begin(), aux.end());
    return t;
}

inline TopologyRegistry default_registry() {
    TopologyRegistry reg;
    reg.register_topology(single_v_topology());
    reg.register_topology(double_v_topology());
    return reg;
}

} // namespace emvae
