#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "emvae/checksum.hpp"
#include "emvae/fe_surrogate.hpp"
#include "emvae/vae.hpp"

namespace emvae {

inline constexpr const char* model_magic = "EMVAE-MODEL";
inline constexpr int model_format_version = 1;

inline nlohmann::json model_to_json(const VaeModel& model) {
    nlohmann::json j;
    j["magic"] = model_magic;
    j["format_version"] = model_format_version;
    j["config"] = model.config().to_json();
    j["registry_hash"] = model.registry_hash();
    j["kpi_stats"] = {{"mean", model.kpi_stats().mean}, {"std", model.kpi_stats().std}};
    nlohmann::json nets = nlohmann::json::object();
    const auto networks = model.networks();
    for (std::size_t i = 0; i < networks.size(); ++i) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto* p : networks[i]->params())
            layers.push_back({{"weights", p->weights.storage()}, {"biases", p->biases.storage()}});
        nets[VaeModel::network_names[i]] = layers;
    }
    j["networks"] = nets;
    return j;
}

// Rebuilds a model from its container. `expected_registry_hash`, when
// non-empty, must match the hash recorded at training time.
inline VaeModel model_from_json(const nlohmann::json& j, const std::string& expected_registry_hash = {}) {
    try {
        if (!j.is_object() || j.value("magic", "") != model_magic) throw FormatError("not a model file (bad magic)");
        const int version = j.at("format_version").get<int>();
        if (version != model_format_version)
            throw FormatError("unsupported model format version " + std::to_string(version));
        const std::string hash = j.at("registry_hash").get<std::string>();
        if (!expected_registry_hash.empty() && hash != expected_registry_hash)
            throw RegistryMismatchError("model was trained on topology registry " + hash + ", current registry is " +
                                        expected_registry_hash);
        VaeModel model(VaeConfig::from_json(j.at("config")), hash);
        KpiStats stats{j.at("kpi_stats").at("mean").get<std::vector<double>>(),
                       j.at("kpi_stats").at("std").get<std::vector<double>>()};
        model.set_kpi_stats(std::move(stats));
        auto networks = model.networks();
        for (std::size_t i = 0; i < networks.size(); ++i) {
            const auto& layers = j.at("networks").at(VaeModel::network_names[i]);
            auto params = networks[i]->params();
            if (layers.size() != params.size())
                throw FormatError(std::string("layer count mismatch in ") + VaeModel::network_names[i]);
            for (std::size_t l = 0; l < params.size(); ++l) {
                auto w = layers.at(l).at("weights").get<std::vector<double>>();
                auto b = layers.at(l).at("biases").get<std::vector<double>>();
                if (w.size() != params[l]->weights.size() || b.size() != params[l]->biases.size())
                    throw FormatError(std::string("parameter blob size mismatch in ") + VaeModel::network_names[i]);
                params[l]->weights.storage() = std::move(w);
                params[l]->biases.storage() = std::move(b);
            }
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed model file: ") + e.what());
    }
}

inline void save_model(const VaeModel& model, const std::string& path) {
    write_text_file(path, model_to_json(model).dump() + "\n");
}

inline VaeModel load_model(const std::string& path, const std::string& expected_registry_hash = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("corrupted model file '" + path + "': " + e.what());
    }
    return model_from_json(j, expected_registry_hash);
}

} // namespace emvae
