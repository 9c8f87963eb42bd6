#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "emvae/fe_surrogate.hpp"
#include "emvae/vae.hpp"

namespace emvae::test {

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "emvae") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline DesignSample midpoint_sample(const TopologyRegistry& reg, int id) {
    const auto& t = reg.topology(id);
    DesignSample s;
    s.topology_id = id;
    for (const auto& p : t.params) s.values.push_back(0.5 * (p.min + p.max));
    return s;
}

// Shrunk network with the same layer kinds as the default, for fast tests.
inline VaeConfig tiny_vae_config(std::size_t n, std::size_t m = 3, std::uint64_t seed = 1) {
    VaeConfig c;
    c.input_dim = n;
    c.latent_dim = m;
    c.encoder_convs = {{3, 3, 1, nn::Padding::same}, {4, 3, 1, nn::Padding::same}};
    c.encoder_dense = 8;
    c.decoder_dense = 8;
    c.decoder_channels = 4;
    c.decoder_convs = {{4, 3, 1, nn::Padding::valid}, {3, 3, 1, nn::Padding::valid}};
    c.mlp_widths = {8, 6};
    c.seed = seed;
    return c;
}

inline Dataset small_dataset(const TopologyRegistry& reg, std::size_t per_topology, std::uint64_t seed = 7) {
    OracleConfig oc;
    oc.seed = seed;
    oc.counts = {{1, per_topology}, {2, per_topology}};
    return build_dataset(reg, oc);
}

} // namespace emvae::test
