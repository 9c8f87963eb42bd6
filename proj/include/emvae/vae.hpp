#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emvae/design_space.hpp"
#include "emvae/nn/network.hpp"

namespace emvae {

using nn::Tensor;

struct ConvStage {
    std::size_t channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    nn::Padding padding = nn::Padding::same;
};

// Architecture of the encoder / decoder / KPI predictor triple. Defaults are
// the desk-scale architecture; every size is overridable.
struct VaeConfig {
    std::size_t input_dim = 32;
    std::size_t latent_dim = 19;
    std::vector<ConvStage> encoder_convs{{16, 3, 1, nn::Padding::same},
                                         {32, 3, 1, nn::Padding::same},
                                         {32, 3, 1, nn::Padding::same}};
    std::size_t encoder_dense = 64;
    std::size_t decoder_dense = 64;
    std::size_t decoder_channels = 32; // second decoder dense emits channels * input_dim
    std::vector<ConvStage> decoder_convs{{32, 3, 1, nn::Padding::valid},
                                         {32, 3, 1, nn::Padding::valid},
                                         {16, 3, 1, nn::Padding::valid}};
    std::vector<std::size_t> mlp_widths{64, 64, 32, 32, 16};
    std::size_t kpi_count = KpiVector::size;
    nn::Activation hidden = nn::Activation::relu;
    double kl_weight = 1e-3;
    std::uint64_t seed = 1;

    void validate() const {
        if (latent_dim < 1) throw ConfigError("latent dimension must be >= 1");
        if (input_dim < 1) throw ConfigError("input dimension must be >= 1");
        if (!(kl_weight >= 0.0)) throw ConfigError("kl weight must be >= 0");
        if (kpi_count < 1) throw ConfigError("kpi count must be >= 1");
    }

    nlohmann::json to_json() const {
        auto stages = [](const std::vector<ConvStage>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (const auto& s : v)
                a.push_back({{"channels", s.channels},
                             {"kernel", s.kernel},
                             {"stride", s.stride},
                             {"padding", s.padding == nn::Padding::same ? "same" : "valid"}});
            return a;
        };
        return {{"input_dim", input_dim},
                {"latent_dim", latent_dim},
                {"encoder_convs", stages(encoder_convs)},
                {"encoder_dense", encoder_dense},
                {"decoder_dense", decoder_dense},
                {"decoder_channels", decoder_channels},
                {"decoder_convs", stages(decoder_convs)},
                {"mlp_widths", mlp_widths},
                {"kpi_count", kpi_count},
                {"hidden", nn::to_string(hidden)},
                {"kl_weight", kl_weight},
                {"seed", seed}};
    }

    static VaeConfig from_json(const nlohmann::json& j) {
        auto stages = [](const nlohmann::json& a) {
            std::vector<ConvStage> v;
            for (const auto& s : a) {
                const auto pad = s.at("padding").get<std::string>();
                if (pad != "same" && pad != "valid") throw ConfigError("unknown padding '" + pad + "'");
                v.push_back({s.at("channels").get<std::size_t>(), s.at("kernel").get<std::size_t>(),
                             s.at("stride").get<std::size_t>(),
                             pad == "same" ? nn::Padding::same : nn::Padding::valid});
            }
            return v;
        };
        VaeConfig c;
        c.input_dim = j.at("input_dim").get<std::size_t>();
        c.latent_dim = j.at("latent_dim").get<std::size_t>();
        c.encoder_convs = stages(j.at("encoder_convs"));
        c.encoder_dense = j.at("encoder_dense").get<std::size_t>();
        c.decoder_dense = j.at("decoder_dense").get<std::size_t>();
        c.decoder_channels = j.at("decoder_channels").get<std::size_t>();
        c.decoder_convs = stages(j.at("decoder_convs"));
        c.mlp_widths = j.at("mlp_widths").get<std::vector<std::size_t>>();
        c.kpi_count = j.at("kpi_count").get<std::size_t>();
        c.hidden = nn::activation_from_string(j.at("hidden").get<std::string>());
        c.kl_weight = j.at("kl_weight").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

// Realized latent draw: z = mean + exp(0.5 * logvar) * eps.
struct LatentSample {
    Tensor mean;
    Tensor logvar;
    Tensor eps;
    Tensor z;
};

struct LossBreakdown {
    double recon = 0.0;
    double kpi = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

// Per-KPI z-score statistics of the training split.
struct KpiStats {
    std::vector<double> mean;
    std::vector<double> std;

    static KpiStats fit(std::span<const KpiVector> ys) {
        if (ys.empty()) throw ValidationError("cannot fit KPI statistics on an empty set");
        KpiStats s;
        s.mean.assign(KpiVector::size, 0.0);
        s.std.assign(KpiVector::size, 0.0);
        const double n = static_cast<double>(ys.size());
        for (const auto& y : ys)
            for (std::size_t k = 0; k < KpiVector::size; ++k) s.mean[k] += y[k] / n;
        for (const auto& y : ys)
            for (std::size_t k = 0; k < KpiVector::size; ++k) s.std[k] += (y[k] - s.mean[k]) * (y[k] - s.mean[k]) / n;
        for (auto& v : s.std) v = std::sqrt(v);
        for (auto& v : s.std)
            if (!(v > 0.0)) v = 1.0;
        return s;
    }

    static KpiStats identity(std::size_t count) {
        return {std::vector<double>(count, 0.0), std::vector<double>(count, 1.0)};
    }
};

namespace detail {

inline std::vector<nn::LayerSpec> encoder_trunk_specs(const VaeConfig& c) {
    using nn::LayerSpec;
    std::vector<LayerSpec> s{LayerSpec::reshape({1, c.input_dim})};
    std::size_t ch = 1;
    for (const auto& st : c.encoder_convs) {
        s.push_back(LayerSpec::conv1d(ch, st.channels, st.kernel, st.stride, st.padding));
        s.push_back(LayerSpec::act(c.hidden));
        ch = st.channels;
    }
    s.push_back(LayerSpec::flatten());
    return s;
}

inline std::vector<nn::LayerSpec> mlp_specs(std::size_t in, const std::vector<std::size_t>& widths, std::size_t out,
                                            nn::Activation hidden) {
    using nn::LayerSpec;
    std::vector<LayerSpec> s;
    for (auto w : widths) {
        s.push_back(LayerSpec::dense(in, w));
        s.push_back(LayerSpec::act(hidden));
        in = w;
    }
    s.push_back(LayerSpec::dense(in, out));
    return s;
}

} // namespace detail

// Encoder trunk + mean/logvar heads, decoder, and KPI predictor.
class VaeModel {
public:
    VaeModel() = default;

    explicit VaeModel(const VaeConfig& cfg, std::string registry_hash = {})
        : config_(cfg), registry_hash_(std::move(registry_hash)), kpi_stats_(KpiStats::identity(cfg.kpi_count)) {
        using nn::LayerSpec;
        cfg.validate();
        const std::size_t n = cfg.input_dim, m = cfg.latent_dim;

        encoder_ = nn::Network({n}, detail::encoder_trunk_specs(cfg));
        encoder_.add(nn::make_layer(LayerSpec::dense(encoder_.output_shape().at(0), cfg.encoder_dense)));
        encoder_.add(nn::make_layer(LayerSpec::act(cfg.hidden)));
        mean_head_ = nn::Network({cfg.encoder_dense}, {LayerSpec::dense(cfg.encoder_dense, m)});
        logvar_head_ = nn::Network({cfg.encoder_dense}, {LayerSpec::dense(cfg.encoder_dense, m)});

        std::vector<LayerSpec> dec{LayerSpec::dense(m, cfg.decoder_dense), LayerSpec::act(cfg.hidden),
                                   LayerSpec::dense(cfg.decoder_dense, cfg.decoder_channels * n),
                                   LayerSpec::act(cfg.hidden), LayerSpec::reshape({cfg.decoder_channels, n})};
        std::size_t ch = cfg.decoder_channels;
        for (const auto& st : cfg.decoder_convs) {
            dec.push_back(LayerSpec::convtranspose1d(ch, st.channels, st.kernel, st.stride));
            dec.push_back(LayerSpec::act(cfg.hidden));
            ch = st.channels;
        }
        dec.push_back(LayerSpec::flatten());
        decoder_ = nn::Network({m}, dec);
        decoder_.add(nn::make_layer(LayerSpec::dense(decoder_.output_shape().at(0), n)));

        kpi_net_ = nn::Network({m}, detail::mlp_specs(m, cfg.mlp_widths, cfg.kpi_count, cfg.hidden));

        std::mt19937_64 rng(cfg.seed);
        for (auto* net : networks()) net->initialize(rng);
    }

    const VaeConfig& config() const noexcept { return config_; }
    std::size_t input_dim() const noexcept { return config_.input_dim; }
    std::size_t latent_dim() const noexcept { return config_.latent_dim; }
    const std::string& registry_hash() const noexcept { return registry_hash_; }
    void set_registry_hash(std::string h) { registry_hash_ = std::move(h); }
    const KpiStats& kpi_stats() const noexcept { return kpi_stats_; }
    void set_kpi_stats(KpiStats s) {
        if (s.mean.size() != config_.kpi_count || s.std.size() != config_.kpi_count)
            throw DimensionError("KPI statistics size mismatch");
        for (std::size_t k = 0; k < s.std.size(); ++k)
            if (!std::isfinite(s.mean[k]) || !(s.std[k] > 0.0) || !std::isfinite(s.std[k]))
                throw NumericError("KPI statistics must be finite with std > 0");
        kpi_stats_ = std::move(s);
    }

    std::array<nn::Network*, 5> networks() { return {&encoder_, &mean_head_, &logvar_head_, &decoder_, &kpi_net_}; }
    std::array<const nn::Network*, 5> networks() const {
        return {&encoder_, &mean_head_, &logvar_head_, &decoder_, &kpi_net_};
    }
    static constexpr std::array<const char*, 5> network_names{"encoder", "mean_head", "logvar_head", "decoder",
                                                              "kpi_predictor"};

    std::vector<nn::LayerParams*> params() {
        std::vector<nn::LayerParams*> out;
        for (auto* net : networks())
            for (auto* p : net->params()) out.push_back(p);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* net : networks()) n += net->parameter_count();
        return n;
    }

    void zero_grad() {
        for (auto* net : networks()) net->zero_grad();
    }

    // (mean, logvar), each [batch, m].
    std::pair<Tensor, Tensor> encode(const Tensor& p) const {
        require_finite(p, "encoder");
        const Tensor h = encoder_.infer(p);
        return {mean_head_.infer(h), logvar_head_.infer(h)};
    }

    Tensor encode_mean(const Tensor& p) const { return mean_head_.infer(encoder_.infer(p)); }

    Tensor decode(const Tensor& z) const {
        require_finite(z, "decoder");
        return decoder_.infer(z);
    }

    // KPI predictions in z-score space.
    Tensor predict_kpis_normalized(const Tensor& z) const {
        require_finite(z, "kpi predictor");
        return kpi_net_.infer(z);
    }

    // KPI predictions in physical units.
    Tensor predict_kpis(const Tensor& z) const {
        Tensor y = predict_kpis_normalized(z);
        denormalize_kpis(y);
        return y;
    }

    void normalize_kpis(Tensor& y) const {
        const std::size_t k = config_.kpi_count;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = (y[i] - kpi_stats_.mean[i % k]) / kpi_stats_.std[i % k];
    }

    void denormalize_kpis(Tensor& y) const {
        const std::size_t k = config_.kpi_count;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * kpi_stats_.std[i % k] + kpi_stats_.mean[i % k];
    }

    // Evaluates the composite loss for (p, y_norm) with the supplied noise and
    // stages the gradients of `total` in every parameter set.
    LossBreakdown loss(const Tensor& p, const Tensor& y_norm, const Tensor& eps) {
        const std::size_t batch = p.dim(0), m = config_.latent_dim;
        if (batch == 0) throw ValidationError("empty batch");
        if (y_norm.rank() != 2 || y_norm.dim(0) != batch || y_norm.dim(1) != config_.kpi_count)
            throw DimensionError("KPI batch shape " + nn::shape_string(y_norm.shape()));
        if (eps.rank() != 2 || eps.dim(0) != batch || eps.dim(1) != m)
            throw DimensionError("noise batch shape " + nn::shape_string(eps.shape()));
        require_finite(y_norm, "loss targets");

        const Tensor h = encoder_.forward(p);
        const Tensor mu = mean_head_.forward(h);
        const Tensor lv = logvar_head_.forward(h);
        Tensor sigma(mu.shape());
        Tensor z(mu.shape());
        for (std::size_t i = 0; i < z.size(); ++i) {
            sigma[i] = std::exp(0.5 * lv[i]);
            z[i] = mu[i] + sigma[i] * eps[i];
        }
        const Tensor p_hat = decoder_.forward(z);
        const Tensor y_hat = kpi_net_.forward(z);

        const double inv_b = 1.0 / static_cast<double>(batch);
        const double beta = config_.kl_weight;
        LossBreakdown out;
        Tensor d_phat(p_hat.shape());
        for (std::size_t i = 0; i < p_hat.size(); ++i) {
            const double e = p_hat[i] - p[i];
            out.recon += e * e;
            d_phat[i] = 2.0 * e * inv_b;
        }
        Tensor d_yhat(y_hat.shape());
        for (std::size_t i = 0; i < y_hat.size(); ++i) {
            const double e = y_hat[i] - y_norm[i];
            out.kpi += e * e;
            d_yhat[i] = 2.0 * e * inv_b;
        }
        for (std::size_t i = 0; i < mu.size(); ++i)
            out.kl += -0.5 * (1.0 + lv[i] - mu[i] * mu[i] - sigma[i] * sigma[i]);
        out.recon *= inv_b;
        out.kpi *= inv_b;
        out.kl *= inv_b;
        out.total = out.recon + out.kpi + beta * out.kl;
        if (!std::isfinite(out.total)) {
            std::ostringstream os;
            os << "non-finite loss (recon=" << out.recon << ", kpi=" << out.kpi << ", kl=" << out.kl << ")";
            throw NumericError(os.str());
        }

        Tensor dz = decoder_.backward(d_phat);
        const Tensor dz_kpi = kpi_net_.backward(d_yhat);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_kpi[i];
        Tensor dmu(mu.shape());
        Tensor dlv(lv.shape());
        for (std::size_t i = 0; i < dz.size(); ++i) {
            dmu[i] = dz[i] + beta * mu[i] * inv_b;
            dlv[i] = dz[i] * eps[i] * 0.5 * sigma[i] - beta * 0.5 * (1.0 - sigma[i] * sigma[i]) * inv_b;
        }
        Tensor dh = mean_head_.backward(dmu);
        const Tensor dh_lv = logvar_head_.backward(dlv);
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_lv[i];
        encoder_.backward(dh);
        return out;
    }

    // Loss value only, no gradient staging; used by validation and by
    // finite-difference checks.
    LossBreakdown evaluate_loss(const Tensor& p, const Tensor& y_norm, const Tensor& eps) const {
        const std::size_t batch = p.dim(0);
        const auto [mu, lv] = encode(p);
        Tensor z(mu.shape());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * lv[i]) * eps[i];
        const Tensor p_hat = decode(z);
        const Tensor y_hat = predict_kpis_normalized(z);
        LossBreakdown out;
        for (std::size_t i = 0; i < p_hat.size(); ++i) out.recon += (p_hat[i] - p[i]) * (p_hat[i] - p[i]);
        for (std::size_t i = 0; i < y_hat.size(); ++i) out.kpi += (y_hat[i] - y_norm[i]) * (y_hat[i] - y_norm[i]);
        for (std::size_t i = 0; i < mu.size(); ++i) out.kl += -0.5 * (1.0 + lv[i] - mu[i] * mu[i] - std::exp(lv[i]));
        const double inv_b = 1.0 / static_cast<double>(batch);
        out.recon *= inv_b;
        out.kpi *= inv_b;
        out.kl *= inv_b;
        out.total = out.recon + out.kpi + config_.kl_weight * out.kl;
        return out;
    }

private:
    VaeConfig config_;
    std::string registry_hash_;
    KpiStats kpi_stats_;
    nn::Network encoder_;
    nn::Network mean_head_;
    nn::Network logvar_head_;
    nn::Network decoder_;
    nn::Network kpi_net_;
};

// ---------------------------------------------------------------------------
// Free-standing pieces of the latent model.
// ---------------------------------------------------------------------------

inline LatentSample reparameterize(const Tensor& mean, const Tensor& logvar, const Tensor& eps) {
    if (mean.shape() != logvar.shape() || mean.shape() != eps.shape())
        throw DimensionError("reparameterize: shapes of mean, logvar and noise differ");
    LatentSample s{mean, logvar, eps, Tensor(mean.shape())};
    for (std::size_t i = 0; i < mean.size(); ++i) s.z[i] = mean[i] + std::exp(0.5 * logvar[i]) * eps[i];
    return s;
}

inline Tensor standard_normal(const nn::Shape& shape, std::mt19937_64& rng) {
    Tensor t(shape);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : t.storage()) v = normal(rng);
    return t;
}

inline LatentSample reparameterize(const Tensor& mean, const Tensor& logvar, std::mt19937_64& rng) {
    return reparameterize(mean, logvar, standard_normal(mean.shape(), rng));
}

// KL(N(mean, exp(logvar)) || N(0, I)) per row of a [batch, m] pair.
inline std::vector<double> kl_divergence(const Tensor& mean, const Tensor& logvar) {
    if (mean.shape() != logvar.shape() || mean.rank() != 2)
        throw DimensionError("kl_divergence expects equal [batch, m] shapes");
    const std::size_t batch = mean.dim(0), m = mean.dim(1);
    std::vector<double> out(batch, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i) {
            const double mu = mean.at(b, i), lv = logvar.at(b, i);
            out[b] += -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
        }
    return out;
}

inline double kl_divergence_mean(const Tensor& mean, const Tensor& logvar) {
    const auto per = kl_divergence(mean, logvar);
    double s = 0.0;
    for (double v : per) s += v;
    return s / static_cast<double>(per.size());
}

// ---------------------------------------------------------------------------
// Batch assembly.
// ---------------------------------------------------------------------------

inline Tensor embed_batch(const TopologyRegistry& reg, std::span<const DesignSample> samples) {
    const std::size_t n = reg.dimension();
    Tensor t({samples.size(), n});
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const auto v = reg.embed(samples[b]);
        std::copy(v.begin(), v.end(), t.data() + b * n);
    }
    return t;
}

inline Tensor kpi_batch(std::span<const DesignSample> samples) {
    Tensor t({samples.size(), KpiVector::size});
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (!samples[b].kpis) throw ValidationError("sample without KPIs");
        for (std::size_t k = 0; k < KpiVector::size; ++k) t.at(b, k) = (*samples[b].kpis)[k];
    }
    return t;
}

inline Tensor row_batch(std::span<const std::vector<double>> rows) {
    if (rows.empty()) throw DimensionError("empty batch");
    const std::size_t w = rows.front().size();
    Tensor t({rows.size(), w});
    for (std::size_t b = 0; b < rows.size(); ++b) {
        if (rows[b].size() != w) throw DimensionError("ragged batch");
        std::copy(rows[b].begin(), rows[b].end(), t.data() + b * w);
    }
    return t;
}

inline std::vector<double> row(const Tensor& t, std::size_t r) {
    const std::size_t w = t.dim(1);
    return {t.data() + r * w, t.data() + (r + 1) * w};
}

} // namespace emvae
