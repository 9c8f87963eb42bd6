#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <thread>

#include "emvae/model_io.hpp"
#include "emvae/nn/grad_check.hpp"
#include "support.hpp"

using namespace emvae;

namespace {

Tensor uniform_tensor(const nn::Shape& s, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(s);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.storage()) v = d(rng);
    return t;
}

// log N(x; mu, exp(lv)) summed over a row.
double log_normal(std::span<const double> x, std::span<const double> mu, std::span<const double> lv) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double var = std::exp(lv[i]);
        s += -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x[i] - mu[i]) * (x[i] - mu[i]) / var);
    }
    return s;
}

} // namespace

TEST(VaeModel, DefaultParameterCount) {
    const VaeModel model{VaeConfig{}};
    // Encoder convs (1->16->32->32, k3) + dense(32*32 -> 64) + two heads (64 -> 19).
    const std::size_t enc = (1 * 16 * 3 + 16) + (16 * 32 * 3 + 32) + (32 * 32 * 3 + 32) + (32 * 32 * 64 + 64) +
                            2 * (64 * 19 + 19);
    // Decoder dense(19 -> 64 -> 32*32), convT 32->32->32->16 (length 32 -> 38), dense(16*38 -> 32).
    const std::size_t dec = (19 * 64 + 64) + (64 * 1024 + 1024) + 2 * (32 * 32 * 3 + 32) + (32 * 16 * 3 + 16) +
                            (16 * 38 * 32 + 32);
    const std::size_t mlp = (19 * 64 + 64) + (64 * 64 + 64) + (64 * 32 + 32) + (32 * 32 + 32) + (32 * 16 + 16) +
                            (16 * 4 + 4);
    EXPECT_EQ(model.parameter_count(), enc + dec + mlp);
    EXPECT_EQ(model.parameter_count(), 177066u);
}

TEST(VaeModel, ShapesAndDeterminism) {
    const auto reg = default_registry();
    const VaeModel model{VaeConfig{}};
    const auto samples = sample_designs(reg, 2, 5, 1);
    const Tensor p = embed_batch(reg, samples);
    const auto [mu, lv] = model.encode(p);
    EXPECT_EQ(mu.shape(), (nn::Shape{5, 19}));
    EXPECT_EQ(lv.shape(), (nn::Shape{5, 19}));
    const auto again = model.encode(p);
    EXPECT_EQ(again.first, mu);
    EXPECT_EQ(again.second, lv);
    EXPECT_EQ(model.encode_mean(p), mu);
    const Tensor dec = model.decode(mu);
    EXPECT_EQ(dec.shape(), (nn::Shape{5, 32}));
    EXPECT_EQ(model.decode(mu), dec);
    const Tensor y = model.predict_kpis(mu);
    EXPECT_EQ(y.shape(), (nn::Shape{5, 4}));
    EXPECT_EQ(model.predict_kpis(mu), y);
}

TEST(VaeModel, RejectsNonFiniteInputs) {
    const VaeModel model{test::tiny_vae_config(32)};
    Tensor p({1, 32}, 0.5);
    p[3] = std::nan("");
    EXPECT_THROW(model.encode(p), NumericError);
    Tensor z({1, 3});
    z[0] = INFINITY;
    EXPECT_THROW(model.decode(z), NumericError);
    EXPECT_THROW(model.predict_kpis(z), NumericError);
    EXPECT_THROW(model.decode(Tensor({1, 4})), DimensionError);
}

TEST(VaeModel, ConcurrentInferenceMatchesSerial) {
    const auto reg = default_registry();
    const VaeModel model{VaeConfig{}};
    const auto samples = sample_designs(reg, 1, 40, 3);
    const Tensor p = embed_batch(reg, samples);
    const Tensor want = model.decode(model.encode_mean(p));
    std::vector<Tensor> got(4);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < got.size(); ++t)
        threads.emplace_back([&, t] { got[t] = model.decode(model.encode_mean(p)); });
    for (auto& th : threads) th.join();
    for (const auto& g : got) EXPECT_EQ(g, want);
}

TEST(Reparameterize, Identities) {
    std::mt19937_64 rng(5);
    const Tensor mu = uniform_tensor({3, 4}, rng, -2, 2);
    const Tensor lv = uniform_tensor({3, 4}, rng, -3, 1);
    const auto zero = reparameterize(mu, lv, Tensor({3, 4}));
    EXPECT_EQ(zero.z, mu);
    const Tensor e = uniform_tensor({3, 4}, rng, -1, 1);
    const auto unit = reparameterize(mu, Tensor({3, 4}), e);
    for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_EQ(unit.z[i], mu[i] + e[i]);
    // The z invariant holds exactly per draw.
    for (int draw = 0; draw < 50; ++draw) {
        const auto s = reparameterize(mu, lv, rng);
        for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_EQ(s.z[i], s.mean[i] + std::exp(0.5 * s.logvar[i]) * s.eps[i]);
    }
    EXPECT_THROW(reparameterize(mu, Tensor({3, 5}), rng), DimensionError);
}

TEST(Reparameterize, MonteCarloMoments) {
    std::mt19937_64 rng(17);
    const double mean = 1.5, var = 0.64;
    const std::size_t n = 100000;
    const auto s = reparameterize(Tensor({n, 1}, mean), Tensor({n, 1}, std::log(var)), rng);
    double sum = 0.0, sq = 0.0;
    for (double z : s.z.values()) sum += z;
    const double m = sum / n;
    for (double z : s.z.values()) sq += (z - m) * (z - m);
    EXPECT_NEAR(m, mean, 0.02 * mean);
    EXPECT_NEAR(sq / (n - 1), var, 0.02 * var);
}

TEST(KlDivergence, ClosedFormExamples) {
    EXPECT_EQ(kl_divergence(Tensor({1, 5}), Tensor({1, 5}))[0], 0.0);
    EXPECT_DOUBLE_EQ(kl_divergence(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}}))[0], 0.5);
    // Batch mean over rows.
    EXPECT_DOUBLE_EQ(kl_divergence_mean(Tensor::matrix({{1, 0}, {0, 0}}), Tensor({2, 2})), 0.25);
}

TEST(KlDivergence, NonNegativeAndZeroOnlyAtPrior) {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 200; ++i) {
        const Tensor mu = uniform_tensor({4, 6}, rng, -3, 3);
        const Tensor lv = uniform_tensor({4, 6}, rng, -5, 3);
        for (double k : kl_divergence(mu, lv)) EXPECT_GT(k, 0.0);
    }
    Tensor mu({1, 3}), lv({1, 3});
    mu[1] = 1e-3;
    EXPECT_GT(kl_divergence(mu, lv)[0], 0.0);
    mu[1] = 0.0;
    lv[2] = -1e-3;
    EXPECT_GT(kl_divergence(mu, lv)[0], 0.0);
}

TEST(KlDivergence, MatchesMonteCarloEstimate) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor mu = uniform_tensor({1, 4}, rng, -1.5, 1.5);
        const Tensor lv = uniform_tensor({1, 4}, rng, -1.5, 1.0);
        const double exact = kl_divergence(mu, lv)[0];
        const std::size_t n = 100000;
        double acc = 0.0;
        std::vector<double> zero(4, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto s = reparameterize(mu, lv, rng);
            acc += log_normal(s.z.values(), mu.values(), lv.values()) - log_normal(s.z.values(), zero, zero);
        }
        EXPECT_NEAR(acc / n, exact, 0.02 * exact) << "trial " << trial;
    }
}

TEST(Loss, TermsAndWeighting) {
    const auto reg = default_registry();
    const auto ds = test::small_dataset(reg, 10);
    const Tensor p = embed_batch(reg, ds.samples);
    VaeConfig cfg;
    cfg.kl_weight = 1.0;
    VaeModel model(cfg);
    model.set_kpi_stats(KpiStats::fit(std::vector<KpiVector>{*ds.samples[0].kpis, *ds.samples[1].kpis, *ds.samples[2].kpis}));
    Tensor y = kpi_batch(ds.samples);
    model.normalize_kpis(y);
    std::mt19937_64 rng(2);
    const Tensor eps = standard_normal({p.dim(0), 19}, rng);
    const auto l = model.loss(p, y, eps);
    EXPECT_GT(l.total, 0.0);
    EXPECT_GE(l.recon, 0.0);
    EXPECT_GE(l.kpi, 0.0);
    EXPECT_GE(l.kl, 0.0);
    EXPECT_EQ(l.total, l.recon + l.kpi + l.kl);
    const auto e = model.evaluate_loss(p, y, eps);
    EXPECT_DOUBLE_EQ(e.total, l.total);

    cfg.kl_weight = 0.0;
    VaeModel zero(cfg);
    zero.set_kpi_stats(model.kpi_stats());
    const auto l0 = zero.evaluate_loss(p, y, eps);
    EXPECT_EQ(l0.total, l0.recon + l0.kpi);
    EXPECT_EQ(l0.recon, e.recon);
    EXPECT_EQ(l0.kl, e.kl);

    // Recon is the batch mean of per-sample squared-error sums.
    const auto [mu, lv] = model.encode(p);
    const Tensor z = reparameterize(mu, lv, eps).z;
    const Tensor ph = model.decode(z);
    double want = 0.0;
    for (std::size_t b = 0; b < p.dim(0); ++b) {
        double row = 0.0;
        for (std::size_t i = 0; i < p.dim(1); ++i) row += (ph.at(b, i) - p.at(b, i)) * (ph.at(b, i) - p.at(b, i));
        want += row;
    }
    EXPECT_NEAR(l.recon, want / p.dim(0), 1e-12 * want);
    EXPECT_NEAR(l.kl, kl_divergence_mean(mu, lv), 1e-12);
}

TEST(Loss, BadShapesRejected) {
    VaeModel model(test::tiny_vae_config(32));
    EXPECT_THROW(model.loss(Tensor({2, 32}), Tensor({2, 3}), Tensor({2, 3})), DimensionError);
    EXPECT_THROW(model.loss(Tensor({2, 32}), Tensor({2, 4}), Tensor({1, 3})), DimensionError);
}

class FullLossGradient : public ::testing::TestWithParam<int> {};

TEST_P(FullLossGradient, MatchesFiniteDifferences) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    const auto reg = default_registry();
    auto cfg = test::tiny_vae_config(reg.dimension(), 3, seed);
    cfg.kl_weight = 0.7;
    // Smooth hidden units: a central difference across a relu kink is not a
    // derivative estimate. Relu backward is checked per layer.
    cfg.hidden = nn::Activation::tanh;
    VaeModel model(cfg);
    std::mt19937_64 rng(seed);
    for (auto* prm : model.params())
        for (auto& b : prm->biases.storage()) b = std::uniform_real_distribution<double>(0.01, 0.05)(rng);
    std::vector<DesignSample> s;
    for (int id : reg.ids())
        for (auto& d : sample_designs(reg, id, 2, seed)) s.push_back(d);
    const Tensor p = embed_batch(reg, s);
    const Tensor y = uniform_tensor({s.size(), 4}, rng, -1, 1);
    const Tensor eps = standard_normal({s.size(), 3}, rng);

    model.zero_grad();
    model.loss(p, y, eps);
    auto params = model.params();
    nn::FiniteDifferenceOptions opt;
    opt.seed = seed;
    // The loss is O(10-50); a step near (eps * |L|)^(1/3) balances roundoff
    // against truncation.
    opt.step = 2e-5;
    const auto rep = nn::finite_difference_check(params, [&] { return model.evaluate_loss(p, y, eps).total; }, 1e-5, opt);
    EXPECT_TRUE(rep.passed()) << "max rel " << rep.max_rel_error << " flagged " << rep.flagged.size();
    EXPECT_EQ(rep.checked, model.parameter_count());
}

INSTANTIATE_TEST_SUITE_P(Seeds, FullLossGradient, ::testing::Range(1, 21));

TEST(Capacity, TinyDatasetAutoencoderLimit) {
    // beta = 0 and m >= n: the loss on 20 samples can be driven below 1e-3.
    const auto reg = default_registry();
    const auto ds = test::small_dataset(reg, 10);
    VaeConfig cfg;
    cfg.latent_dim = reg.dimension();
    cfg.kl_weight = 0.0;
    VaeModel model(cfg);
    std::vector<KpiVector> ys;
    for (const auto& s : ds.samples) ys.push_back(*s.kpis);
    model.set_kpi_stats(KpiStats::fit(ys));
    const Tensor p = embed_batch(reg, ds.samples);
    Tensor y = kpi_batch(ds.samples);
    model.normalize_kpis(y);
    std::mt19937_64 rng(9);
    double last = INFINITY;
    for (int step = 0; step < 3000 && last >= 1e-3; ++step) {
        last = model.loss(p, y, standard_normal({p.dim(0), cfg.latent_dim}, rng)).total;
        nn::adam_step(model.params(), nn::AdamConfig{});
    }
    EXPECT_LT(last, 1e-3);
}

TEST(ModelIo, RoundTripIsBitwise) {
    const auto reg = default_registry();
    test::TempDir dir;
    VaeModel model(VaeConfig{}, reg.hash());
    model.set_kpi_stats({{1.5, 2.5, 3.5, 4.5}, {0.1, 0.2, 0.3, 0.4}});
    std::mt19937_64 rng(4);
    for (auto* prm : model.params())
        for (auto& w : prm->weights.storage()) w += std::uniform_real_distribution<double>(-1e-3, 1e-3)(rng);
    save_model(model, dir.file("m.json"));
    const auto back = load_model(dir.file("m.json"), reg.hash());
    const Tensor p = embed_batch(reg, sample_designs(reg, 1, 8, 2));
    EXPECT_EQ(back.encode(p).first, model.encode(p).first);
    EXPECT_EQ(back.encode(p).second, model.encode(p).second);
    const Tensor z = model.encode_mean(p);
    EXPECT_EQ(back.decode(z), model.decode(z));
    EXPECT_EQ(back.predict_kpis(z), model.predict_kpis(z));
    EXPECT_EQ(back.kpi_stats().std, model.kpi_stats().std);
    EXPECT_EQ(back.config().to_json(), model.config().to_json());
    // Saving the loaded model gives the same bytes.
    save_model(back, dir.file("m2.json"));
    EXPECT_EQ(read_file(dir.file("m.json")), read_file(dir.file("m2.json")));
}

TEST(ModelIo, StructuredErrors) {
    const auto reg = default_registry();
    test::TempDir dir;
    const VaeModel model(test::tiny_vae_config(32), reg.hash());
    save_model(model, dir.file("m.json"));
    const auto text = read_file(dir.file("m.json"));

    write_text_file(dir.file("trunc.json"), text.substr(0, text.size() / 2));
    EXPECT_THROW(load_model(dir.file("trunc.json")), FormatError);

    auto j = nlohmann::json::parse(text);
    j["format_version"] = 99;
    write_text_file(dir.file("ver.json"), j.dump());
    EXPECT_THROW(load_model(dir.file("ver.json")), FormatError);

    j = nlohmann::json::parse(text);
    j["magic"] = "SOMETHING-ELSE";
    write_text_file(dir.file("magic.json"), j.dump());
    EXPECT_THROW(load_model(dir.file("magic.json")), FormatError);

    j = nlohmann::json::parse(text);
    j["networks"]["decoder"][0]["weights"].erase(0);
    write_text_file(dir.file("blob.json"), j.dump());
    EXPECT_THROW(load_model(dir.file("blob.json")), FormatError);

    TopologyRegistry sv_only;
    sv_only.register_topology(single_v_topology());
    EXPECT_THROW(load_model(dir.file("m.json"), sv_only.hash()), RegistryMismatchError);
    EXPECT_THROW(load_model(dir.file("missing.json")), FormatError);
}
