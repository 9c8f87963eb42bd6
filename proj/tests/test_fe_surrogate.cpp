#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "emvae/fe_surrogate.hpp"
#include "support.hpp"

using namespace emvae;

namespace {

// Design whose normalized parameters all equal u.
DesignSample uniform_design(const TopologyRegistry& reg, int id, double u) {
    DesignSample s;
    s.topology_id = id;
    for (const auto& p : reg.topology(id).params) s.values.push_back(denormalize(u, p));
    return s;
}

// Direct transcription of the reference formulas.
std::array<double, 4> formulas(double a, double h, double al, double t, double l, double d, double g, double dv) {
    const double pi = std::numbers::pi;
    const double y1 = 150 + 300 * h * d * l + 50 * std::sin(pi * al) - 60 * a + 20 * (g - 0.5) + 80 * dv * h;
    const double y2 = 0.35 * y1 * (0.8 + 0.4 * t);
    const double r = std::abs(std::sin(2 * pi * al));
    const double y3 = 5 + 40 * r * (1 - a) + 10 * (1 - t) + 60 * dv * h * r;
    const double y4 = 50 + 120 * h * l * d + 30 * t + 40 * dv * h;
    return {y1, y2, y3, y4};
}

} // namespace

TEST(Oracle, AllFeaturesZero) {
    const auto reg = default_registry();
    const auto y = kpi_oracle(reg, uniform_design(reg, 1, 0.0));
    EXPECT_NEAR(y[0], 140.0, 1e-12);
    EXPECT_NEAR(y[1], 39.2, 1e-12);
    EXPECT_NEAR(y[2], 15.0, 1e-12);
    EXPECT_NEAR(y[3], 50.0, 1e-12);
}

TEST(Oracle, AllFeaturesHalf) {
    const auto reg = default_registry();
    const auto y = kpi_oracle(reg, uniform_design(reg, 1, 0.5));
    EXPECT_NEAR(y[0], 207.5, 1e-12);
    EXPECT_NEAR(y[1], 72.625, 1e-12);
    EXPECT_NEAR(y[2], 10.0, 1e-12);
    EXPECT_NEAR(y[3], 80.0, 1e-12);
}

TEST(Oracle, MatchesFormulaTranscription) {
    const auto reg = default_registry();
    for (int id : reg.ids()) {
        const auto& t = reg.topology(id);
        for (const auto& s : sample_designs(reg, id, 300, 3)) {
            auto n = [&](const char* name) { return normalize(s.values[*t.index_of(name)], t.params[*t.index_of(name)]); };
            double g = 0.0;
            int aux = 0;
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t.params[i].name.starts_with("aux_")) {
                    g += normalize(s.values[i], t.params[i]);
                    ++aux;
                }
            g /= aux;
            const bool dv = id == 2;
            const double h = dv ? 0.5 * (n("magnet_height_1") + n("magnet_height_2")) : n("magnet_height");
            const double al = dv ? 0.5 * (n("magnet_angle_1") + n("magnet_angle_2")) : n("magnet_angle");
            const auto want = formulas(n("air_gap"), h, al, n("stator_tooth_height"), n("iron_length"),
                                       n("rotor_outer_diameter"), g, dv ? 1.0 : 0.0);
            const auto y = kpi_oracle(reg, s);
            for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(y[k], want[k], 1e-10 * std::abs(want[k]));
            EXPECT_TRUE(y.valid());
        }
    }
}

TEST(Oracle, DoubleVAddsEightyTimesMagnetHeight) {
    for (double h : {0.0, 0.3, 0.5, 0.9}) {
        OracleFeatures f;
        f.air_gap = 0.4;
        f.magnet_height = h;
        f.magnet_angle = 0.3;
        f.tooth_height = 0.6;
        f.iron_length = 0.7;
        f.rotor_diameter = 0.2;
        const auto sv = kpi_from_features(f);
        f.double_v = 1.0;
        const auto dv = kpi_from_features(f);
        EXPECT_NEAR(dv[0] - sv[0], 80.0 * h, 1e-12);
    }
}

TEST(Oracle, RejectsOutOfBounds) {
    const auto reg = default_registry();
    auto s = test::midpoint_sample(reg, 1);
    s.values[0] = 1.9;
    EXPECT_THROW(kpi_oracle(reg, s), ValidationError);
}

TEST(Oracle, NoiseIsRelativeAndKeyed) {
    const auto reg = default_registry();
    const auto s = test::midpoint_sample(reg, 2);
    const auto clean = kpi_oracle(reg, s);
    auto cfg = OracleConfig::realism();
    EXPECT_EQ(kpi_oracle(reg, s, OracleConfig{}, 3).values, clean.values);
    const auto a = kpi_oracle(reg, s, cfg, 3);
    EXPECT_EQ(a.values, kpi_oracle(reg, s, cfg, 3).values);
    EXPECT_NE(a.values, kpi_oracle(reg, s, cfg, 4).values);
    // 1 % relative noise over many draws: sample std of y/y_clean - 1 near 0.01.
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double r = kpi_oracle(reg, s, cfg, i)[0] / clean[0] - 1.0;
        sum += r;
        sq += r * r;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 0.0, 5e-4);
    EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 0.01, 5e-4);
}

TEST(Sampling, CountsDeterminismAndCoverage) {
    const auto reg = default_registry();
    EXPECT_TRUE(sample_designs(reg, 1, 0, 1).empty());
    const auto a = sample_designs(reg, 2, 50, 11);
    const auto b = sample_designs(reg, 2, 50, 11);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].values, b[i].values);
    // Prefix stability: sample i depends only on (seed, id, i).
    const auto c = sample_designs(reg, 2, 20, 11);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(a[i].values, c[i].values);

    const auto big = sample_designs(reg, 1, 10000, 12);
    const auto& t = reg.topology(1);
    for (std::size_t p = 0; p < t.size(); ++p) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& s : big) {
            lo = std::min(lo, s.values[p]);
            hi = std::max(hi, s.values[p]);
        }
        const double span = t.params[p].max - t.params[p].min;
        EXPECT_GE(lo, t.params[p].min);
        EXPECT_LE(hi, t.params[p].max);
        EXPECT_LT(lo - t.params[p].min, 0.01 * span);
        EXPECT_LT(t.params[p].max - hi, 0.01 * span);
    }
}

TEST(Dataset, SplitSizes) {
    const auto reg = default_registry();
    const auto ds = build_dataset(reg, OracleConfig{});
    EXPECT_EQ(ds.size(), 8000u);
    EXPECT_EQ(ds.count(Split::train), 7200u);
    EXPECT_EQ(ds.count(Split::val), 400u);
    EXPECT_EQ(ds.count(Split::test), 400u);
    const auto sum = summarize(ds);
    EXPECT_EQ(sum.per_topology.at(1), 4000u);
    EXPECT_EQ(sum.per_topology.at(2), 4000u);
    for (const auto& s : ds.samples) ASSERT_TRUE(s.kpis && s.kpis->valid());
}

TEST(Dataset, FilesAreBitwiseReproducible) {
    const auto reg = default_registry();
    test::TempDir dir;
    const auto ds1 = test::small_dataset(reg, 100);
    const auto ds2 = test::small_dataset(reg, 100);
    save_dataset(reg, ds1, dir.file("a.csv"));
    save_dataset(reg, ds2, dir.file("b.csv"));
    EXPECT_EQ(read_file(dir.file("a.csv")), read_file(dir.file("b.csv")));
    EXPECT_EQ(read_file(dir.file("a.csv.json")), read_file(dir.file("b.csv.json")));
    EXPECT_NE(dataset_to_csv(reg, ds1), dataset_to_csv(reg, test::small_dataset(reg, 100, 8)));
}

TEST(Dataset, CsvRoundTripIsExact) {
    const auto reg = default_registry();
    test::TempDir dir;
    auto oc = OracleConfig::realism(3);
    oc.counts = {{1, 40}, {2, 60}};
    const auto ds = build_dataset(reg, oc, {0.8, 0.1, 0.1});
    save_dataset(reg, ds, dir.file("d.csv"));
    const auto back = load_dataset(reg, dir.file("d.csv"));
    ASSERT_EQ(back.size(), ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.samples[i].topology_id, ds.samples[i].topology_id);
        EXPECT_EQ(back.samples[i].values, ds.samples[i].values);
        EXPECT_EQ(back.samples[i].kpis->values, ds.samples[i].kpis->values);
        EXPECT_EQ(back.splits[i], ds.splits[i]);
    }
    EXPECT_EQ(back.provenance.noise_std, oc.noise_std);
    EXPECT_EQ(back.fractions.train, 0.8);
    const auto header = read_file(dir.file("d.csv")).substr(0, 40);
    EXPECT_EQ(header.rfind("topology,k,SV.air_gap", 0), 0u);
}

TEST(Dataset, ForeignRegistryAndCorruptFilesRejected) {
    const auto reg = default_registry();
    test::TempDir dir;
    save_dataset(reg, test::small_dataset(reg, 10), dir.file("d.csv"));

    // Same parameter names, different bounds: only the sidecar hash differs.
    TopologyRegistry other;
    auto sv = single_v_topology();
    sv.params[0].max = 2.0;
    other.register_topology(sv);
    other.register_topology(double_v_topology());
    EXPECT_THROW(load_dataset(other, dir.file("d.csv")), RegistryMismatchError);

    TopologyRegistry sv_only;
    sv_only.register_topology(single_v_topology());
    EXPECT_THROW(load_dataset(sv_only, dir.file("d.csv")), RegistryMismatchError);

    auto text = read_file(dir.file("d.csv"));
    const auto pos = text.find('\n') + 1;
    const auto comma = text.find(',', text.find(',', pos) + 1);
    write_text_file(dir.file("bad.csv"), text.substr(0, comma + 1) + "abc" + text.substr(text.find(',', comma + 1)));
    write_text_file(dir.file("bad.csv.json"), read_file(dir.file("d.csv.json")));
    EXPECT_THROW(load_dataset(reg, dir.file("bad.csv")), FormatError);

    write_text_file(dir.file("short.csv"), text.substr(0, text.size() - 8) + "\n");
    write_text_file(dir.file("short.csv.json"), read_file(dir.file("d.csv.json")));
    EXPECT_THROW(load_dataset(reg, dir.file("short.csv")), Error);

    write_text_file(dir.file("nojson.csv"), text);
    EXPECT_THROW(load_dataset(reg, dir.file("nojson.csv")), Error);
}

TEST(Property, PowerCostTradeOff) {
    const auto reg = default_registry();
    std::vector<KpiVector> ys;
    for (int id : reg.ids())
        for (const auto& s : sample_designs(reg, id, 50000, 21)) ys.push_back(kpi_oracle(reg, s));
    std::size_t best_power = 0, best_cost = 0;
    for (std::size_t i = 1; i < ys.size(); ++i) {
        if (ys[i][1] > ys[best_power][1]) best_power = i;
        if (ys[i][3] < ys[best_cost][3]) best_cost = i;
    }
    // Neither extreme dominates the set under (max y2, min y4).
    auto dominates_all = [&](std::size_t c) {
        for (std::size_t i = 0; i < ys.size(); ++i)
            if (i != c && !(ys[c][1] >= ys[i][1] && ys[c][3] <= ys[i][3])) return false;
        return true;
    };
    EXPECT_FALSE(dominates_all(best_power));
    EXPECT_FALSE(dominates_all(best_cost));
    EXPECT_GT(ys[best_power][3], ys[best_cost][3]);
}

TEST(Property, DoubleVCanExceedEverySingleV) {
    const auto reg = default_registry();
    double sv_max = 0.0;
    for (const auto& s : sample_designs(reg, 1, 20000, 4)) sv_max = std::max(sv_max, kpi_oracle(reg, s)[0]);
    const auto dv = uniform_design(reg, 2, 1.0);
    auto best = dv;
    // Air gap at its lower bound and angles at mid-range lift y1.
    const auto& t = reg.topology(2);
    best.values[*t.index_of("air_gap")] = t.params[*t.index_of("air_gap")].min;
    best.values[*t.index_of("magnet_angle_1")] = denormalize(0.5, t.params[*t.index_of("magnet_angle_1")]);
    best.values[*t.index_of("magnet_angle_2")] = denormalize(0.5, t.params[*t.index_of("magnet_angle_2")]);
    EXPECT_GT(kpi_oracle(reg, best)[0], sv_max);
}
