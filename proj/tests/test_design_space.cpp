#include <gtest/gtest.h>

#include "emvae/design_space.hpp"
#include "support.hpp"

using namespace emvae;

namespace {

TopologySpec five_param_topology(int id = 1) {
    TopologySpec t{id, "T5", {}};
    for (int i = 0; i < 5; ++i) t.params.push_back({"p" + std::to_string(i), 0.0, 10.0, "mm"});
    return t;
}

} // namespace

TEST(Registry, DefaultDimensionIs32) {
    const auto reg = default_registry();
    EXPECT_EQ(reg.topology(1).size(), 13u);
    EXPECT_EQ(reg.topology(2).size(), 18u);
    EXPECT_EQ(reg.dimension(), 32u);
    EXPECT_EQ(reg.block_offset(1), 1u);
    EXPECT_EQ(reg.block_offset(2), 14u);
}

TEST(Registry, SingleTopologyDimension) {
    TopologyRegistry reg;
    reg.register_topology(five_param_topology());
    EXPECT_EQ(reg.dimension(), 6u);
}

TEST(Registry, RejectsDuplicatesAndEmptySpecs) {
    TopologyRegistry reg;
    reg.register_topology(five_param_topology(1));
    EXPECT_THROW(reg.register_topology(five_param_topology(1)), ConfigError);
    EXPECT_THROW(reg.register_topology(TopologySpec{3, "E", {}}), ConfigError);
    auto bad = five_param_topology(4);
    bad.params[2].max = bad.params[2].min;
    EXPECT_THROW(reg.register_topology(bad), ConfigError);
}

TEST(Registry, JsonRoundTripKeepsHash) {
    const auto reg = default_registry();
    const auto back = TopologyRegistry::from_json(reg.to_json());
    EXPECT_EQ(back.hash(), reg.hash());
    EXPECT_EQ(back.integrated_names(), reg.integrated_names());
    TopologyRegistry other;
    other.register_topology(single_v_topology());
    EXPECT_NE(other.hash(), reg.hash());
}

TEST(Normalize, AirGapBounds) {
    const auto sv = single_v_topology();
    const auto& gap = sv.params[0];
    EXPECT_EQ(gap.name, "air_gap");
    EXPECT_EQ(normalize(0.8, gap), 0.0);
    EXPECT_DOUBLE_EQ(normalize(1.3, gap), 0.5);
    for (double x : {0.8, 0.93, 1.3, 1.77, 1.8}) EXPECT_NEAR(denormalize(normalize(x, gap), gap), x, 1e-12);
}

TEST(Embed, SingleVLayout) {
    const auto reg = default_registry();
    const auto s = test::midpoint_sample(reg, 1);
    const auto v = reg.embed(s);
    ASSERT_EQ(v.size(), 32u);
    // The slot holds k / max_id; in id units it reads 1.
    EXPECT_EQ(v[0] * reg.max_id(), 1.0);
    for (std::size_t i = 1; i <= 13; ++i) EXPECT_DOUBLE_EQ(v[i], 0.5);
    for (std::size_t i = 14; i < 32; ++i) EXPECT_EQ(v[i], 0.0);
}

TEST(Embed, DoubleVLayout) {
    const auto reg = default_registry();
    const auto v = reg.embed(test::midpoint_sample(reg, 2));
    EXPECT_EQ(v[0] * reg.max_id(), 2.0);
    EXPECT_EQ(v[0], 1.0);
    for (std::size_t i = 1; i <= 13; ++i) EXPECT_EQ(v[i], 0.0);
    for (std::size_t i = 14; i < 32; ++i) EXPECT_DOUBLE_EQ(v[i], 0.5);
}

TEST(Embed, OutOfBoundsNamesParameter) {
    const auto reg = default_registry();
    auto s = test::midpoint_sample(reg, 1);
    s.values[5] = 181.0;
    try {
        reg.embed(s);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("rotor_outer_diameter"), std::string::npos);
    }
    s.values.pop_back();
    EXPECT_THROW(reg.embed(s), ValidationError);
}

TEST(Extract, RoundTripOnRandomSamples) {
    const auto reg = default_registry();
    for (int id : reg.ids())
        for (const auto& s : sample_designs(reg, id, 200, 5)) {
            const auto r = reg.extract(reg.embed(s), true);
            EXPECT_EQ(r.sample.topology_id, id);
            EXPECT_TRUE(r.clamped.empty());
            EXPECT_EQ(r.indicator_distance, 0.0);
            ASSERT_EQ(r.sample.values.size(), s.values.size());
            for (std::size_t i = 0; i < s.values.size(); ++i) EXPECT_NEAR(r.sample.values[i], s.values[i], 1e-12);
        }
}

TEST(Extract, NearestIdAndAmbiguity) {
    const auto reg = default_registry();
    auto v = reg.embed(test::midpoint_sample(reg, 1));
    // 1.12 in id units leans toward SV.
    v[0] = 1.12 / reg.max_id();
    const auto r = reg.extract(v, true);
    EXPECT_EQ(r.sample.topology_id, 1);
    EXPECT_TRUE(r.clamped.empty());
    EXPECT_NEAR(r.indicator_distance, 0.12, 1e-12);

    v[0] = 1.5 / reg.max_id();
    EXPECT_THROW(reg.extract(v, false), AmbiguousTopologyError);
    v[0] = 2.6 / reg.max_id();
    EXPECT_THROW(reg.extract(v, false), AmbiguousTopologyError);
    v[0] = 0.4 / reg.max_id();
    EXPECT_THROW(reg.extract(v, false), AmbiguousTopologyError);
    v[0] = std::nan("");
    EXPECT_THROW(reg.extract(v, false), AmbiguousTopologyError);
    v[0] = 2.49 / reg.max_id();
    EXPECT_EQ(reg.extract(v, false).sample.topology_id, 2);
    EXPECT_THROW(reg.extract(std::vector<double>(31, 0.0), false), DimensionError);
}

TEST(Extract, ReadsOnlyChosenBlock) {
    const auto reg = default_registry();
    auto v = reg.embed(test::midpoint_sample(reg, 2));
    for (std::size_t i = 1; i <= 13; ++i) v[i] = 0.9; // garbage in the SV block
    const auto r = reg.extract(v, false);
    EXPECT_EQ(r.sample.topology_id, 2);
    const auto& dv = reg.topology(2);
    for (std::size_t i = 0; i < dv.size(); ++i) EXPECT_NEAR(r.sample.values[i], 0.5 * (dv.params[i].min + dv.params[i].max), 1e-12);
}

TEST(Extract, SnapClampsAndReports) {
    const auto reg = default_registry();
    auto v = reg.embed(test::midpoint_sample(reg, 1));
    v[1] = 1.1;  // air gap 1.9 mm
    v[6] = -0.1; // rotor diameter 147 mm
    const auto raw = reg.extract(v, false);
    EXPECT_NEAR(raw.sample.values[0], 1.9, 1e-12);
    EXPECT_TRUE(raw.clamped.empty());
    const auto snapped = reg.extract(v, true);
    ASSERT_EQ(snapped.clamped.size(), 2u);
    EXPECT_EQ(snapped.sample.values[0], 1.8);
    EXPECT_EQ(snapped.sample.values[5], 150.0);
    EXPECT_NEAR(snapped.clamped[0].magnitude, 0.1, 1e-12);
    EXPECT_NEAR(snapped.clamped[1].magnitude, 3.0, 1e-12);
}

TEST(ValidateBounds, Examples) {
    const auto reg = default_registry();
    auto s = test::midpoint_sample(reg, 1);
    EXPECT_TRUE(reg.validate_bounds(s).empty());
    s.values[5] = 181.0;
    const auto v = reg.validate_bounds(s);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_EQ(v[0].parameter, "rotor_outer_diameter");
    EXPECT_DOUBLE_EQ(v[0].magnitude, 1.0);
    EXPECT_EQ(v[0].limit, 180.0);
}

TEST(Property, EmbedHasExactlyOneActiveBlock) {
    const auto reg = default_registry();
    for (int id : reg.ids())
        for (const auto& s : sample_designs(reg, id, 100, 9)) {
            const auto v = reg.embed(s);
            EXPECT_EQ(reg.resolve_topology(v[0]), id);
            for (int other : reg.ids()) {
                if (other == id) continue;
                const auto off = reg.block_offset(other);
                for (std::size_t i = 0; i < reg.topology(other).size(); ++i) EXPECT_EQ(v[off + i], 0.0);
            }
            for (double x : v) {
                EXPECT_GE(x, 0.0);
                EXPECT_LE(x, 1.0);
            }
        }
}
