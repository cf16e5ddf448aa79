#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "vncseg/metrics.hpp"

using namespace vncseg;

namespace {

Mask mask_of(std::array<int, 3> dims, std::array<double, 3> spacing,
             std::vector<std::array<int, 3>> fg) {
  Mask m;
  m.dims = dims;
  m.spacing_mm = spacing;
  m.data.assign(m.voxel_count(), 0);
  for (const auto& p : fg) m.data[m.index(p[0], p[1], p[2])] = 1;
  return m;
}

}  // namespace

TEST_CASE("Dice agrees with direct set arithmetic on random masks") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    double p = 0.05 + 0.4 * static_cast<double>(seed % 10) / 10.0;
    Mask a = testutil::make_random_mask({12, 11, 10}, {1, 1, 1}, 1000 + seed, p);
    Mask b = testutil::make_random_mask({12, 11, 10}, {1, 1, 1}, 2000 + seed, p);
    std::size_t na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      na += a.data[i] != 0;
      nb += b.data[i] != 0;
      inter += (a.data[i] != 0 && b.data[i] != 0);
    }
    double want = (na + nb) == 0
                      ? 1.0
                      : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
    CHECK(dice_coefficient(a, b) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("Dice edge cases: empty masks, identity, disjoint sets") {
  Mask e = mask_of({4, 4, 4}, {1, 1, 1}, {});
  Mask one = mask_of({4, 4, 4}, {1, 1, 1}, {{1, 1, 1}});
  CHECK(dice_coefficient(e, e) == 1.0);
  CHECK(dice_coefficient(e, one) == 0.0);
  CHECK(dice_coefficient(one, e) == 0.0);
  CHECK(dice_coefficient(one, one) == 1.0);

  Mask other = mask_of({4, 4, 4}, {1, 1, 1}, {{2, 2, 2}});
  CHECK(dice_coefficient(one, other) == 0.0);
}

TEST_CASE("surface voxels are exactly those with a background face neighbour") {
  // a solid 3x3x3 block: every voxel but the center is surface
  std::vector<std::array<int, 3>> fg;
  for (int k = 1; k <= 3; ++k)
    for (int j = 1; j <= 3; ++j)
      for (int i = 1; i <= 3; ++i) fg.push_back({i, j, k});
  Mask m = mask_of({5, 5, 5}, {1, 1, 1}, fg);
  auto s = surface_voxels(m);
  CHECK(s.size() == 26);
  for (const auto& p : s) CHECK_FALSE((p[0] == 2 && p[1] == 2 && p[2] == 2));

  // voxels on the volume boundary count as surface
  Mask corner = mask_of({3, 3, 3}, {1, 1, 1}, {{0, 0, 0}});
  CHECK(surface_voxels(corner).size() == 1);

  // a full volume is all surface
  Mask full = mask_of({2, 2, 2}, {1, 1, 1},
                      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0},
                       {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}});
  CHECK(surface_voxels(full).size() == 8);
}

TEST_CASE("surface distance matches the brute-force oracle on random masks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Mask a = testutil::make_random_mask({16, 14, 12}, {1, 1, 1}, 3000 + seed, 0.2);
    Mask b = testutil::make_random_mask({16, 14, 12}, {1, 1, 1}, 4000 + seed, 0.2);
    auto got = assd_mm(a, b);
    auto want = testutil::brute_assd(a, b);
    REQUIRE(got.has_value() == want.has_value());
    if (got) CHECK(*got == doctest::Approx(*want).epsilon(1e-9));
  }
}

TEST_CASE("surface distance respects anisotropic voxel spacing") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Mask a = testutil::make_random_mask({10, 12, 8}, {0.6, 1.0, 2.5}, 5000 + seed, 0.25);
    Mask b = testutil::make_random_mask({10, 12, 8}, {0.6, 1.0, 2.5}, 6000 + seed, 0.25);
    auto got = assd_mm(a, b);
    auto want = testutil::brute_assd(a, b);
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(*want).epsilon(1e-9));
  }

  // two single-voxel surfaces two slices apart along z
  Mask p = mask_of({5, 5, 5}, {1.0, 1.0, 3.0}, {{2, 2, 1}});
  Mask q = mask_of({5, 5, 5}, {1.0, 1.0, 3.0}, {{2, 2, 3}});
  auto d = assd_mm(p, q);
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("surface distance is undefined when a mask is empty") {
  Mask e = mask_of({4, 4, 4}, {1, 1, 1}, {});
  Mask one = mask_of({4, 4, 4}, {1, 1, 1}, {{1, 2, 3}});
  CHECK_FALSE(assd_mm(e, one).has_value());
  CHECK_FALSE(assd_mm(one, e).has_value());
  CHECK_FALSE(assd_mm(e, e).has_value());
  auto self = assd_mm(one, one);
  REQUIRE(self.has_value());
  CHECK(*self == 0.0);
}

TEST_CASE("structure volumes convert voxel counts to millilitres") {
  LabelVolume l = make_labels({10, 10, 10}, {2.0, 1.0, 1.0}, {0, 0, 0});
  // 2 mm^3 per voxel
  for (int i = 0; i < 5; ++i) l.data[i] = 1;    // 5 voxels of class 1
  for (int i = 5; i < 30; ++i) l.data[i] = 7;   // 25 voxels of class 7
  auto v = structure_volumes_ml(l);
  CHECK(v[1] == doctest::Approx(5 * 2.0 / 1000.0).epsilon(1e-12));
  CHECK(v[7] == doctest::Approx(25 * 2.0 / 1000.0).epsilon(1e-12));
  CHECK(v[2] == 0.0);
  CHECK(v[0] == doctest::Approx((1000 - 30) * 2.0 / 1000.0).epsilon(1e-12));
}

TEST_CASE("case evaluation scores every class of a labelled pair") {
  LabelVolume ref = testutil::make_random_labels({12, 12, 12}, 71);
  LabelVolume pred = ref;
  // perturb a corner so scores drop below 1
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i) pred.at(i, j, k) = (ref.at(i, j, k) + 1) % 8;

  CaseMetrics m = evaluate_case(pred, ref);
  for (int c = 0; c < kNumClasses; ++c) {
    Mask a, b;
    a.dims = b.dims = ref.dims;
    a.spacing_mm = b.spacing_mm = ref.spacing_mm;
    a.data.resize(ref.data.size());
    b.data.resize(ref.data.size());
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
      a.data[i] = pred.data[i] == c;
      b.data[i] = ref.data[i] == c;
    }
    CHECK(m.dice[c] == doctest::Approx(dice_coefficient(a, b)).epsilon(1e-12));
    auto want = assd_mm(a, b);
    REQUIRE(m.assd[c].has_value() == want.has_value());
    if (want) CHECK(*m.assd[c] == doctest::Approx(*want).epsilon(1e-12));
  }

  CaseMetrics self = evaluate_case(ref, ref);
  CHECK(mean_foreground_dice(self) == doctest::Approx(1.0).epsilon(1e-12));
  double fg = 0.0;
  for (int c = 1; c < kNumClasses; ++c) fg += self.dice[c];
  CHECK(mean_foreground_dice(self) == doctest::Approx(fg / 7.0).epsilon(1e-12));
}

TEST_CASE("aggregation reports sample statistics and undefined distances") {
  CaseMetrics a, b, c;
  a.id = "a";
  b.id = "b";
  c.id = "c";
  for (int k = 0; k < kNumClasses; ++k) {
    a.dice[k] = 0.8;
    b.dice[k] = 0.9;
    c.dice[k] = 1.0;
    a.assd[k] = 1.0;
    b.assd[k] = 2.0;
    c.assd[k] = std::nullopt;
    a.pred_volume_ml[k] = 10.0;
    b.pred_volume_ml[k] = 20.0;
    c.pred_volume_ml[k] = 30.0;
  }
  Report r = aggregate_cases({a, b, c});
  CHECK(r.n_cases == 3);
  for (int k = 1; k < kNumClasses; ++k) {
    CHECK(r.dsc[k].n == 3);
    CHECK(r.dsc[k].mean == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(r.dsc[k].sd == doctest::Approx(0.1).epsilon(1e-9));  // sample SD
    CHECK(r.assd[k].n == 2);
    CHECK(r.assd[k].mean == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(r.pred_volume_ml[k].mean == doctest::Approx(20.0).epsilon(1e-12));
  }
  CHECK(r.mean_fg_dice == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(r.mean_assd_mm == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(r.assd_undefined == 7);  // case c, each foreground class

  Report empty = aggregate_cases({});
  CHECK(empty.n_cases == 0);
}

TEST_CASE("report table and JSON carry the aggregate numbers") {
  CaseMetrics a, b;
  a.id = "case0";
  b.id = "case1";
  for (int k = 0; k < kNumClasses; ++k) {
    a.dice[k] = 0.75;
    b.dice[k] = 0.85;
    a.assd[k] = 1.25;
    b.assd[k] = k == 3 ? std::optional<double>() : std::optional<double>(0.75);
  }
  Report r = aggregate_cases({a, b});
  std::string table = format_report_table(r);
  CHECK(table.find("cases: 2") != std::string::npos);
  CHECK(table.find("LV-C") != std::string::npos);
  CHECK(table.find("PA") != std::string::npos);
  CHECK(table.find("DSC") != std::string::npos);
  CHECK(table.find("ASSD(mm)") != std::string::npos);
  CHECK(table.find("0.800") != std::string::npos);   // dice mean
  CHECK(table.find("1.000") != std::string::npos);   // assd mean for class 3
  CHECK(table.find("undefined") != std::string::npos);

  std::string js = report_to_json_string(r, {a, b});
  auto j = nlohmann::json::parse(js);
  CHECK(j["n_cases"] == 2);
  CHECK(j["mean_foreground_dice"].get<double>() == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(j["assd_undefined"] == 1);
  REQUIRE(j["cases"].size() == 2);
  CHECK(j["cases"][0]["id"] == "case0");
  CHECK(j["cases"][1]["classes"].size() == kNumClasses);
  CHECK(j["cases"][1]["classes"]["LA"]["assd_mm"].is_null());
  CHECK(j["cases"][1]["classes"]["RV"]["dsc"].get<double>() ==
        doctest::Approx(0.85).epsilon(1e-9));
  CHECK(j["classes"].size() == kNumClasses);
  CHECK(j["classes"]["LV-C"]["dsc"]["n"] == 2);
  CHECK(j["classes"]["LA"]["assd_mm"]["n"] == 1);
}

TEST_CASE("mismatched grids are rejected") {
  LabelVolume a = testutil::make_random_labels({6, 6, 6}, 1);
  LabelVolume b = testutil::make_random_labels({6, 6, 7}, 2);
  CHECK_THROWS_AS(evaluate_case(a, b), std::runtime_error);
}
