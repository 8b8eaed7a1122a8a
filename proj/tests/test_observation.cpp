#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "passflow/error.hpp"
#include "passflow/observation.hpp"
#include "passflow/scenario.hpp"
#include "support.hpp"

namespace {

using namespace passflow;
using namespace passflow::observation;
using passflow::testing::fixture;

Eigen::MatrixXd dense_h(const MeasurementBatch& b) { return Eigen::MatrixXd(b.h); }

CrowdednessReport platform(const StationId& station, int level, long t = 0) {
  return {t, PlatformLocation{station}, level, "r", std::nullopt};
}

CrowdednessReport onboard(const EdgeId& edge, Direction dir, int q, int level, long t = 0) {
  return {t, OnboardLocation{edge, dir, q}, level, "r", std::nullopt};
}

TEST(Levels, LinearMidpoints) {
  const auto m = LevelMapping::with_capacity(120);
  EXPECT_DOUBLE_EQ(level_to_measurement(1, m).mean, 10.0);
  EXPECT_DOUBLE_EQ(level_to_measurement(3, m).mean, 50.0);
  EXPECT_DOUBLE_EQ(level_to_measurement(6, m).mean, 110.0);
  EXPECT_DOUBLE_EQ(level_to_measurement(4, m).variance, 100.0);
}

TEST(Levels, OutOfRangeIsRejected) {
  const auto m = LevelMapping::with_capacity(120);
  for (int level : {0, 7, -1}) {
    try {
      level_to_measurement(level, m);
      FAIL() << level;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::level_out_of_range);
    }
  }
}

TEST(Levels, LogarithmicScaleAnchors) {
  const auto m = LevelMapping::with_capacity(120, LevelScale::logarithmic);
  EXPECT_NEAR(m.mean(1), 5.0, 1e-9);
  EXPECT_NEAR(m.mean(6), 120.0, 1e-9);
}

TEST(Levels, MeansIncreaseWithinCapacity) {
  for (auto scale : {LevelScale::linear, LevelScale::logarithmic}) {
    const auto m = LevelMapping::with_capacity(80, scale);
    double previous = -1.0;
    for (int level = 1; level <= kLevelCount; ++level) {
      EXPECT_GT(m.mean(level), previous);
      EXPECT_GE(m.mean(level), 0.0);
      EXPECT_LE(m.mean(level), 80.0);
      previous = m.mean(level);
    }
  }
}

TEST(Levels, NearestLevelInvertsMean) {
  const auto m = LevelMapping::with_capacity(120);
  for (int level = 1; level <= kLevelCount; ++level) EXPECT_EQ(m.nearest_level(m.mean(level)), level);
  EXPECT_EQ(m.nearest_level(-40), 1);
  EXPECT_EQ(m.nearest_level(500), 6);
}

TEST(Observation, PlatformAtMidStationHasTwoOnes) {
  const auto g = build_network(fixture("three_station"));
  const std::vector reports{platform("B", 3)};
  const auto batch = build_observation(reports, g, LevelMapping::with_capacity(120));
  ASSERT_EQ(batch.size(), 1);
  const auto h = dense_h(batch);
  EXPECT_EQ(h.row(0).sum(), 2.0);
  EXPECT_EQ(h(0, static_cast<Eigen::Index>(g.state_index("e1", Direction::southbound, Role::boarding))), 1.0);
  EXPECT_EQ(h(0, static_cast<Eigen::Index>(g.state_index("e2", Direction::northbound, Role::boarding))), 1.0);
  EXPECT_DOUBLE_EQ(batch.z[0], 50.0);
  EXPECT_DOUBLE_EQ(batch.r[0], 100.0);
}

TEST(Observation, OnboardWithoutUncertaintyHasOneOne) {
  const auto g = build_network(fixture("five_station"));
  const std::vector reports{onboard("m3", Direction::northbound, 0, 2)};
  const auto h = dense_h(build_observation(reports, g, LevelMapping::with_capacity(120)));
  EXPECT_EQ(h.row(0).sum(), 1.0);
  EXPECT_EQ(h(0, static_cast<Eigen::Index>(g.state_index("m3", Direction::northbound, Role::onboard))), 1.0);
}

TEST(Observation, OnboardUncertaintyCoversPrecedingEdges) {
  const auto g = build_network(fixture("five_station"));
  const std::vector reports{onboard("m3", Direction::northbound, 2, 2)};
  const auto batch = build_observation(reports, g, LevelMapping::with_capacity(120));
  const auto h = dense_h(batch);
  EXPECT_EQ(h.row(0).sum(), 3.0);
  for (const auto* e : {"m1", "m2", "m3"}) {
    EXPECT_EQ(h(0, static_cast<Eigen::Index>(g.state_index(e, Direction::northbound, Role::onboard))), 1.0) << e;
  }
  EXPECT_DOUBLE_EQ(batch.r[0], 3.0 * 100.0);

  // Southbound the chain runs toward higher positions.
  const std::vector south{onboard("m2", Direction::southbound, 1, 2)};
  const auto hs = dense_h(build_observation(south, g, LevelMapping::with_capacity(120)));
  EXPECT_EQ(hs(0, static_cast<Eigen::Index>(g.state_index("m3", Direction::southbound, Role::onboard))), 1.0);
}

TEST(Observation, UncertaintyStopsAtTheTerminus) {
  const auto g = build_network(fixture("five_station"));
  const std::vector reports{onboard("m2", Direction::northbound, 5, 2)};
  EXPECT_EQ(dense_h(build_observation(reports, g, LevelMapping::with_capacity(120))).row(0).sum(), 2.0);
}

TEST(Observation, UnknownLocationsAreRejected) {
  const auto g = build_network(fixture("three_station"));
  const auto m = LevelMapping::with_capacity(120);
  try {
    const std::vector r{platform("Z", 2)};
    build_observation(r, g, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_station);
  }
  try {
    const std::vector r{onboard("zz", Direction::northbound, 0, 2)};
    build_observation(r, g, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_edge);
  }
}

TEST(Observation, MixedTimestepsAreRejected) {
  const auto g = build_network(fixture("three_station"));
  const std::vector reports{platform("A", 2, 0), platform("B", 2, 1)};
  try {
    build_observation(reports, g, LevelMapping::with_capacity(120));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::mixed_timesteps);
  }
}

TEST(Observation, CountsStackAfterReports) {
  const auto g = build_network(fixture("three_station"));
  const std::vector reports{platform("A", 1)};
  const std::vector counts{
      CountMeasurement{0, BoxLocation{{"e2", Direction::southbound, Role::alighting}}, 7.0, 0.5, "apc"}};
  const auto batch = build_observation(reports, g, LevelMapping::with_capacity(120), counts);
  ASSERT_EQ(batch.size(), 2);
  EXPECT_EQ(batch.z[1], 7.0);
  EXPECT_EQ(batch.r[1], 0.5);
  EXPECT_EQ(dense_h(batch)(1, 11), 1.0);
}

TEST(Observation, EmptyInputGivesEmptyBatch) {
  const auto g = build_network(fixture("three_station"));
  const auto batch = build_observation({}, g, LevelMapping::with_capacity(120));
  EXPECT_TRUE(batch.empty());
  EXPECT_EQ(batch.h.cols(), 12);
}

TEST(ObservationJson, ReportRoundTrips) {
  const CrowdednessReport report{4, OnboardLocation{"e1", Direction::southbound, 1}, 5, "alice", "R7"};
  const nlohmann::json j = report;
  EXPECT_EQ(j.at("t"), 4);
  EXPECT_EQ(j.at("level"), 5);
  EXPECT_EQ(j.get<CrowdednessReport>(), report);

  const CountMeasurement count{2, BoxLocation{{"e1", Direction::northbound, Role::onboard}}, 12.5, 4.0, "apc"};
  const nlohmann::json jc = count;
  EXPECT_EQ(jc.get<CountMeasurement>(), count);
}

TEST(ObservationJson, PlatformShape) {
  const nlohmann::json j = nlohmann::json::parse(R"({"t": 3, "location": {"platform": "B"}, "level": 2, "reporter": "u1"})");
  const auto r = j.get<CrowdednessReport>();
  EXPECT_EQ(r.timestep, 3);
  EXPECT_EQ(std::get<PlatformLocation>(r.location).station, "B");
  EXPECT_FALSE(r.request_id.has_value());
}

// Properties over random reports on random topologies.

class RandomReports : public ::testing::TestWithParam<std::uint64_t> {};

std::vector<CrowdednessReport> random_reports(const NetworkGraph& g, std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<std::size_t> station(0, g.station_count() - 1);
  std::uniform_int_distribution<std::size_t> edge(0, g.edge_count() - 1);
  std::uniform_int_distribution<int> level(1, 6);
  std::uniform_int_distribution<int> q(0, 3);
  std::bernoulli_distribution on_board(0.5);
  std::bernoulli_distribution north(0.5);
  std::vector<CrowdednessReport> out;
  for (int i = 0; i < n; ++i) {
    if (on_board(rng)) {
      out.push_back(onboard(g.edges()[edge(rng)].id, north(rng) ? Direction::northbound : Direction::southbound,
                            q(rng), level(rng)));
    } else {
      out.push_back(platform(g.stations()[station(rng)].id, level(rng)));
    }
  }
  return out;
}

TEST_P(RandomReports, RowsMatchLocationSemantics) {
  std::mt19937_64 rng(GetParam());
  const auto g = build_network(scenario::random_topology(rng, 8));
  const auto reports = random_reports(g, rng, 12);
  const auto batch = build_observation(reports, g, LevelMapping::with_capacity(120));
  const auto h = dense_h(batch);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    const auto& rep = reports[static_cast<std::size_t>(i)];
    EXPECT_TRUE(((h.row(i).array() == 0.0) || (h.row(i).array() == 1.0)).all());
    const auto cols = support(g, rep.location);
    EXPECT_EQ(h.row(i).sum(), static_cast<double>(cols.size()));
    EXPECT_GE(cols.size(), 1u);
    EXPECT_GT(batch.r[i], 0.0);
    if (const auto* p = std::get_if<PlatformLocation>(&rep.location)) {
      EXPECT_EQ(cols, g.boarding_boxes_at(p->station));
    } else {
      const auto& o = std::get<OnboardLocation>(rep.location);
      EXPECT_LE(cols.size(), static_cast<std::size_t>(o.positional_uncertainty) + 1);
      for (auto c : cols) EXPECT_EQ(g.gridbox_of(c).role, Role::onboard);
    }
  }
}

TEST_P(RandomReports, StackingPreservesOrder) {
  std::mt19937_64 rng(GetParam());
  const auto g = build_network(scenario::random_topology(rng, 8));
  const auto reports = random_reports(g, rng, 10);
  std::vector<std::size_t> perm(reports.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<CrowdednessReport> permuted;
  for (auto i : perm) permuted.push_back(reports[i]);

  const auto mapping = LevelMapping::with_capacity(120);
  const auto a = build_observation(reports, g, mapping);
  const auto b = build_observation(permuted, g, mapping);
  const auto ha = dense_h(a);
  const auto hb = dense_h(b);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(perm[k]);
    const auto j = static_cast<Eigen::Index>(k);
    EXPECT_EQ(hb.row(j), ha.row(i));
    EXPECT_EQ(b.z[j], a.z[i]);
    EXPECT_EQ(b.r[j], a.r[i]);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomReports, ::testing::Range<std::uint64_t>(200, 230));

}  // namespace
