#include <gtest/gtest.h>

#include <random>
#include <set>

#include "passflow/error.hpp"
#include "passflow/network.hpp"
#include "passflow/scenario.hpp"
#include "support.hpp"

namespace {

using namespace passflow;
using passflow::testing::fixture;

ErrorCode code_of(const nlohmann::json& doc) {
  try {
    build_network(doc);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected build_network to throw";
  return ErrorCode::io_error;
}

// n stations at positions 0..n-1 on line M, with an optional explicit centre.
nlohmann::json straight_line(int n, std::optional<std::string> center = std::nullopt) {
  nlohmann::json doc{{"schema", 1}, {"stations", nlohmann::json::array()}, {"edges", nlohmann::json::array()}};
  for (int i = 0; i < n; ++i) {
    doc["stations"].push_back({{"id", "S" + std::to_string(i)},
                               {"lines", {{{"line", "M"}, {"position", i}, {"terminus", i == 0 || i == n - 1}}}}});
    if (i > 0) {
      doc["edges"].push_back(
          {{"id", "m" + std::to_string(i)}, {"from", "S" + std::to_string(i - 1)}, {"to", "S" + std::to_string(i)}, {"line", "M"}});
    }
  }
  if (center) doc["lines"] = {{{"id", "M"}, {"center", *center}}};
  return doc;
}

TEST(Network, ThreeStationsGiveTwelveStates) {
  const auto g = build_network(fixture("three_station"));
  EXPECT_EQ(g.station_count(), 3u);
  EXPECT_EQ(g.edge_count(), 2u);
  EXPECT_EQ(g.state_size(), 12u);
}

TEST(Network, SingleEdgeCoversZeroToFive) {
  const auto g = build_network(fixture("single_edge"));
  ASSERT_EQ(g.state_size(), 6u);
  std::set<GridBoxId> boxes;
  for (StateIndex i = 0; i < 6; ++i) boxes.insert(g.gridbox_of(i));
  EXPECT_EQ(boxes.size(), 6u);
  for (const auto& b : boxes) EXPECT_LT(g.state_index(b), 6u);
}

TEST(Network, ForkedRedLineHasThirtyStates) {
  const auto g = build_network(fixture("red_fork"));
  EXPECT_EQ(g.edge_count(), 5u);
  EXPECT_EQ(g.state_size(), 30u);
  ASSERT_TRUE(g.line("red").fork.has_value());
  EXPECT_EQ(*g.line("red").fork, "JFK");
  EXPECT_EQ(g.line("red").termini, (std::vector<StationId>{"ALE", "ASH", "BRA"}));
}

TEST(Network, FirstBoxIsIndexZero) {
  const auto g = build_network(fixture("single_edge"));
  EXPECT_EQ(g.state_index(GridBoxId{"xy", Direction::northbound, Role::boarding}), 0u);
}

TEST(Network, SecondEdgeSouthboundAlightingIsEleven) {
  const auto g = build_network(fixture("three_station"));
  EXPECT_EQ(g.state_index(GridBoxId{"e2", Direction::southbound, Role::alighting}), 11u);
  EXPECT_EQ(g.state_index("e1", Direction::southbound, Role::onboard), 4u);
}

TEST(Network, UnknownGridBoxIsRejected) {
  const auto g = build_network(fixture("single_edge"));
  try {
    g.state_index(GridBoxId{"nope", Direction::northbound, Role::boarding});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_grid_box);
  }
  EXPECT_THROW(g.gridbox_of(6), Error);
}

TEST(Network, BoardingAnchorsAtUpstreamStation) {
  const auto g = build_network(fixture("three_station"));
  EXPECT_EQ(g.upstream("e1", Direction::northbound), "A");
  EXPECT_EQ(g.downstream("e1", Direction::northbound), "B");
  EXPECT_EQ(g.upstream("e1", Direction::southbound), "B");
  EXPECT_EQ(g.downstream("e1", Direction::southbound), "A");
  // B boards onto e1 southbound and e2 northbound.
  const auto boarding = g.boarding_boxes_at("B");
  EXPECT_EQ(boarding, (std::vector<StateIndex>{3, 6}));
  const auto alighting = g.alighting_boxes_at("B");
  EXPECT_EQ(alighting, (std::vector<StateIndex>{2, 11}));
}

TEST(Network, DuplicateStationIdNamesTheId) {
  auto doc = fixture("three_station");
  doc["stations"].push_back(doc["stations"][0]);
  try {
    build_network(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_id);
    EXPECT_NE(std::string(e.what()).find("'A'"), std::string::npos);
  }
}

TEST(Network, DuplicateEdgeIsRejected) {
  auto doc = fixture("three_station");
  doc["edges"].push_back({{"id", "e3"}, {"from", "A"}, {"to", "B"}, {"line", "L"}});
  EXPECT_EQ(code_of(doc), ErrorCode::duplicate_id);
}

TEST(Network, DanglingEdgeReferenceIsRejected) {
  auto doc = fixture("three_station");
  doc["edges"][1]["to"] = "Z";
  EXPECT_EQ(code_of(doc), ErrorCode::dangling_edge_reference);
}

TEST(Network, DisconnectedGraphIsRejected) {
  auto doc = fixture("three_station");
  doc["stations"].push_back({{"id", "P"}, {"lines", {{{"line", "Q"}, {"position", 0}, {"terminus", true}}}}});
  doc["stations"].push_back({{"id", "R"}, {"lines", {{{"line", "Q"}, {"position", 1}, {"terminus", true}}}}});
  doc["edges"].push_back({{"id", "q1"}, {"from", "P"}, {"to", "R"}, {"line", "Q"}});
  EXPECT_EQ(code_of(doc), ErrorCode::disconnected_graph);
}

TEST(Network, SecondForkIsRejected) {
  auto doc = fixture("red_fork");
  // Fork again at HAR toward a new terminus.
  doc["stations"][1]["lines"][0]["position"] = 1;
  doc["stations"].push_back({{"id", "KEN"}, {"lines", {{{"line", "red"}, {"position", 1.5}, {"terminus", true}}}}});
  doc["edges"].push_back({{"id", "r6"}, {"from", "HAR"}, {"to", "KEN"}, {"line", "red"}});
  EXPECT_EQ(code_of(doc), ErrorCode::invalid_topology);
}

TEST(Network, DirectionAliasesResolve) {
  const auto g = build_network(fixture("red_fork"));
  EXPECT_EQ(g.resolve_direction("red", "Southbound"), Direction::northbound);
  EXPECT_EQ(g.resolve_direction("red", "Northbound"), Direction::southbound);
  EXPECT_EQ(g.resolve_direction("red", "northbound"), Direction::northbound);
  EXPECT_THROW(g.resolve_direction("red", "sideways"), Error);
}

TEST(Gravity, ThreeStationsCentreMiddle) {
  const auto g = build_network(fixture("three_station"));
  const auto w = gravity_weights(g, "L", "B");
  EXPECT_DOUBLE_EQ(w.at("A"), 1.0);
  EXPECT_DOUBLE_EQ(w.at("B"), 0.5);
  EXPECT_DOUBLE_EQ(w.at("C"), 0.0);
}

TEST(Gravity, FiveStationsInterpolateLinearly) {
  const auto g = build_network(straight_line(5));
  const auto w = gravity_weights(g, "M", "S2");
  const std::vector<double> expected{1.0, 0.75, 0.5, 0.25, 0.0};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(w.at("S" + std::to_string(i)), expected[i]) << i;
}

TEST(Gravity, CentreAtTerminusIsOneSided) {
  const auto g = build_network(straight_line(5));
  const auto w = gravity_weights(g, "M", "S0");
  const std::vector<double> expected{0.5, 0.375, 0.25, 0.125, 0.0};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(w.at("S" + std::to_string(i)), expected[i]) << i;
}

TEST(Gravity, CentreOffLineIsRejected) {
  const auto g = build_network(fixture("three_station"));
  try {
    gravity_weights(g, "L", "Z");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::center_not_on_line);
  }
  auto doc = fixture("three_station");
  doc["lines"][0]["center"] = "Z";
  EXPECT_EQ(code_of(doc), ErrorCode::center_not_on_line);
}

TEST(Gravity, BranchesAnchorAtTheirOwnTerminus) {
  const auto g = build_network(fixture("red_fork"));
  const auto w = gravity_weights(g, "red", "PRK");
  EXPECT_DOUBLE_EQ(w.at("ALE"), 1.0);
  EXPECT_DOUBLE_EQ(w.at("PRK"), 0.5);
  EXPECT_DOUBLE_EQ(w.at("ASH"), 0.0);
  EXPECT_DOUBLE_EQ(w.at("BRA"), 0.0);
}

// Properties over random topologies.

class RandomTopologies : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(RandomTopologies, StateSizeAndBijection) {
  std::mt19937_64 rng(GetParam());
  const auto doc = scenario::random_topology(rng, 8);
  const auto g = build_network(doc);
  ASSERT_EQ(g.state_size(), 6 * g.edge_count());
  std::set<GridBoxId> seen;
  for (StateIndex i = 0; i < g.state_size(); ++i) {
    const auto box = g.gridbox_of(i);
    EXPECT_EQ(g.state_index(box), i);
    seen.insert(box);
  }
  EXPECT_EQ(seen.size(), g.state_size());
}

TEST_P(RandomTopologies, RebuildIsIdentical) {
  std::mt19937_64 rng(GetParam());
  const auto doc = scenario::random_topology(rng, 8);
  const auto a = build_network(doc);
  const auto b = build_network(doc);
  ASSERT_EQ(a.state_size(), b.state_size());
  for (StateIndex i = 0; i < a.state_size(); ++i) EXPECT_EQ(a.gridbox_of(i), b.gridbox_of(i));
}

TEST_P(RandomTopologies, GravityBoundedAndMonotone) {
  std::mt19937_64 rng(GetParam());
  const auto g = build_network(scenario::random_topology(rng, 8));
  for (const auto& [id, line] : g.lines()) {
    for (const auto& center : line.stations) {
      const auto w = gravity_weights(g, id, center);
      for (const auto& [s, p] : w) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        EXPECT_DOUBLE_EQ(p + (1.0 - p), 1.0);
      }
      // Along every edge, moving to higher position never raises p.
      for (const auto& e : g.edges()) {
        if (e.line != id) continue;
        const auto& lo = g.upstream(e.id, Direction::northbound);
        const auto& hi = g.downstream(e.id, Direction::northbound);
        EXPECT_GE(w.at(lo), w.at(hi)) << e.id << " centre " << center;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomTopologies, ::testing::Range<std::uint64_t>(1, 41));

}  // namespace
