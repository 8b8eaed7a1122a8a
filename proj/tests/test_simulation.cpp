#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "passflow/export.hpp"
#include "passflow/simulation.hpp"
#include "support.hpp"

namespace {

using namespace passflow;
using dynamics::EventKind;
using dynamics::VehicleEventCount;
using passflow::testing::fixture_model;

Eigen::Index idx(const NetworkGraph& g, const char* edge, Direction dir, Role role) {
  return static_cast<Eigen::Index>(g.state_index(edge, dir, role));
}

TEST(Step, NothingHappeningGrowsCovarianceByTwoQ) {
  const auto model = fixture_model("three_station");
  Simulation sim(model, {});
  const auto before = sim.state();
  const auto r = sim.step({});
  EXPECT_EQ(sim.state().x, before.x);
  const Eigen::VectorXd q = filter::process_noise(*model->graph, {});
  EXPECT_TRUE(sim.state().p.isApprox(before.p + Eigen::MatrixXd(2.0 * q.asDiagonal()), 1e-15));
  EXPECT_FALSE(r.updated);
  EXPECT_EQ(r.substeps[0].phase, Phase::arrival);
  EXPECT_EQ(r.substeps[1].phase, Phase::departure);
  EXPECT_EQ(r.substeps[1].substep, 2);
  EXPECT_EQ(sim.state().timestep, 1);
}

TEST(Step, ArrivalThenTransferWithinOneMinute) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  Simulation sim(model, {});
  auto s = sim.state();
  s.x.setZero();
  s.x[idx(g, "e1", Direction::northbound, Role::onboard)] = 10.0;
  s.x[idx(g, "e2", Direction::northbound, Role::boarding)] = 4.0;
  sim.reset_state(s);

  ingest::TimestepInputs in;
  in.events = {{0, "B", "e1", Direction::northbound, EventKind::arrival, 1},
               {0, "B", "e2", Direction::northbound, EventKind::departure, 1}};
  const auto r = sim.step(in);

  const auto& a = r.substeps[0].mean;
  EXPECT_DOUBLE_EQ(a[idx(g, "e1", Direction::northbound, Role::alighting)], 10.0);
  EXPECT_DOUBLE_EQ(a[idx(g, "e1", Direction::northbound, Role::onboard)], 0.0);
  EXPECT_DOUBLE_EQ(a[idx(g, "e2", Direction::northbound, Role::boarding)], 4.0);

  // Through fraction 0.6 reaches the next boarding box; the train already
  // waiting there leaves with the passengers who were boarding before.
  const auto& d = r.substeps[1].mean;
  EXPECT_DOUBLE_EQ(d[idx(g, "e2", Direction::northbound, Role::boarding)], 6.0);
  EXPECT_DOUBLE_EQ(d[idx(g, "e1", Direction::northbound, Role::alighting)], 4.0);
  EXPECT_DOUBLE_EQ(d[idx(g, "e2", Direction::northbound, Role::onboard)], 4.0);
  EXPECT_DOUBLE_EQ(d.sum(), 14.0);

  ASSERT_EQ(r.substeps[0].flows.size(), 1u);
  EXPECT_DOUBLE_EQ(r.substeps[0].flows[0].mass, 10.0);
  ASSERT_EQ(r.substeps[1].flows.size(), 1u);
  EXPECT_DOUBLE_EQ(r.substeps[1].flows[0].mass, 4.0);
}

TEST(Step, TransferRoutingHappensOnlyOnce) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  Simulation sim(model, {});
  auto s = sim.state();
  s.x.setZero();
  s.x[idx(g, "e1", Direction::northbound, Role::onboard)] = 10.0;
  sim.reset_state(s);
  ingest::TimestepInputs in;
  in.events = {{0, "B", "e1", Direction::northbound, EventKind::arrival, 1}};
  sim.step(in);
  sim.step({1});
  EXPECT_DOUBLE_EQ(sim.state().x[idx(g, "e1", Direction::northbound, Role::alighting)], 4.0);
  EXPECT_DOUBLE_EQ(sim.state().x[idx(g, "e2", Direction::northbound, Role::boarding)], 6.0);
}

TEST(Step, ControlAppliedInArrivalSubstepOnly) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  Simulation sim(model, {});
  ingest::TimestepInputs in;
  in.counts["A"] = {5, 0};
  const auto r = sim.step(in);
  EXPECT_DOUBLE_EQ(r.substeps[0].mean[idx(g, "e1", Direction::northbound, Role::boarding)], 5.0);
  EXPECT_DOUBLE_EQ(r.substeps[1].mean.sum(), 5.0);
  EXPECT_EQ(r.diagnostics.conservation_residual, 0.0);
}

TEST(Step, OpenLoopMatchesPlainSimulation) {
  const auto model = fixture_model("red_fork");
  const auto& g = *model->graph;
  ModelConfig config;
  config.assimilate = false;
  Simulation sim(model, config);
  Eigen::VectorXd x = sim.state().x;
  std::vector<StateIndex> armed;
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<double> count(0.0, 10.0);

  for (long k = 0; k < 200; ++k) {
    ingest::TimestepInputs in;
    in.timestep = k;
    for (const auto& e : g.edges()) {
      for (auto dir : {Direction::northbound, Direction::southbound}) {
        const int c = pick(rng);
        if (c == 0) in.events.push_back({k, g.upstream(e.id, dir), e.id, dir, EventKind::departure, 1});
        if (c == 1) in.events.push_back({k, g.downstream(e.id, dir), e.id, dir, EventKind::arrival, 1});
      }
    }
    for (const auto& st : g.stations()) in.counts[st.id] = {count(rng), count(rng)};
    in.reports.push_back({k, observation::PlatformLocation{"HAR"}, 6, "ignored", {}});
    sim.step(in);

    std::vector<VehicleEventCount> arrivals;
    std::vector<VehicleEventCount> departures;
    for (const auto& e : in.events) (e.kind == EventKind::arrival ? arrivals : departures).push_back(e);
    const auto u = dynamics::build_control_vector(g, in.counts);
    x = dynamics::build_transition(g, arrivals, model->transfers).matrix * x + model->control.matrix * u;
    armed = armed_boxes(g, arrivals);
    x = dynamics::build_transition(g, departures, model->transfers, armed).matrix * x;
    ASSERT_EQ(sim.state().x, x) << "step " << k;
  }
}

TEST(Step, ReportShrinksErrorOnMeasuredBoxes) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  Simulation sim(model, {});
  ingest::TimestepInputs in;
  // Truth: 50 waiting at B, split over its two boarding boxes.
  in.reports.push_back({0, observation::PlatformLocation{"B"}, 3, "u", {}});
  const auto prior = sim.state();
  const auto r = sim.step(in);
  EXPECT_TRUE(r.updated);
  ASSERT_TRUE(r.diagnostics.nis.has_value());
  const auto b1 = idx(g, "e1", Direction::southbound, Role::boarding);
  const auto b2 = idx(g, "e2", Direction::northbound, Role::boarding);
  const double prior_error = std::abs(prior.x[b1] + prior.x[b2] - 50.0);
  const double post_error = std::abs(sim.state().x[b1] + sim.state().x[b2] - 50.0);
  EXPECT_LT(post_error, prior_error);
  EXPECT_LT(sim.state().p(b1, b1), prior.p(b1, b1));
}

TEST(Step, NegativeOnboardRaisesRequest) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  ModelConfig config;
  config.noise.sigma0 = 1.0;
  Simulation sim(model, config);
  auto s = sim.state();
  s.x[idx(g, "e2", Direction::southbound, Role::onboard)] = -4.0;
  sim.reset_state(s);
  const auto r = sim.step({});
  ASSERT_EQ(r.requests.size(), 1u);
  EXPECT_EQ(r.requests[0].reason, feedback::Reason::negative_onboard);
  EXPECT_EQ(r.requests[0].timestep, 1);
}

TEST(Export, SnapshotsAndMetrics) {
  const auto model = fixture_model("three_station");
  Simulation sim(model, {});
  ingest::TimestepInputs in;
  in.counts["A"] = {5, 0};
  in.reports.push_back({0, observation::PlatformLocation{"B"}, 2, "u", {}});
  const auto r = sim.step(in);

  const auto docs = io::substep_snapshots(*model->graph, r);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].at("phase"), "arrival");
  EXPECT_EQ(docs[1].at("boxes").size(), 12u);
  EXPECT_EQ(docs[1].at("boxes")[0].at("gridbox").at("edge"), "e1");
  EXPECT_DOUBLE_EQ(docs[0].at("boxes")[0].at("mean").get<double>(), 5.0);

  std::ostringstream csv;
  io::MetricsWriter writer(csv);
  writer.write(r);
  std::istringstream lines(csv.str());
  std::string header;
  std::string first;
  std::string second;
  std::getline(lines, header);
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_EQ(header, "t,phase,substep,trace_P,NIS,conservation_residual");
  EXPECT_NE(first.find(",arrival,1,"), std::string::npos) << first;
  EXPECT_NE(first.find(",,"), std::string::npos) << "arrival rows carry no NIS: " << first;
  EXPECT_EQ(second.find(",,"), std::string::npos) << second;
}

TEST(Export, TerminusFlowsBinArrivals) {
  const auto model = fixture_model("three_station");
  const auto& g = *model->graph;
  Simulation sim(model, {});
  io::TerminusFlows flows(g, 2);
  auto s = sim.state();
  s.x.setZero();
  s.x[idx(g, "e2", Direction::northbound, Role::onboard)] = 8.0;
  sim.reset_state(s);
  ingest::TimestepInputs in;
  in.events = {{0, "C", "e2", Direction::northbound, EventKind::arrival, 1}};
  flows.add(sim.step(in));
  flows.add(sim.step({1}));
  in.timestep = 2;
  in.events = {{2, "C", "e2", Direction::northbound, EventKind::arrival, 1}};
  flows.add(sim.step(in));
  const auto& bins = flows.bins();
  ASSERT_TRUE(bins.contains("C"));
  EXPECT_DOUBLE_EQ(bins.at("C").at(0).first, 8.0);
  EXPECT_DOUBLE_EQ(bins.at("C").at(1).first, 0.0);
  std::ostringstream csv;
  flows.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "station,bin,arriving,departing");
}

}  // namespace
