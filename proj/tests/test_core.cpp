#include "labpilot/core.hpp"
#include "labpilot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <doctest.h>

using namespace labpilot;

namespace {

TrialRecord make_trial(int index, const std::string& node, bool nonbuggy, double metric,
                       bool with_metric = true) {
  TrialRecord t;
  t.id = "trial-" + std::to_string(index);
  t.node_id = node;
  t.index = index;
  t.classified = classify_trial(nonbuggy, false);
  if (nonbuggy && with_metric) t.metrics["auroc"] = MetricValue::of(metric);
  return t;
}

// Independent oracle: scan for the optimum value, then the lowest trial
// index among trials achieving it.
std::optional<std::string> best_node_oracle(const std::vector<TrialRecord>& trials,
                                            const MetricSpec& spec) {
  const TrialRecord* best = nullptr;
  for (const auto& t : trials) {
    if (t.classified.code != CodeStatus::NonBuggy || !t.metrics.count(spec.name)) continue;
    if (!best) {
      best = &t;
      continue;
    }
    double v = t.metrics.at(spec.name).value;
    double b = best->metrics.at(spec.name).value;
    bool better = spec.direction == MetricDirection::HigherIsBetter ? v > b : v < b;
    if (better || (v == b && t.index < best->index)) best = &t;
  }
  return best ? std::optional<std::string>(best->node_id) : std::nullopt;
}

}  // namespace

TEST_CASE("classification truth table") {
  CHECK(classify_trial(true, true) ==
        NodeStatus{CodeStatus::NonBuggy, PlotStatus::NonPlotBuggy});
  CHECK(classify_trial(true, false) == NodeStatus{CodeStatus::NonBuggy, PlotStatus::PlotBuggy});
  CHECK(classify_trial(false, true) == NodeStatus{CodeStatus::Buggy, PlotStatus::NonPlotBuggy});
  CHECK(classify_trial(false, false) == NodeStatus{CodeStatus::Buggy, PlotStatus::PlotBuggy});
}

TEST_CASE("classification is exhaustive and injective over the boolean square") {
  std::vector<NodeStatus> seen;
  for (bool r : {false, true})
    for (bool p : {false, true}) {
      NodeStatus s = classify_trial(r, p);
      CHECK((s.code == CodeStatus::NonBuggy) == r);
      CHECK((s.plot == PlotStatus::NonPlotBuggy) == p);
      for (const auto& other : seen) CHECK_FALSE(s == other);
      seen.push_back(s);
    }
  CHECK(seen.size() == 4);
}

TEST_CASE("surpasses_baseline is strict and direction-aware") {
  MetricSpec higher{"auroc", MetricDirection::HigherIsBetter, true};
  MetricSpec lower{"fpr95", MetricDirection::LowerIsBetter, true};
  CHECK(surpasses_baseline(MetricValue::of(91.2), MetricValue::of(90.0), higher));
  CHECK_FALSE(surpasses_baseline(MetricValue::of(90.0), MetricValue::of(90.0), higher));
  CHECK(surpasses_baseline(MetricValue::of(24.0), MetricValue::of(25.0), lower));
}

TEST_CASE("surpasses_baseline: reflexivity and antisymmetry properties") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> dist(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    double x = dist(rng), y = dist(rng);
    for (MetricDirection d : {MetricDirection::HigherIsBetter, MetricDirection::LowerIsBetter}) {
      MetricSpec spec{"m", d, true};
      CHECK_FALSE(surpasses_baseline(MetricValue::of(x), MetricValue::of(x), spec));
      bool ab = surpasses_baseline(MetricValue::of(x), MetricValue::of(y), spec);
      bool ba = surpasses_baseline(MetricValue::of(y), MetricValue::of(x), spec);
      bool both = ab && ba;
      CHECK_FALSE(both);
    }
  }
}

TEST_CASE("surpasses_baseline rejects non-finite values") {
  MetricSpec spec{"auroc", MetricDirection::HigherIsBetter, true};
  CHECK_THROWS_AS(surpasses_baseline(MetricValue::of(std::nan("")), MetricValue::of(1.0), spec),
                  InputError);
  MetricValue inf;
  inf.value = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(surpasses_baseline(MetricValue::of(1.0), inf, spec), InputError);
}

TEST_CASE("best_node basics") {
  MetricSpec spec{"auroc", MetricDirection::HigherIsBetter, true};
  std::vector<TrialRecord> trials{make_trial(1, "nodeA", true, 89.0),
                                  make_trial(2, "nodeB", true, 91.0)};
  CHECK(best_node(trials, spec) == std::optional<std::string>("nodeB"));
  CHECK_FALSE(best_node({}, spec).has_value());

  // no NonBuggy trial carrying the primary metric
  std::vector<TrialRecord> buggy{make_trial(1, "nodeA", false, 0.0),
                                 make_trial(2, "nodeB", true, 0.0, false)};
  CHECK_FALSE(best_node(buggy, spec).has_value());
}

TEST_CASE("best_node ties break to the lowest trial index") {
  MetricSpec spec{"auroc", MetricDirection::HigherIsBetter, true};
  // equal bests at indices 3 and 7, noise elsewhere
  std::vector<TrialRecord> trials;
  for (int i = 1; i <= 10; ++i) {
    double v = i == 3 || i == 7 ? 95.0 : 90.0 + i * 0.1;
    trials.push_back(make_trial(i, "node" + std::to_string(i), true, v));
  }
  CHECK(best_node(trials, spec) == std::optional<std::string>("node3"));
}

TEST_CASE("best_node agrees with the brute-force oracle and is permutation-invariant") {
  std::mt19937_64 rng(7);
  for (int iter = 0; iter < 300; ++iter) {
    MetricDirection dir =
        rng() % 2 ? MetricDirection::HigherIsBetter : MetricDirection::LowerIsBetter;
    MetricSpec spec{"auroc", dir, true};
    int n = 1 + static_cast<int>(rng() % 10);
    std::vector<TrialRecord> trials;
    for (int i = 1; i <= n; ++i) {
      bool nonbuggy = rng() % 4 != 0;
      bool with_metric = rng() % 5 != 0;
      // small value set so ties actually happen
      double v = 88.0 + static_cast<double>(rng() % 5);
      trials.push_back(make_trial(i, "node" + std::to_string(i), nonbuggy, v, with_metric));
    }
    auto expected = best_node_oracle(trials, spec);
    CHECK(best_node(trials, spec) == expected);

    auto shuffled = trials;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(best_node(shuffled, spec) == expected);
  }
}

TEST_CASE("run config validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.stage1_iterations = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = RunConfig{};
  c.stage2_parent_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = RunConfig{};
  c.primary_metric.clear();
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("trial record and node serialization round-trips") {
  TrialRecord t = make_trial(3, "node-0003", true, 91.25);
  t.session = {5, true, "trials/trial-0003/transcript.txt"};
  t.execution = "trials/trial-0003/execution.json";
  t.timestamp = "2020-01-01T00:00:00.000Z";
  TrialRecord back = TrialRecord::from_json(t.to_json());
  CHECK(back.id == t.id);
  CHECK(back.index == 3);
  CHECK(back.session.turns_used == 5);
  CHECK(back.metrics.at("auroc").value == doctest::Approx(91.25));
  CHECK(back.classified == t.classified);

  ExperimentNode n;
  n.id = "node-0001";
  n.stage = Stage::Stage2;
  n.parent = "node-0000";
  n.workspace = "nodes/node-0001/workspace";
  n.entry_file = "improved_proposed_method.py";
  n.trials = {"trial-0001"};
  n.best_metric = MetricValue::of(91.0);
  ExperimentNode nb = ExperimentNode::from_json(n.to_json());
  CHECK(nb.stage == Stage::Stage2);
  CHECK(nb.parent == std::optional<std::string>("node-0000"));
  CHECK(nb.best_metric->value == doctest::Approx(91.0));
}
