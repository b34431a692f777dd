#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cdan/errors.hpp"
#include "cdan/evaluation.hpp"
#include "cdan/rng.hpp"
#include "test_support.hpp"

using namespace cdan;

namespace {

MazeEnv suite_env() { return MazeEnv(load_suite(cdan::testing::suite_path())); }

Action immobile(std::size_t, const AgentState&, std::span<const double>, std::span<const double>, Rng&) {
  return {0.0, 0.0};
}

// Steers to heading 0 (towards +x, where the line maze's goal lies) at full throttle.
Controller go_straight(const EnvParams& p) {
  return [p](std::size_t, const AgentState& s, std::span<const double>, std::span<const double>, Rng&) {
    return Action{1.0, std::clamp(-s.heading / (p.omega_max * p.dt), -1.0, 1.0)};
  };
}

EvalRollout fake(std::size_t task, std::size_t j, double d0, double dn, double reward = 0.0) {
  EvalRollout r;
  r.task = task;
  r.index = j;
  r.start_distance = d0;
  r.final_distance = dn;
  r.reward_sum = reward;
  return r;
}

}  // namespace

TEST(CollectRollouts, ZeroEpisodesGiveNothing) {
  const MazeEnv env = suite_env();
  RolloutOptions opts;
  opts.episodes = 0;
  EXPECT_TRUE(collect_rollouts(env, {0, 1}, opts, immobile).empty());
}

TEST(CollectRollouts, SameSeedIsIdentical) {
  const MazeEnv env = suite_env();
  Rng rng(1);
  const PolicyNet policy({env.observation_dim(), env.context_dim(), 2, 16}, rng);
  RolloutOptions opts;
  opts.episodes = 3;
  opts.seed = 99;
  opts.record = true;
  const auto a = collect_rollouts(policy, env, {0, 4}, opts);
  const auto b = collect_rollouts(policy, env, {0, 4}, opts);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].final_position, b[k].final_position);
    EXPECT_EQ(a[k].reward_sum, b[k].reward_sum);
    EXPECT_EQ(a[k].observations, b[k].observations);
  }
  // Episode streams do not depend on which other tasks are collected.
  const auto only4 = collect_rollouts(policy, env, {4}, opts);
  EXPECT_EQ(only4[0].final_position, a[3].final_position);
}

TEST(CollectRollouts, ScriptedControllerSolvesLineMaze) {
  const MazeEnv env = suite_env();
  RolloutOptions opts;
  opts.episodes = 50;
  const auto rollouts = collect_rollouts(env, {0}, opts, go_straight(env.params()));
  ASSERT_EQ(rollouts.size(), 50u);
  for (const auto& r : rollouts) {
    EXPECT_EQ(r.done_reason, DoneReason::goal_touched);
    EXPECT_EQ(r.start, env.task(0).maze.start());
    EXPECT_EQ(r.goal, env.task(0).maze.goal());
    EXPECT_LE(r.final_distance, env.params().goal_radius);
  }
  const double sd = shorten_distance(rollouts);
  // d(p_n, g) is the field value at the stop point, so SD sits within goal_radius of 8.
  EXPECT_LE(sd, 8.0);
  EXPECT_GE(sd, 8.0 - env.params().goal_radius);
  const double n = nsd(rollouts, 1, 50);
  EXPECT_GE(n, 1.0 - env.params().goal_radius / 8.0);
  EXPECT_LE(n, 1.0);
}

TEST(CollectRollouts, ImmobileRobotScoresZero) {
  const MazeEnv env = suite_env();
  RolloutOptions opts;
  opts.episodes = 2;
  std::vector<std::size_t> all(env.task_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto rollouts = collect_rollouts(env, all, opts, immobile);
  EXPECT_EQ(nsd(rollouts, env.task_count(), 2), 0.0);
  const double n = static_cast<double>(env.params().step_limit);
  EXPECT_NEAR(average_reward(rollouts), -n * env.params().eta, 1e-9);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(shorten_distance(std::span<const EvalRollout>(rollouts.data() + 2 * i, 2)), 0.0);
  }
}

TEST(CollectRollouts, RewardSumsTelescope) {
  const MazeEnv env = suite_env();
  Rng rng(2);
  const PolicyNet policy({env.observation_dim(), env.context_dim(), 2, 16}, rng);
  RolloutOptions opts;
  opts.episodes = 3;
  for (const auto& r : collect_rollouts(policy, env, {0, 1, 2, 3, 4, 5, 6}, opts)) {
    const double expect = r.start_distance - r.final_distance - static_cast<double>(r.steps) * env.params().eta;
    EXPECT_NEAR(r.reward_sum, expect, 1e-9);
  }
}

TEST(CollectRollouts, EvaluationIsReadOnly) {
  const MazeEnv env = suite_env();
  Rng rng(3);
  const PolicyNet policy({env.observation_dim(), env.context_dim(), 2, 16}, rng);
  const ParamTree before = policy.params();
  RolloutOptions opts;
  opts.episodes = 2;
  collect_rollouts(policy, env, {0, 1}, opts);
  opts.deterministic = true;
  collect_rollouts(policy, env, {2}, opts);
  EXPECT_EQ(policy.params(), before);
}

TEST(CollectRollouts, MismatchedPolicyIsConfigError) {
  const MazeEnv env = suite_env();
  Rng rng(4);
  const PolicyNet policy({env.observation_dim(), 3, 2, 8}, rng);
  EXPECT_THROW(collect_rollouts(policy, env, {0}, {}), ConfigError);
}

TEST(CollectRollouts, DeterministicModeTakesMeanAction) {
  const MazeEnv env = suite_env();
  Rng rng(5);
  const PolicyNet policy({env.observation_dim(), env.context_dim(), 2, 16}, rng);
  RolloutOptions opts;
  opts.episodes = 1;
  opts.deterministic = true;
  opts.record = true;
  opts.seed = 7;
  const auto r = collect_rollouts(policy, env, {1}, opts);
  // Replays the episode's own stream for the reset.
  Rng stream(derive_seed(7, 1, 0));
  const auto reset = env.reset(1, stream);
  const auto e = policy.evaluate(reset.observation, reset.context.as_vector());
  EXPECT_EQ(r[0].trajectory[0].heading, reset.state.heading);
  EXPECT_EQ(r[0].trajectory[0].accel, std::clamp(e.mean[0], -1.0, 1.0));
  EXPECT_EQ(r[0].trajectory[0].turn, std::clamp(e.mean[1], -1.0, 1.0));
}

TEST(Metrics, ShortenDistanceArithmetic) {
  const std::vector<EvalRollout> r{fake(0, 0, 8, 3), fake(0, 1, 8, 5)};
  EXPECT_EQ(shorten_distance(r), 4.0);
  const std::vector<EvalRollout> mixed{fake(0, 0, 8, 3), fake(1, 0, 8, 5)};
  EXPECT_THROW(shorten_distance(mixed), UsageError);
  EXPECT_THROW(shorten_distance(std::span<const EvalRollout>()), UsageError);
}

TEST(Metrics, NsdArithmeticAndErrors) {
  const std::vector<EvalRollout> r{fake(0, 0, 8, 4), fake(1, 0, 12, 6)};
  EXPECT_EQ(nsd(r, 2, 1), 0.5);
  EXPECT_THROW(nsd(r, 2, 2), UsageError);
  EXPECT_THROW(nsd(r, 3, 1), UsageError);
  const std::vector<EvalRollout> uneven{fake(0, 0, 8, 4), fake(0, 1, 8, 4), fake(1, 0, 12, 6)};
  EXPECT_THROW(nsd(uneven, 2, 1), UsageError);
  const std::vector<EvalRollout> zero{fake(0, 0, 0, 0)};
  EXPECT_THROW(nsd(zero, 1, 1), UsageError);
}

TEST(Metrics, NsdEqualsMeanOfNormalizedSd) {
  Rng rng(6);
  std::vector<EvalRollout> r;
  const std::vector<double> d0{8, 8, 16, 8, 12, 16, 16};
  for (std::size_t i = 0; i < d0.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) r.push_back(fake(i, j, d0[i], rng.uniform(0, d0[i] + 2)));
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < d0.size(); ++i) {
    mean += shorten_distance(std::span<const EvalRollout>(r.data() + 5 * i, 5)) / d0[i];
  }
  mean /= static_cast<double>(d0.size());
  const double n = nsd(r, d0.size(), 5);
  EXPECT_NEAR(n, mean, 1e-14);
  EXPECT_LE(n, 1.0);
}

TEST(Metrics, AverageReward) {
  const std::vector<EvalRollout> r{fake(0, 0, 8, 0, 1.0), fake(0, 1, 8, 0, 2.0)};
  EXPECT_EQ(average_reward(r), 1.5);
}

TEST(Report, TableAndCsvLayout) {
  const MazeEnv env = suite_env();
  RolloutOptions opts;
  opts.episodes = 4;
  const auto rollouts = collect_rollouts(env, {0, 1}, opts, go_straight(env.params()));
  const MetricsReport rep = make_report(rollouts, env);
  ASSERT_EQ(rep.tasks.size(), 2u);
  EXPECT_EQ(rep.tasks[0].name, "line");
  EXPECT_EQ(rep.tasks[0].distance, 8.0);
  EXPECT_EQ(rep.tasks[0].success_rate, 1.0);
  EXPECT_EQ(rep.episodes_per_task, 4u);
  EXPECT_DOUBLE_EQ(rep.nsd, nsd(rollouts, 2, 4));
  const std::string table = format_report_table(rep);
  EXPECT_NE(table.find("NSD %"), std::string::npos);
  EXPECT_NE(table.find("corner_1"), std::string::npos);
  EXPECT_NE(table.find("per-episode reward sum"), std::string::npos);
  std::istringstream csv(format_report_csv(rep));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "task,maze,distance,shorten_distance,success_rate,average_reward,episodes");
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("0,line,8,", 0), 0u) << line;
  std::getline(csv, line);
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("nsd,", 0), 0u);
  EXPECT_DOUBLE_EQ(std::stod(line.substr(4)), rep.nsd);
}

TEST(TrajectoryLog, RoundTrip) {
  const MazeEnv env = suite_env();
  RolloutOptions opts;
  opts.episodes = 2;
  opts.record = true;
  const auto rollouts = collect_rollouts(env, {0, 3}, opts, go_straight(env.params()));
  const auto path = cdan::testing::temp_dir("trajlog") / "t.ndjson";
  write_trajectory_log(path, rollouts, env);
  const TrajectoryLog log = read_trajectory_log(path);
  ASSERT_EQ(log.mazes.size(), env.task_count());
  EXPECT_EQ(log.mazes[3].name, "square_1");
  EXPECT_EQ(log.mazes[3].map, env.task(3).maze.to_text());
  std::size_t expect = 0;
  for (const auto& r : rollouts) expect += r.trajectory.size();
  ASSERT_EQ(log.records.size(), expect);
  const auto& first = log.records.front();
  EXPECT_EQ(first.maze, "line");
  EXPECT_EQ(first.point.x, rollouts[0].trajectory[0].x);
  EXPECT_EQ(first.point.y, rollouts[0].trajectory[0].y);
  const auto& last = log.records.back();
  EXPECT_EQ(last.task, 3u);
  EXPECT_EQ(last.episode, 1u);
  EXPECT_EQ(last.point.heading, rollouts.back().trajectory.back().heading);
  EXPECT_EQ(rollouts[0].trajectory.size(), rollouts[0].steps + 1);

  std::ofstream bad(path.parent_path() / "bad.ndjson");
  bad << "{\"format\":\"other\",\"version\":1}\n";
  bad.close();
  EXPECT_THROW(read_trajectory_log(path.parent_path() / "bad.ndjson"), LoadError);
}
