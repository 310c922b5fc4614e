#include "lts/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using lts::EpochRecord;
using lts::IterationRecord;
using lts::LevelSnapshot;
using lts::TicketRatioRecord;

namespace {

std::string tmp_dir() {
  const std::string dir = testing::TempDir() + "/metrics_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(AvgWgs, HandCases) {
  std::vector<IterationRecord> rec;
  for (double s : {0.0, 0.5, 1.0}) rec.push_back({0, 0, 0, s, 0, s / 2});
  EXPECT_DOUBLE_EQ(lts::avg_wgs(rec), 0.5);

  std::vector<IterationRecord> zeros(10);
  EXPECT_DOUBLE_EQ(lts::avg_wgs(zeros), 0.0);  // the baseline row

  std::vector<IterationRecord> paper;
  for (int i = 0; i < 4; ++i) paper.push_back({i, 0, 0, 0.66, 0, 0.33});
  EXPECT_NEAR(lts::avg_wgs(paper), 0.66, 1e-12);
  EXPECT_NEAR(lts::avg_wgs(paper) / 2.0, 0.33, 1e-12);

  EXPECT_THROW(lts::avg_wgs({}), lts::InvariantError);
}

TEST(TicketRatio, SelfComparisonIsOne) {
  LevelSnapshot s0{0, {{"conv", {0, 1, 2, 3}}}};
  LevelSnapshot s1{1, {{"conv", {0, 1, 1, 3}}}};
  auto curve = lts::ticket_ratio_curve({s0, s1}, 1);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_DOUBLE_EQ(curve[1].ratio, 1.0);  // epoch 1 against itself
  EXPECT_DOUBLE_EQ(curve[0].ratio, 0.75); // hand trace: 3 of 4 agree
}

TEST(TicketRatio, ConstantLayerStaysAtOne) {
  LevelSnapshot s0{0, {{"fc", {5, 5, 5}}}};
  LevelSnapshot s1{1, {{"fc", {5, 5, 5}}}};
  LevelSnapshot s2{2, {{"fc", {5, 5, 5}}}};
  for (const auto& r : lts::ticket_ratio_curve({s0, s1, s2}, 2))
    EXPECT_DOUBLE_EQ(r.ratio, 1.0);
}

TEST(TicketRatio, MissingBestSnapshotThrows) {
  LevelSnapshot s0{0, {{"fc", {1}}}};
  EXPECT_THROW(lts::ticket_ratio_curve({s0}, 3), lts::InvariantError);
}

TEST(MetricsCsv, HeadersAndRowCounts) {
  const std::string dir = tmp_dir();
  lts::MetricsRecord rec;
  rec.iterations.push_back({1, 1, 0.5, 0.0, 0.0, 0.0});
  rec.iterations.push_back({2, 1, 0.25, 0.125, 0.2, 0.0625});
  rec.accuracy.push_back({1, 0.75});
  emit_metrics(rec, dir);

  std::ifstream in(dir + "/metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iter,epoch,loss,wgs,p,flops_reduction");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 2);

  std::ifstream acc(dir + "/accuracy.csv");
  std::getline(acc, header);
  EXPECT_EQ(header, "epoch,top1");
}

TEST(MetricsCsv, EmptyRunWritesHeaderOnly) {
  const std::string dir = tmp_dir() + "/empty";
  std::filesystem::create_directories(dir);
  emit_metrics(lts::MetricsRecord{}, dir);
  std::ifstream in(dir + "/metrics.csv");
  std::string header, rest;
  ASSERT_TRUE(static_cast<bool>(std::getline(in, header)));
  EXPECT_FALSE(static_cast<bool>(std::getline(in, rest)));
}

TEST(MetricsCsv, RoundTripEqualsInMemoryRecords) {
  const std::string dir = tmp_dir() + "/rt";
  std::filesystem::create_directories(dir);
  std::vector<IterationRecord> rows = {
      {1, 1, 0.6931471805599453, 0.0, 0.0, 0.0},
      {2, 1, 0.3210987654321098, 1.0 / 3.0, 0.05, 1.0 / 6.0},
      {3, 2, 1e-7, 0.9999999999999999, 1.0, 0.49999999999999994},
  };
  lts::write_metrics_csv(dir + "/metrics.csv", rows);
  auto parsed = lts::parse_metrics_csv(dir + "/metrics.csv");
  ASSERT_EQ(parsed.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(parsed[i].iter, rows[i].iter);
    EXPECT_EQ(parsed[i].epoch, rows[i].epoch);
    EXPECT_EQ(parsed[i].loss, rows[i].loss);  // %.17g round-trips exactly
    EXPECT_EQ(parsed[i].wgs, rows[i].wgs);
    EXPECT_EQ(parsed[i].p, rows[i].p);
    EXPECT_EQ(parsed[i].flops_reduction, rows[i].flops_reduction);
  }

  std::vector<EpochRecord> acc = {{1, 0.5}, {2, 0.8125}};
  lts::write_accuracy_csv(dir + "/accuracy.csv", acc);
  auto acc2 = lts::parse_accuracy_csv(dir + "/accuracy.csv");
  ASSERT_EQ(acc2.size(), 2u);
  EXPECT_EQ(acc2[1].top1, 0.8125);
}

TEST(TrajectoryCsv, RoundTrip) {
  const std::string dir = tmp_dir() + "/traj";
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/trajectory.csv";
  lts::write_trajectory_csv(path, {"conv1", "fc"}, {{0, 2}, {1, 5}, {4, 9}});
  auto t = lts::parse_trajectory_csv(path);
  EXPECT_EQ(t.layer_names, (std::vector<std::string>{"conv1", "fc"}));
  ASSERT_EQ(t.frozen_counts.size(), 3u);
  EXPECT_EQ(t.frozen_counts[2], (std::vector<std::size_t>{4, 9}));
}

TEST(SummaryCsv, RoundTrip) {
  const std::string dir = tmp_dir() + "/summary";
  std::filesystem::create_directories(dir);
  lts::RunSummary s;
  s.mode = "lts";
  s.model = "convnet-s";
  s.bits = 4;
  s.epochs = 60;
  s.best_epoch = 42;
  s.best_top1 = 0.953125;
  s.avg_wgs = 0.51;
  s.flops_reduction = 0.255;
  s.flops_reduction_mac_weighted = 0.31;
  s.total_iterations = 480;
  lts::write_summary_csv(dir + "/summary.csv", s);
  auto back = lts::parse_summary_csv(dir + "/summary.csv");
  EXPECT_EQ(back.mode, "lts");
  EXPECT_EQ(back.best_epoch, 42);
  EXPECT_EQ(back.best_top1, 0.953125);
  EXPECT_EQ(back.total_iterations, 480);
}

TEST(MetricsCsv, BadHeaderRejected) {
  const std::string dir = tmp_dir() + "/bad";
  std::filesystem::create_directories(dir);
  std::ofstream(dir + "/metrics.csv") << "iter,epoch,loss\n1,1,0.5\n";
  EXPECT_THROW(lts::parse_metrics_csv(dir + "/metrics.csv"), lts::ParseError);
}
