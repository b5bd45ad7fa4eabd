#include "helpers.hpp"

#include <fstream>
#include <sstream>

#include "deeptruck/checkpoint.hpp"
#include "deeptruck/experiment.hpp"
#include "deeptruck/stats.hpp"

using namespace deeptruck;

namespace {

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

}  // namespace

TEST(RunningStat, MatchesTwoPassOracle) {
  Rng rng(11);
  std::vector<double> xs;
  RunningStat s;
  for (int i = 0; i < 5000; ++i) {
    xs.push_back(1e3 + normal(rng, 0.0, 2.0));
    s.add(xs.back());
  }
  const auto [mean, sd] = dt_test::two_pass(xs);
  EXPECT_NEAR(s.mean, mean, 1e-10);
  EXPECT_NEAR(s.std(), sd, 1e-9);
  EXPECT_EQ(s.min, *std::min_element(xs.begin(), xs.end()));
  EXPECT_EQ(s.max, *std::max_element(xs.begin(), xs.end()));
}

TEST(ErrorStatSeries, SingleTrialHasZeroStdAndOrderedBounds) {
  ErrorStatSeries one({"x", "y"}, 5);
  MatrixXd e = MatrixXd::Random(2, 5);
  one.add_trial(e);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_EQ(one.stats[c][k].std(), 0.0);
      EXPECT_EQ(one.stats[c][k].mean, e(static_cast<Index>(c), static_cast<Index>(k)));
    }

  ErrorStatSeries many({"x"}, 4);
  Rng rng(12);
  for (int t = 0; t < 30; ++t) {
    MatrixXd m(1, 4);
    for (Index k = 0; k < 4; ++k) m(0, k) = normal(rng, 0.0, 1.0);
    many.add_trial(m);
  }
  for (const auto& s : many.stats[0]) {
    EXPECT_LE(s.min, s.mean);
    EXPECT_LE(s.mean, s.max);
    EXPECT_EQ(s.n, 30);
  }
}

TEST(ErrorStatSeries, ShorterTrialsOnlyCountWhereTheyReach) {
  ErrorStatSeries s({"x"}, 3);
  s.add_trial(MatrixXd::Constant(1, 3, 1.0));
  s.add_trial(MatrixXd::Constant(1, 1, 3.0));
  EXPECT_EQ(s.stats[0][0].n, 2);
  EXPECT_DOUBLE_EQ(s.stats[0][0].mean, 2.0);
  EXPECT_EQ(s.stats[0][2].n, 1);
  EXPECT_THROW(s.add_trial(MatrixXd::Zero(2, 3)), Error);
  EXPECT_THROW(s.add_trial(MatrixXd::Zero(1, 4)), Error);
}

TEST(ControlStats, PerfectTrackingGivesAllZeroStats) {
  // A zero network holds the ego speed, so an exact reset stays exact.
  auto model = dt_test::tiny_model(6, {6}, 0, 13);
  model.theta().setZero();
  CaccConfig cfg;
  cfg.horizon = 50;
  cfg.speed_error_range = 0.0;
  cfg.position_error_range = 0.0;
  const CaccEnv env(cfg, model);
  const PolicyFn any = [](const VectorXd&, Rng& rng) { return Action{uniform(rng, 0, 100), uniform(rng, 0, 100)}; };
  const ControlEvaluation ev = control_error_stats(env, any, 3, 5);
  EXPECT_EQ(ev.crashes, 0);
  for (const char* ch : {"gap_error", "time_gap_error", "speed_error"})
    for (const auto& s : ev.series.stats[ev.series.channel(ch)]) {
      ASSERT_EQ(s.n, 3);
      EXPECT_NEAR(s.mean, 0.0, 1e-9) << ch;
      EXPECT_NEAR(s.std(), 0.0, 1e-9) << ch;
      EXPECT_NEAR(s.min, 0.0, 1e-9) << ch;
      EXPECT_NEAR(s.max, 0.0, 1e-9) << ch;
    }
}

TEST(EpisodeIo, RoundTripKeepsEveryValue) {
  Episode ep = dt_test::synthetic_episode(50, 14);
  ep.seed = 99;
  ep.kind = "spanning";
  ep.plant_hash = 12345;
  std::stringstream buf;
  write_episode(buf, ep);
  const Episode back = read_episode(buf);
  EXPECT_EQ(back, ep);
}

TEST(EpisodeIo, MissingColumnIsNamed) {
  std::istringstream in("t,E_cmd,B_cmd,a,f_rate\n0,0,0,0,0\n");
  try {
    read_episode(in);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("'v'"), std::string::npos) << e.what();
  }
}

TEST(EpisodeIo, AbsentGradeColumnGivesNoGradeChannel) {
  std::istringstream in("t,E_cmd,B_cmd,v,a,f_rate\n0,10,0,5,0,1\n0.1,10,0,5.1,1,1\n");
  const Episode ep = read_episode(in);
  EXPECT_FALSE(ep.has_grade());
  EXPECT_EQ(ep.w_dim(), 0u);
  EXPECT_DOUBLE_EQ(ep.dt, 0.1);
  EXPECT_EQ(ep.size(), 2u);
}

TEST(EpisodeIo, RejectsRaggedRowsAndUnevenTime) {
  std::istringstream ragged("t,E_cmd,B_cmd,v,a,f_rate\n0,10,0,5,0\n");
  EXPECT_THROW(read_episode(ragged), Error);
  std::istringstream uneven("t,E_cmd,B_cmd,v,a,f_rate\n0,0,0,0,0,0\n0.1,0,0,0,0,0\n0.3,0,0,0,0,0\n");
  EXPECT_THROW(read_episode(uneven), Error);
}

TEST(Checkpoint, DeepModelRoundTripIsExact) {
  const auto p = dt_test::tiny_model(5, {4, 3}, 1, 15);
  dt_test::TempDir tmp("ckpt");
  save_deep_model(tmp / "m.ckpt", p);
  const DeepModelParams q = load_deep_model(tmp / "m.ckpt");
  EXPECT_TRUE(q == p);
  EXPECT_EQ(q.theta(), p.theta());
}

TEST(Checkpoint, BadMagicAndTruncationAreRejected) {
  dt_test::TempDir tmp("ckpt_bad");
  {
    std::ofstream out(tmp / "bad.ckpt", std::ios::binary);
    out << "NOTACKPT and some more bytes";
  }
  EXPECT_THROW(load_deep_model(tmp / "bad.ckpt"), Error);
  save_deep_model(tmp / "m.ckpt", dt_test::tiny_model(4, {4}, 0, 16));
  const auto size = std::filesystem::file_size(tmp / "m.ckpt");
  std::filesystem::resize_file(tmp / "m.ckpt", size / 2);
  EXPECT_THROW(load_deep_model(tmp / "m.ckpt"), Error);
  EXPECT_THROW(load_deep_model(tmp / "missing.ckpt"), Error);
}

TEST(Config, ParsesSectionsCommentsAndTypes) {
  const Config c = Config::from_string("# top\nx = 1.5\n[s]\nn = 3\nflag = true\nlist = 1, 2,3\n");
  EXPECT_DOUBLE_EQ(c.get_double("x", 0.0), 1.5);
  EXPECT_EQ(c.get_int("s.n", 0), 3);
  EXPECT_TRUE(c.get_bool("s.flag", false));
  EXPECT_EQ(c.get_doubles("s.list", {}), (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_EQ(c.subsection("s").get_int("n", 0), 3);
  EXPECT_EQ(c.get_int("missing", 7), 7);
  EXPECT_THROW(Config::from_string("no equals sign\n"), Error);
  EXPECT_THROW(Config::from_string("x = abc\n").get_double("x", 0.0), Error);
}

TEST(CsvHeaders, AreStable) {
  EXPECT_EQ(trajectory_header(GradeMode::Flat), "k,v_leader,v_ego,gap,desired_gap,E_cmd,B_cmd,r,gap_error,speed_error");
  EXPECT_EQ(trajectory_header(GradeMode::Graded),
            "k,v_leader,v_ego,gap,desired_gap,grade,E_cmd,B_cmd,r,gap_error,speed_error");
  EXPECT_EQ(policy_curve_header(),
            "iteration,avg_discounted_return,avg_return,crashes,episodes,timesteps,grad_norm,skipped,std_E,std_B");
  ErrorStatSeries s({"gap_error"}, 1);
  std::ostringstream o;
  s.write_csv(o, 0.1);
  EXPECT_EQ(first_line(o.str()), "k,t,gap_error_mean,gap_error_std,gap_error_min,gap_error_max,gap_error_n");
  std::ostringstream e;
  write_episode(e, dt_test::synthetic_episode(2, 1));
  EXPECT_NE(e.str().find("\nt,E_cmd,B_cmd,theta_rdg,v,a,f_rate\n"), std::string::npos);
}

TEST(Checksum, Sha256OfKnownText) {
  dt_test::TempDir tmp("sha");
  {
    std::ofstream out(tmp / "abc.txt", std::ios::binary);
    out << "abc";
  }
  EXPECT_EQ(sha256_file(tmp / "abc.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
