#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include <unistd.h>

#include "vsms/diagnostics.hpp"
#include "vsms/mcmc.hpp"

using namespace vsms;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("vsms_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(TvPenalty, ConstantFieldGivesSmoothingFloor) {
  const auto mesh = build_fine_mesh(5, 4);
  const Eigen::VectorXd xi = Eigen::VectorXd::Constant(mesh.num_cells(), 0.7);
  // sqrt(eps^2) per cell times the unit area.
  EXPECT_NEAR(tv_penalty(mesh, xi, 3.0, 1e-3), 3.0 * 1e-3, 1e-15);
  EXPECT_EQ(tv_penalty(mesh, xi, 0.0), 0.0);
}

TEST(TvPenalty, VerticalJumpMatchesHandComputation) {
  const int nx = 4, ny = 3;
  const auto mesh = build_fine_mesh(nx, ny);
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(mesh.num_cells());
  for (int j = 0; j < ny; ++j)
    for (int i = 2; i < nx; ++i) xi[mesh.cell(i, j)] = 1.0;
  const double eps = 1e-3, hx = 0.25, hy = 1.0 / 3.0;
  // One forward difference per row crosses the jump.
  const double expected = hx * hy * (ny * std::sqrt(1.0 / (hx * hx) + eps * eps) + (nx * ny - ny) * eps);
  EXPECT_NEAR(tv_penalty(mesh, xi, 1.0, eps), expected, 1e-13);
}

TEST(TvPenalty, LinearRampAndExponentialField) {
  const int n = 6;
  const auto mesh = build_fine_mesh(n, n);
  Eigen::VectorXd xi(mesh.num_cells());
  for (int c = 0; c < mesh.num_cells(); ++c) xi[c] = 2.0 * mesh.cell_center(c).x() + 1.0 * mesh.cell_center(c).y();
  const double h = 1.0 / n, eps = 1e-3;
  double expected = 0.0;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double dx = i + 1 < n ? 2.0 : 0.0, dy = j + 1 < n ? 1.0 : 0.0;
      expected += std::sqrt(dx * dx + dy * dy + eps * eps) * h * h;
    }
  EXPECT_NEAR(tv_penalty(mesh, xi, 1.0, eps), expected, 1e-12);
  // On the coefficient field the penalty sees exp(xi).
  const TvPenalty on_kappa{1.0, eps, false};
  const TvPenalty on_log{1.0, eps, true};
  EXPECT_NEAR(on_kappa(n, n, h, h, xi), on_log(n, n, h, h, xi.array().exp().matrix()), 1e-12);
}

TEST(TGPosterior, PotentialIsMisfitPlusPenalty) {
  const auto mesh = build_fine_mesh(3, 3);
  const ForwardMap identity = [](const Eigen::VectorXd& x) { return x; };
  const Eigen::VectorXd data = Eigen::VectorXd::Constant(9, 0.5);
  const TGPosterior post(identity, data, 0.1, TvPenalty{2.0, 1e-3, true}, mesh);
  const Eigen::VectorXd xi = Eigen::VectorXd::Zero(9);
  EXPECT_NEAR(post.misfit(xi), 9 * 0.25 / (2 * 0.01), 1e-12);
  EXPECT_NEAR(post.potential(xi), post.misfit(xi) + 2.0 * 1e-3, 1e-12);
  EXPECT_THROW(TGPosterior(identity, data, 0.0, TvPenalty{}, mesh), Error);
  const TGPosterior wrong(identity, Eigen::VectorXd::Zero(4), 0.1, TvPenalty{}, mesh);
  EXPECT_THROW(wrong.misfit(xi), Error);
}

TEST(Pcn, BetaOneWithZeroPotentialIsAnIndependentPriorDraw) {
  const GaussianPrior prior(3, 3, 0.3, 0.3, KernelParams{0.2, 0.2, 0.2}, 1e-8);
  Rng a(4), b(4);
  Eigen::VectorXd xi = Eigen::VectorXd::Ones(9);
  double phi = 0.0;
  const PotentialFn zero = [](const Eigen::VectorXd&) { return 0.0; };
  EXPECT_TRUE(pcn_step(zero, prior, 1.0, xi, phi, a));
  EXPECT_LT((xi - sample_prior(prior, b)).norm(), 1e-14);
}

TEST(Pcn, ChainPreservesThePriorUnderZeroPotential) {
  const GaussianPrior prior(2, 2, 0.5, 0.5, KernelParams{0.3, 0.4, 0.4}, 1e-8);
  ChainOptions opt;
  opt.steps = 40000;
  opt.beta = 0.5;
  opt.burn_in_fraction = 0.0;
  opt.thin = 20;
  opt.seed = 12;
  const Chain c = run_chain([](const Eigen::VectorXd&) { return 0.0; }, prior, Eigen::VectorXd::Zero(4), opt);
  EXPECT_EQ(c.accepted, opt.steps);
  std::vector<double> x0;
  for (const auto& s : c.stored) x0.push_back(s[0]);
  EXPECT_LT(ks_normal(x0, 0.0, std::sqrt(prior.covariance(0, 0))), 0.07);
}

TEST(Pcn, RecoversAConjugateGaussianPosterior) {
  // Prior N(0, 0.1), likelihood N(y = 0.5 | xi, 0.1): posterior N(0.25, 0.05).
  const GaussianPrior prior(1, 1, 1.0, 1.0, KernelParams{0.1, 1.0, 1.0}, 0.0);
  const double var0 = prior.covariance(0, 0);
  const double post_var = 1.0 / (1.0 / var0 + 1.0 / 0.1);
  const double post_mean = post_var * 0.5 / 0.1;
  ChainOptions opt;
  opt.steps = 60000;
  opt.beta = 0.6;
  opt.burn_in_fraction = 0.1;
  opt.seed = 31;
  const PotentialFn phi = [](const Eigen::VectorXd& x) { return (0.5 - x[0]) * (0.5 - x[0]) / 0.2; };
  const Chain c = run_chain(phi, prior, Eigen::VectorXd::Zero(1), opt);
  std::vector<double> series;
  for (const auto& s : c.stored) series.push_back(s[0]);
  const double se = batch_means_se(series, 30);
  EXPECT_NEAR(c.mean[0], post_mean, 5.0 * se);
  const PosteriorStats st = posterior_stats(c);
  EXPECT_NEAR(st.std_dev[0], std::sqrt(post_var), 0.05 * std::sqrt(post_var));
  EXPECT_GT(c.acceptance_rate(), 0.2);
  EXPECT_LT(c.acceptance_rate(), 0.95);
}

TEST(Checkpoint, InterruptedChainResumesBitExactly) {
  const GaussianPrior prior(3, 3, 1.0 / 3, 1.0 / 3, KernelParams{0.2, 0.3, 0.3}, 1e-8);
  const PotentialFn phi = [](const Eigen::VectorXd& x) { return 4.0 * (x.array() - 0.3).square().sum(); };
  ChainOptions opt;
  opt.steps = 300;
  opt.beta = 0.3;
  opt.thin = 7;
  opt.seed = 5;
  opt.checkpoint_every = 50;
  opt.checkpoint_path = temp_file("chain_ref.chk");
  const Chain ref = run_chain(phi, prior, Eigen::VectorXd::Zero(9), opt);

  ChainOptions opt2 = opt;
  opt2.checkpoint_path = temp_file("chain_cut.chk");
  Chain cut = start_chain(phi, prior, Eigen::VectorXd::Zero(9), opt2);
  advance_chain(cut, phi, prior, opt2, 230);  // "crash" after step 230; last checkpoint at 200
  const Chain resumed = resume_chain(opt2.checkpoint_path, phi, prior, opt2);

  EXPECT_EQ(resumed.step, ref.step);
  EXPECT_EQ(resumed.accepted, ref.accepted);
  EXPECT_EQ(resumed.current, ref.current);
  EXPECT_EQ(resumed.mean, ref.mean);
  EXPECT_EQ(resumed.m2, ref.m2);
  EXPECT_EQ(resumed.potential_trace, ref.potential_trace);
  EXPECT_EQ(resumed.accept_trace, ref.accept_trace);
  EXPECT_EQ(resumed.stored_step, ref.stored_step);
  EXPECT_EQ(resumed.map_state, ref.map_state);
  ASSERT_EQ(resumed.stored.size(), ref.stored.size());
  for (std::size_t k = 0; k < ref.stored.size(); ++k) EXPECT_EQ(resumed.stored[k], ref.stored[k]);

  ChainOptions changed = opt2;
  changed.beta = 0.31;
  try {
    load_checkpoint(opt2.checkpoint_path, changed);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::checkpoint);
  }
  std::filesystem::resize_file(opt2.checkpoint_path, 40);
  EXPECT_THROW(load_checkpoint(opt2.checkpoint_path, opt2), Error);
  std::filesystem::remove(opt.checkpoint_path);
  std::filesystem::remove(opt2.checkpoint_path);
}

TEST(ChainOptions, ValidationErrorsAreConfigErrors) {
  ChainOptions opt;
  opt.beta = 1.5;
  try {
    opt.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  opt.beta = 0.1;
  opt.checkpoint_every = 10;
  EXPECT_THROW(opt.validate(), Error);
}

TEST(PosteriorStats, WelfordMatchesTwoPassOverKeptStates) {
  const GaussianPrior prior(2, 2, 0.5, 0.5, KernelParams{0.2, 0.3, 0.3}, 1e-8);
  ChainOptions opt;
  opt.steps = 500;
  opt.beta = 0.4;
  opt.seed = 2;
  const PotentialFn phi = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  const Chain c = run_chain(phi, prior, Eigen::VectorXd::Zero(4), opt);
  ASSERT_EQ(static_cast<long>(c.stored.size()), c.kept);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
  for (const auto& s : c.stored) mean += s;
  mean /= static_cast<double>(c.kept);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(4);
  for (const auto& s : c.stored) var.array() += (s - mean).array().square();
  var /= static_cast<double>(c.kept - 1);
  const PosteriorStats st = posterior_stats(c);
  EXPECT_LT((st.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((st.std_dev - var.cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(c.stored_step.front(), opt.burn_in() + 1);
  // MAP is the best accepted (or starting) state of Phi + |xi|^2_Sigma / 2.
  EXPECT_LE(c.map_value, phi(Eigen::VectorXd::Zero(4)) + 1e-15);
  EXPECT_NEAR(c.map_value, phi(c.map_state) + 0.5 * prior.squared_norm(c.map_state), 1e-12);
}

TEST(Quantiles, LinearInterpolationBetweenOrderStatistics) {
  const std::vector<double> s{1.0, 2.0, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(sorted_quantile(s, 1.0), 4.0);
  std::vector<Eigen::VectorXd> draws;
  for (double v : {3.0, 1.0, 4.0, 2.0}) draws.push_back(Eigen::VectorXd::Constant(2, v));
  const auto q = sample_quantiles(draws, {0.25, 0.75});
  EXPECT_DOUBLE_EQ(q[0][1], 1.75);
  EXPECT_DOUBLE_EQ(q[1][0], 3.25);
}

TEST(PredictiveBands, NoiseFreeBandsCoincideAndNoiseWidens) {
  std::vector<Eigen::VectorXd> r;
  for (int k = 0; k < 200; ++k) r.push_back(Eigen::VectorXd::Constant(3, 0.01 * k));
  Rng rng(1);
  const Bands b0 = predict_intervals(r, 0.0, 0.95, rng);
  EXPECT_EQ(b0.lower, b0.predictive_lower);
  EXPECT_EQ(b0.upper, b0.predictive_upper);
  EXPECT_NEAR(b0.median[0], 0.995, 1e-12);
  const Bands b1 = predict_intervals(r, 0.5, 0.95, rng);
  EXPECT_LT(b1.predictive_lower[0], b1.lower[0]);
  EXPECT_GT(b1.predictive_upper[0], b1.upper[0]);
  EXPECT_THROW(predict_intervals(r, 0.1, 1.0, rng), Error);
}
