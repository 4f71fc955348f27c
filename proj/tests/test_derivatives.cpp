#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hmme/hmme.hpp"
#include "oracles.hpp"

using namespace hmme;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

// max |a - b| relative to max |a|, with an absolute guard for all-zero a
double rel_err(const MatrixXd& a, const MatrixXd& b) {
  const double scale = linalg::max_abs(a);
  return linalg::max_abs(a - b) / std::max(scale, 1e-12);
}

MatrixXd random_psd(std::mt19937_64& rng, Index k, double scale) {
  std::normal_distribution<double> normal;
  MatrixXd a(k, k);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  return scale * a * a.transpose() / static_cast<double>(k);
}

double min_eig(const MatrixXd& m) { return linalg::eigen_range(m).first; }

// error relative to the largest entry over a whole family of derivative blocks,
// so blocks that vanish identically are judged against the family scale
double family_err(const MatrixXd& a, const MatrixXd& b, double family_scale) {
  return linalg::max_abs(a - b) / std::max(family_scale, 1e-12);
}

}  // namespace

TEST(InverseDerivative, ScalarReciprocal) {
  // A = 1/x
  const double x = 1.7;
  const MatrixXd a = scalar(1.0 / x);
  const MatrixXd b = scalar(x);
  EXPECT_NEAR(inverse_derivative_1(a, b, scalar(1.0))(0, 0), -1.0 / (x * x), 1e-14);
  EXPECT_NEAR(inverse_derivative_2(a, b, scalar(1.0), scalar(1.0), scalar(0.0))(0, 0), 2.0 / std::pow(x, 3), 1e-14);
  const MatrixXd one = scalar(1.0);
  const MatrixXd zero = scalar(0.0);
  EXPECT_NEAR(inverse_derivative_3(a, b, one, one, one, zero, zero, zero, zero)(0, 0), -6.0 / std::pow(x, 4), 1e-13);
}

TEST(InverseDerivative, ScalarInverseSquare) {
  // A = x^-2, B = x^2: B' = 2x, B'' = 2, B''' = 0
  const double x = 0.8;
  const MatrixXd a = scalar(std::pow(x, -2));
  const MatrixXd b = scalar(x * x);
  const MatrixXd b1 = scalar(2.0 * x);
  const MatrixXd b2 = scalar(2.0);
  const MatrixXd b3 = scalar(0.0);
  EXPECT_NEAR(inverse_derivative_1(a, b, b1)(0, 0), -2.0 * std::pow(x, -3), 1e-12);
  EXPECT_NEAR(inverse_derivative_2(a, b, b1, b1, b2)(0, 0), 6.0 * std::pow(x, -4), 1e-12);
  EXPECT_NEAR(inverse_derivative_3(a, b, b1, b1, b1, b2, b2, b2, b3)(0, 0), -24.0 * std::pow(x, -5), 1e-11);
}

TEST(InverseDerivative, TwoParameterMatrixFamily) {
  // B(t) = B0 + t1 P + t2 Q + t1 t2 R + t1^2 S, third derivative checked by differences of the second
  std::mt19937_64 rng(31);
  const MatrixXd b0 = random_psd(rng, 3, 1.0) + 3.0 * MatrixXd::Identity(3, 3);
  const MatrixXd p = random_psd(rng, 3, 0.3);
  const MatrixXd q = random_psd(rng, 3, 0.3);
  const MatrixXd r = random_psd(rng, 3, 0.2);
  const MatrixXd s = random_psd(rng, 3, 0.2);
  auto b_at = [&](const VectorXd& t) { return MatrixXd(b0 + t(0) * p + t(1) * q + t(0) * t(1) * r + t(0) * t(0) * s); };
  auto second_00 = [&](const VectorXd& t) {
    const MatrixXd b = b_at(t);
    const MatrixXd b_0 = p + t(1) * r + 2.0 * t(0) * s;
    return inverse_derivative_2(b.inverse(), b, b_0, b_0, 2.0 * s);
  };
  auto second_01 = [&](const VectorXd& t) {
    const MatrixXd b = b_at(t);
    return inverse_derivative_2(b.inverse(), b, p + t(1) * r + 2.0 * t(0) * s, q + t(0) * r, r);
  };
  const VectorXd t = (VectorXd(2) << 0.3, -0.2).finished();
  const MatrixXd b = b_at(t);
  const MatrixXd a = b.inverse();
  const MatrixXd b_0 = p + t(1) * r + 2.0 * t(0) * s;
  const MatrixXd b_1 = q + t(0) * r;
  const MatrixXd zero = MatrixXd::Zero(3, 3);
  // d/dt0 of d2A/dt0 dt0 and d/dt1 of the same
  const MatrixXd d000 = inverse_derivative_3(a, b, b_0, b_0, b_0, 2.0 * s, 2.0 * s, 2.0 * s, zero);
  const MatrixXd d001 = inverse_derivative_3(a, b, b_0, b_0, b_1, 2.0 * s, r, r, zero);
  EXPECT_LT(rel_err(d000, oracle::central_diff(second_00, t, 0, 1e-5)), 1e-7);
  EXPECT_LT(rel_err(d001, oracle::central_diff(second_00, t, 1, 1e-5)), 1e-7);
  EXPECT_LT(rel_err(d001, oracle::central_diff(second_01, t, 0, 1e-5)), 1e-7);
}

TEST(InverseDerivative, RejectsInconsistentPair) {
  const MatrixXd b = (MatrixXd(2, 2) << 2, 0, 0, 1).finished();
  try {
    inverse_derivative_1(MatrixXd::Identity(2, 2), b, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InconsistentInverse);
  }
}

TEST(HDerivs, ToyValues) {
  const LmmSpec spec = oracle::toy();
  const auto hd = h_derivs(spec, {1.0, 1.0});
  MatrixXd d1 = MatrixXd::Zero(3, 3);
  d1(1, 1) = d1(2, 2) = -1.0;
  EXPECT_EQ(hd.first(0), d1);
  EXPECT_EQ(hd.first(1), -assemble_h0(spec));
  EXPECT_EQ(hd.second(0, 1), MatrixXd::Zero(3, 3));
  EXPECT_EQ(hd.second(1, 1), 2.0 * assemble_h0(spec));
  EXPECT_EQ(hd.third(0, 0, 0), 6.0 * d1);
}

TEST(HDerivs, MatchFiniteDifferencesOfH) {
  std::mt19937_64 rng(32);
  for (int rep = 0; rep < 10; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto hd = h_derivs(inst.spec, inst.vc);
    auto h_at = [&](const VectorXd& x) { return assemble_h(inst.spec, VarComponents(x)); };
    const VectorXd x = inst.vc.values();
    for (Index i = 0; i <= inst.spec.s(); ++i) {
      EXPECT_LT(rel_err(hd.first(i), oracle::central_diff(h_at, x, i, 1e-5 * x(i))), 1e-7);
      for (Index j = 0; j <= inst.spec.s(); ++j) {
        const MatrixXd fd = oracle::central_diff2(h_at, x, i, j, 1e-3 * x(i), 1e-3 * x(j));
        if (i == j) {
          EXPECT_LT(rel_err(hd.second(i, j), fd), 1e-4);
        } else {
          EXPECT_LT(linalg::max_abs(fd), 1e-6);
        }
      }
    }
  }
}

TEST(CDerivs, ToyFirst) {
  const LmmSpec spec = oracle::toy();
  const VarComponents vc{1.0, 1.0};
  const auto sol = solve_mme(spec, vc);
  const auto hd = h_derivs(spec, vc);
  EXPECT_NEAR(c_first(hd, sol, 0)(0, 0), 0.5, 1e-14);
}

TEST(CDerivs, MatchFiniteDifferences) {
  std::mt19937_64 rng(33);
  for (int rep = 0; rep < 8; ++rep) {
    auto inst = oracle::random_instance(rng, 2);
    const VectorXd x = inst.vc.values();
    auto c_at = [&](const VectorXd& v) { return solve_mme(inst.spec, VarComponents(v)).C; };
    const auto sol = solve_mme(inst.spec, inst.vc);
    const auto hd = h_derivs(inst.spec, inst.vc);
    const Index k = inst.spec.s() + 1;
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;
    for (Index i = 0; i < k; ++i) {
      s1 = std::max(s1, linalg::max_abs(c_first(hd, sol, i)));
      for (Index j = 0; j < k; ++j) {
        s2 = std::max(s2, linalg::max_abs(c_second(hd, sol, i, j)));
        for (Index l = 0; l < k; ++l) s3 = std::max(s3, linalg::max_abs(c_third(inst.spec, hd, sol, i, j, l)));
      }
    }
    for (Index i = 0; i < k; ++i) {
      EXPECT_LT(family_err(c_first(hd, sol, i), oracle::central_diff(c_at, x, i, 1e-5 * x(i)), s1), 1e-6);
      for (Index j = 0; j < k; ++j) {
        auto first_j = [&](const VectorXd& v) {
          return c_first(h_derivs(inst.spec, VarComponents(v)), solve_mme(inst.spec, VarComponents(v)), j);
        };
        EXPECT_LT(family_err(c_second(hd, sol, i, j), oracle::central_diff(first_j, x, i, 1e-4 * x(i)), s2), 1e-6);
        for (Index l = 0; l < k; ++l) {
          auto second_jl = [&](const VectorXd& v) {
            return c_second(h_derivs(inst.spec, VarComponents(v)), solve_mme(inst.spec, VarComponents(v)), j, l);
          };
          EXPECT_LT(family_err(c_third(inst.spec, hd, sol, i, j, l), oracle::central_diff(second_jl, x, i, 1e-4 * x(i)), s3),
                    1e-6);
        }
      }
    }
  }
}

TEST(Bundle, ToyValues) {
  const LmmSpec spec = oracle::toy();
  const auto sol = solve_mme(spec, {1.0, 1.0});
  const auto contrast = ContrastSet::single(VectorXd::Ones(1), VectorXd::Zero(2));
  const auto b = mse_bundle(spec, sol, contrast, MatrixXd::Identity(2, 2));
  EXPECT_NEAR(b.M(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(b.grad[0](0, 0), 0.5, 1e-14);
  EXPECT_NEAR(b.grad[1](0, 0), 0.5, 1e-14);
  EXPECT_EQ(b.lambda_block(0).rows(), 1);
  EXPECT_EQ(b.lambda_block(1).rows(), 2);
}

TEST(Bundle, GradientAndHessianMatchFiniteDifferences) {
  std::mt19937_64 rng(34);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto contrast = oracle::random_contrast(rng, inst.spec, 1 + rep % 3);
    const MatrixXd lam = contrast.Lambda();
    const VectorXd x = inst.vc.values();
    auto m_at = [&](const VectorXd& v) { return oracle::mse_at(inst.spec, v, lam); };
    const auto sol = solve_mme(inst.spec, inst.vc);
    const Index k = inst.spec.s() + 1;
    const auto b = mse_bundle(inst.spec, sol, contrast, MatrixXd::Zero(k, k));
    double hess_scale = 0.0;
    for (const auto& row : b.hess) {
      for (const auto& h : row) hess_scale = std::max(hess_scale, linalg::max_abs(h));
    }
    for (Index i = 0; i < k; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      EXPECT_LT(rel_err(b.grad[ui], oracle::central_diff(m_at, x, i, 1e-5 * x(i))), 1e-6) << "rep " << rep;
      for (Index j = 0; j < k; ++j) {
        const MatrixXd fd = oracle::central_diff2(m_at, x, i, j, 1e-3 * x(i), 1e-3 * x(j));
        EXPECT_LT(family_err(b.hess[ui][static_cast<std::size_t>(j)], fd, hess_scale), 1e-4) << "rep " << rep;
      }
    }
  }
}

TEST(Bundle, GradientIsPsd) {
  std::mt19937_64 rng(35);
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto contrast = oracle::random_contrast(rng, inst.spec, 2);
    for (const auto& g : mse_gradient(inst.spec, solve_mme(inst.spec, inst.vc), contrast.Lambda())) {
      EXPECT_GE(min_eig(g), -1e-10 * (1.0 + linalg::max_abs(g)));
    }
  }
}

TEST(Bundle, ZeroSigmaGivesNoCorrection) {
  std::mt19937_64 rng(36);
  auto inst = oracle::random_instance(rng);
  const auto contrast = oracle::random_contrast(rng, inst.spec, 2);
  const Index k = inst.spec.s() + 1;
  const auto b = mse_bundle(inst.spec, solve_mme(inst.spec, inst.vc), contrast, MatrixXd::Zero(k, k));
  EXPECT_EQ(b.m_delta, MatrixXd::Zero(2, 2));
}

TEST(Bundle, RouteEquivalenceAndPsdCorrection) {
  std::mt19937_64 rng(37);
  for (int rep = 0; rep < 40; ++rep) {
    auto inst = oracle::random_instance(rng);
    const Index k = inst.spec.s() + 1;
    const auto contrast = oracle::random_contrast(rng, inst.spec, 1 + rep % 3);
    const MatrixXd sigma = random_psd(rng, k, 0.5);
    const auto sol = solve_mme(inst.spec, inst.vc);
    const auto b = mse_bundle(inst.spec, sol, contrast, sigma);
    MatrixXd via_hess = MatrixXd::Zero(contrast.q(), contrast.q());
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < k; ++j) via_hess += sigma(i, j) * b.hess[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    EXPECT_LT(linalg::max_abs(b.m_delta + 0.5 * via_hess), 1e-9 * (1.0 + linalg::max_abs(b.m_delta)));
    EXPECT_GE(min_eig(b.m_delta), -1e-10);
    EXPECT_TRUE(cross_derivative_identity_check(inst.spec, sol, contrast));
  }
}

TEST(Bundle, CrossIdentityToyAndScaled) {
  const LmmSpec spec = oracle::toy();
  const auto contrast = ContrastSet::single(VectorXd::Ones(1), (VectorXd(2) << 1, -1).finished());
  for (double c : {1.0, 1e-2, 1e2}) {
    EXPECT_TRUE(cross_derivative_identity_check(spec, solve_mme(spec, {c, 2.0 * c}), contrast)) << c;
  }
}

TEST(CorrectionBlocks, MatchCovarianceOfDerivativeOracle) {
  std::mt19937_64 rng(38);
  for (int rep = 0; rep < 25; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto contrast = oracle::random_contrast(rng, inst.spec, 1 + rep % 2);
    const auto cc = correction_blocks(inst.spec, solve_mme(inst.spec, inst.vc), contrast);
    const auto ref = oracle::covariance_blocks(inst.spec, inst.vc, contrast.Lambda());
    for (std::size_t i = 0; i < cc.size(); ++i) {
      for (std::size_t j = 0; j < cc.size(); ++j) {
        EXPECT_LT(linalg::max_abs(cc[i][j] - ref[i][j]), 1e-9 * (1.0 + linalg::max_abs(ref[i][j])));
      }
    }
  }
}

TEST(CorrectionBlocks, ChvcIsCovarianceOfMmeSolution) {
  // cov of (b~, u~ - u) under the model: C A'R^-1 V R^-1 A C corrected for u, giving blockdiag(C11, G - C22) for var(b~, u~)
  std::mt19937_64 rng(39);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_instance(rng);
    const auto& spec = inst.spec;
    const auto sol = solve_mme(spec, inst.vc);
    MatrixXd a(spec.n(), spec.p() + spec.r());
    a << spec.X(), spec.Z();
    const double se = inst.vc.error_variance();
    // (b~, u~) = C A'y / se; y - Xb ~ N(0, V), so the covariance is C A'VA C / se^2
    const MatrixXd cov = sol.C * a.transpose() * oracle::dense_v(spec, inst.vc) * a * sol.C / (se * se);
    const MatrixXd q = detail::chvc(spec, sol);
    const Index p = spec.p();
    EXPECT_LT(linalg::max_abs(cov.topLeftCorner(p, p) - q.topLeftCorner(p, p)), 1e-9 * (1.0 + linalg::max_abs(cov)));
    EXPECT_LT(linalg::max_abs(cov.bottomRightCorner(spec.r(), spec.r()) - q.bottomRightCorner(spec.r(), spec.r())),
              1e-9 * (1.0 + linalg::max_abs(cov)));
    EXPECT_LT(linalg::max_abs(cov.topRightCorner(p, spec.r())), 1e-9 * (1.0 + linalg::max_abs(cov)));
  }
}

TEST(Bundle, RejectsBadSigma) {
  const LmmSpec spec = oracle::toy();
  const auto sol = solve_mme(spec, {1.0, 1.0});
  const auto contrast = ContrastSet::single(VectorXd::Ones(1), VectorXd::Zero(2));
  EXPECT_THROW(mse_bundle(spec, sol, contrast, MatrixXd::Identity(3, 3)), Error);
  EXPECT_THROW(mse_bundle(spec, sol, contrast, (MatrixXd(2, 2) << 1, 0.5, 0, 1).finished()), Error);
}
