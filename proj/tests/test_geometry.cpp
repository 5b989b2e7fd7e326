/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include <Eigen/LU>

#include "wheelcal/geometry.hpp"

using namespace wheelcal;

namespace {

Pose2D random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> xy(-5.0, 5.0), th(-8.0, 8.0);
  return Pose2D(xy(rng), xy(rng), th(rng));
}

}  // namespace

TEST_CASE("oplus identity cases") {
  const Pose2D a(0.3, -1.2, 0.7);
  const Pose2D id;
  CHECK(approx_equal(oplus(a, id), a, 1e-15));
  CHECK(approx_equal(oplus(id, a), a, 1e-15));
}

TEST_CASE("oplus hand-evaluated composition") {
  // (1,0,pi/2) (+) (1,0,0) = (1,1,pi/2)
  const Pose2D r = oplus(Pose2D(1, 0, kPi / 2), Pose2D(1, 0, 0));
  CHECK(r.x == Catch::Approx(1.0).margin(1e-12));
  CHECK(r.y == Catch::Approx(1.0).margin(1e-12));
  CHECK(r.theta == Catch::Approx(kPi / 2).margin(1e-12));
}

TEST_CASE("ominus basic cases") {
  CHECK(approx_equal(ominus(Pose2D()), Pose2D(), 1e-15));
  CHECK(approx_equal(ominus(Pose2D(1, 0, 0)), Pose2D(-1, 0, 0), 1e-15));
  CHECK(approx_equal(ominus(Pose2D(0, 0, kPi / 2)), Pose2D(0, 0, -kPi / 2), 1e-15));
}

TEST_CASE("relative_pose cases") {
  const Pose2D a(1, 1, kPi / 2);
  CHECK(approx_equal(relative_pose(a, a), Pose2D(), 1e-12));
  const Pose2D b(0.4, 2.0, -1.0);
  CHECK(approx_equal(relative_pose(Pose2D(), b), b, 1e-12));
  CHECK(approx_equal(relative_pose(Pose2D(1, 1, kPi / 2), Pose2D(1, 2, kPi / 2)),
                     Pose2D(1, 0, 0), 1e-12));
}

TEST_CASE("group properties on random poses") {
  std::mt19937_64 rng(12345);
  for (int i = 0; i < 1000; ++i) {
    const Pose2D a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(approx_equal(oplus(oplus(a, b), c), oplus(a, oplus(b, c)), 1e-10));
    CHECK(approx_equal(oplus(ominus(a), a), Pose2D(), 1e-12));
    CHECK(approx_equal(ominus(ominus(a)), a, 1e-12));
  }
}

TEST_CASE("results always have wrapped angles") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> big(-50.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    const Pose2D a(big(rng), big(rng), big(rng));
    const Pose2D b(big(rng), big(rng), big(rng));
    const Pose2D r = oplus(a, b);
    CHECK(r.theta > -kPi);
    CHECK(r.theta <= kPi);
    const Pose2D s = ominus(a);
    CHECK(s.theta > -kPi);
    CHECK(s.theta <= kPi);
  }
  CHECK(wrap_angle(kPi) == Catch::Approx(kPi));
  CHECK(wrap_angle(-kPi) == Catch::Approx(kPi));
  CHECK(wrap_angle(3 * kPi) == Catch::Approx(kPi));
}

TEST_CASE("Rot2 stays orthonormal") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> th(-10.0, 10.0);
  for (int i = 0; i < 200; ++i) {
    const Rot2 r(th(rng));
    const Mat2 m = r.matrix();
    CHECK((m.transpose() * m - Mat2::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.determinant() == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("non-finite pose components are rejected") {
  CHECK_THROWS_AS(Pose2D(std::nan(""), 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(Pose2D(0, INFINITY, 0), std::invalid_argument);
}
