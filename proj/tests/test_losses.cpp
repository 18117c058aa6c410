#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "streamkd/errors.hpp"
#include "streamkd/losses.hpp"
#include "streamkd/rng.hpp"

using namespace streamkd;

namespace {

// scalar central-difference oracle, independent of any analytic gradient
double fd(const std::function<double(double)>& f, double z, double h = 1e-6) {
  return (f(z + h) - f(z - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("task loss: pinned values") {
  LossValue a = task_loss(std::log(3.0), 0.0);
  CHECK(a.value == doctest::Approx(1.3862943611198906).epsilon(1e-12));  // ln 4
  CHECK(a.dL_dz == doctest::Approx(0.75).epsilon(1e-12));

  LossValue b = task_loss(0.0, 1.0);
  CHECK(b.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(b.dL_dz == doctest::Approx(-0.5).epsilon(1e-12));

  CHECK_THROWS_AS(task_loss(0.0, 0.5), config_error);
}

TEST_CASE("task loss gradient matches finite differences over a grid") {
  for (double z = -8.0; z <= 8.0; z += 0.37) {
    for (double y : {0.0, 1.0}) {
      double analytic = task_loss(z, y).dL_dz;
      double numeric = fd([y](double zz) { return task_loss(zz, y).value; }, z);
      CHECK(std::abs(analytic - numeric) <= 1e-6);
    }
  }
}

TEST_CASE("distill_ce: saturated teacher target is clamped") {
  LossValue l = distill_ce(1.0, 0.0);
  CHECK(l.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(l.dL_dz == doctest::Approx(0.5 - (1.0 - 1e-7)).epsilon(1e-9));
}

TEST_CASE("distill_ce gradient equals student-minus-teacher probability on a 400-point grid") {
  int points = 0;
  for (double zs = -10.0; zs <= 10.0; zs += 1.0) {
    for (double zt = -9.5; zt <= 9.5; zt += 1.0) {
      double pt = sigmoid(zt);
      double expected = sigmoid(zs) - pt;  // recomputed independently of the loss
      CHECK(std::abs(distill_ce(pt, zs).dL_dz - expected) <= 1e-12);
      ++points;
    }
  }
  CHECK(points >= 400);
}

TEST_CASE("distill_kl: pinned value and finite-difference gradients") {
  // independent oracle: p ln(p/q) + (1-p) ln((1-p)/(1-q)) at p = sigmoid(2), q = 1/2
  LossValue l = distill_kl(2.0, 0.0, 1.0);
  CHECK(l.value == doctest::Approx(0.3278133254727375).epsilon(1e-12));

  for (double tau : {0.5, 1.0, 2.0}) {
    for (double zs = -4.0; zs <= 4.0; zs += 0.63) {
      double analytic = distill_kl(1.3, zs, tau).dL_dz;
      double numeric = fd([tau](double z) { return distill_kl(1.3, z, tau).value; }, zs);
      CHECK(std::abs(analytic - numeric) <= 1e-6);
    }
  }
  CHECK_THROWS_AS(distill_kl(0.0, 0.0, 0.0), config_error);
  CHECK_THROWS_AS(distill_kl(0.0, 0.0, -1.0), config_error);
}

TEST_CASE("distill_kl at tau=1 reproduces the cross-entropy gradient exactly") {
  for (double zs = -10.0; zs <= 10.0; zs += 0.5) {
    for (double zt = -10.0; zt <= 10.0; zt += 0.5) {
      double g_kl = distill_kl(zt, zs, 1.0).dL_dz;
      double g_ce = distill_ce(sigmoid(zt), zs).dL_dz;
      CHECK(std::abs(g_kl - g_ce) <= 1e-12);
    }
  }
}

TEST_CASE("distill_mse gradient vanishes at saturated student outputs") {
  double z_sat = std::log((1.0 - 1e-6) / 1e-6);  // student probability 1 - 1e-6
  LossValue mse = distill_mse(0.5, z_sat);
  CHECK(std::abs(mse.dL_dz) < 5e-7);

  // cross entropy keeps a usable gradient at the same point: ratio 1/(p(1-p)) >= 4
  LossValue ce = distill_ce(0.5, z_sat);
  CHECK(std::abs(ce.dL_dz) / std::abs(mse.dL_dz) >= 4.0);

  for (double zs = -6.0; zs <= 6.0; zs += 0.41) {
    double analytic = distill_mse(0.3, zs).dL_dz;
    double numeric = fd([](double z) { return distill_mse(0.3, z).value; }, zs);
    CHECK(std::abs(analytic - numeric) <= 1e-6);
  }
}

TEST_CASE("debias: pinned correction values") {
  DebiasParams two;  // negatives downsampled 2:1, everything else neutral
  two.r_s = 2.0;
  CHECK(debias(std::log(9.0), two) == doctest::Approx(9.0 / 11.0).epsilon(1e-12));

  DebiasParams d;
  d.r_s = 4.0;
  d.p_x = 0.8;
  CHECK(teacher_rebias(0.0, d) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("debias at the identity configuration is exactly sigmoid") {
  DebiasParams id = DebiasParams::identity();
  CHECK(id.is_identity());
  for (double z = -10.0; z <= 10.0; z += 0.01) {
    CHECK(std::abs(debias(z, id) - sigmoid(z)) <= 1e-12);
  }
}

TEST_CASE("debias is monotone in z, bounded in (0,1), and decreasing in b_s") {
  Rng rng(4711);
  for (int trial = 0; trial < 200; ++trial) {
    DebiasParams d;
    d.r_s = rng.uniform(1.0, 20.0);
    d.p_x = rng.uniform(0.3, 1.0);
    d.r_plus = rng.uniform(0.3, 1.0);
    d.b_s = rng.uniform(0.0, 0.5);
    d.validate();
    double prev = -1.0;
    for (double z = -30.0; z <= 30.0; z += 1.5) {
      double y = debias(z, d);
      CHECK(y > 0.0);
      CHECK(y < 1.0);
      CHECK(y > prev);
      prev = y;
      // larger slack shifts the corrected probability down
      DebiasParams harder = d;
      harder.b_s = d.b_s + 0.25;
      CHECK(debias(z, harder) < y);
      // derivative agrees with finite differences
      double numeric = fd([&d](double zz) { return debias(zz, d); }, z);
      CHECK(std::abs(debias_dprob_dz(z, d) - numeric) <= 1e-6);
    }
  }
}

TEST_CASE("debias rejects out-of-range parameters") {
  DebiasParams d;
  d.r_s = 0.5;
  CHECK_THROWS_AS(d.validate(), config_error);
  d = {};
  d.p_x = 0.0;
  CHECK_THROWS_AS(d.validate(), config_error);
  d = {};
  d.b_s = -0.1;
  CHECK_THROWS_AS(d.validate(), config_error);
  d = {};
  d.r_plus = 1.5;
  CHECK_THROWS_AS(d.validate(), config_error);
}

TEST_CASE("corrected-space distillation: gradients match finite differences") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    DebiasParams d;
    d.r_s = rng.uniform(1.0, 12.0);
    d.p_x = rng.uniform(0.5, 1.0);
    d.r_plus = rng.uniform(0.5, 1.0);
    d.b_s = rng.uniform(0.0, 0.3);
    double t1 = rng.uniform(-5.0, 5.0);
    double s1 = rng.uniform(-5.0, 5.0);
    for (DistillMetric metric : {DistillMetric::ce, DistillMetric::mse}) {
      double analytic = kd_debias_loss(t1, s1, d, metric).dL_dz;
      double numeric =
          fd([&](double z) { return kd_debias_loss(t1, z, d, metric).value; }, s1);
      CHECK(std::abs(analytic - numeric) <= 1e-6);
    }
  }
}

TEST_CASE("corrected-space distillation at identity config reduces to distill_ce") {
  DebiasParams id = DebiasParams::identity();
  for (double t1 = -6.0; t1 <= 6.0; t1 += 0.7) {
    for (double s1 = -6.0; s1 <= 6.0; s1 += 0.7) {
      LossValue a = kd_debias_loss(t1, s1, id, DistillMetric::ce);
      LossValue b = distill_ce(sigmoid(t1), s1);
      CHECK(std::abs(a.value - b.value) <= 1e-12);
      CHECK(std::abs(a.dL_dz - b.dL_dz) <= 1e-12);
    }
  }
}

TEST_CASE("target built from the matching config coincides; a mismatched config differs") {
  DebiasParams student;
  student.r_s = 2.0;
  DebiasParams teacher;
  teacher.r_s = 10.0;
  double t1 = 1.7, s1 = -0.4;

  LossValue through = kd_debias_loss(t1, s1, student, DistillMetric::ce);
  LossValue same = kd_debias_loss_target(debias(t1, student), s1, student, DistillMetric::ce);
  CHECK(through.value == same.value);
  CHECK(through.dL_dz == same.dL_dz);

  LossValue crossed = kd_debias_loss_target(debias(t1, teacher), s1, student, DistillMetric::ce);
  CHECK(std::abs(crossed.value - through.value) > 1e-3);
}

TEST_CASE("alpha alignment: ratio, clamping, empty windows") {
  CHECK(align_alpha({0.7}, {0.007}) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(align_alpha({0.5, 0.9}, {0.7}) == 1.0);        // clamp from below
  CHECK(align_alpha({1.0}, {1e-12}) == 1000.0);        // clamp from above
  CHECK(align_alpha({1.0}, {0.0}) == 1000.0);          // epsilon guard
  CHECK_THROWS_AS(align_alpha({}, {1.0}), config_error);
  CHECK_THROWS_AS(align_alpha({1.0}, {}), config_error);
}

TEST_CASE("combined loss is task plus alpha times distill in value and gradient") {
  LossValue t{1.25, -0.5};
  LossValue d{0.04, 0.2};
  LossValue c = combined_loss(t, d, 30.0);
  CHECK(c.value == doctest::Approx(1.25 + 30.0 * 0.04).epsilon(1e-15));
  CHECK(c.dL_dz == doctest::Approx(-0.5 + 30.0 * 0.2).epsilon(1e-15));
  CHECK_THROWS_AS(combined_loss(t, d, -1.0), config_error);
}

TEST_CASE("Monte Carlo: correction recovers true posteriors under negative downsampling") {
  // For each downsampling ratio, simulate keep-1-in-r_s thinning of negatives
  // from populations with known posteriors, estimate the biased posterior
  // empirically, correct it, and compare against the truth.
  Rng rng(20260819);
  std::vector<double> posteriors = {0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.9};
  for (double rs : {1.0, 2.0, 5.0, 10.0}) {
    DebiasParams d;
    d.r_s = rs;
    double abs_err_sum = 0.0;
    for (double p : posteriors) {
      long long kept_pos = 0, kept_neg = 0;
      const int n = 250000 / 8;  // ~1e6 label draws per ratio overall
      for (int i = 0; i < n * 8 / static_cast<int>(posteriors.size()); ++i) {
        bool positive = rng.chance(p);
        if (positive)
          ++kept_pos;
        else if (rng.chance(1.0 / rs))
          ++kept_neg;
      }
      double biased = static_cast<double>(kept_pos) / static_cast<double>(kept_pos + kept_neg);
      double z = std::log(biased / (1.0 - biased));
      abs_err_sum += std::abs(debias(z, d) - p);
    }
    double mae = abs_err_sum / static_cast<double>(posteriors.size());
    CHECK(mae <= 0.01);
  }
}

TEST_CASE("Monte Carlo: pinned example at posterior 0.9 under 2:1 downsampling") {
  Rng rng(7);
  long long kept_pos = 0, kept_neg = 0;
  for (int i = 0; i < 1000000; ++i) {
    if (rng.chance(0.9))
      ++kept_pos;
    else if (rng.chance(0.5))
      ++kept_neg;
  }
  double biased = static_cast<double>(kept_pos) / static_cast<double>(kept_pos + kept_neg);
  double z = std::log(biased / (1.0 - biased));
  DebiasParams d;
  d.r_s = 2.0;
  CHECK(std::abs(debias(z, d) - 0.9) <= 0.01);
}
