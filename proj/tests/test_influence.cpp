#include "test_util.hpp"

#include "groupinfluence/bench.hpp"
#include "groupinfluence/influence.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gi;
using gitest::random_dataset;
using gitest::random_vector;
using gitest::two_point_fixture;

namespace {

TrainConfig tight_cfg() {
    TrainConfig cfg;
    cfg.grad_tol = 1e-12;
    cfg.cg_tol = 1e-12;
    return cfg;
}

Dataset equal_curvature_pair() {
    Dataset d;
    d.features.resize(2, 1);
    d.features << 1.0, 1.0;
    d.labels.resize(2);
    d.labels << 0.0, 2.0;
    return d;
}

}  // namespace

TEST_CASE("two-point quadratic fixture: theta1, theta2, delta") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = two_point_fixture();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    CHECK(tm.theta_star[0] == Catch::Approx(2.0 / 3.0).margin(1e-12));

    GroupSpec U = GroupSpec::of({0});
    Vector t1 = theta1(tm, data, U, cfg);
    CHECK(t1[0] == Catch::Approx(-8.0 / 9.0).margin(1e-10));
    Vector t2 = theta2(tm, data, U, t1, cfg);
    CHECK(t2[0] == Catch::Approx(8.0 / 27.0).margin(1e-10));
    Vector delta = predict_removal_delta_theta(tm, data, U, cfg);
    CHECK(delta[0] == Catch::Approx(32.0 / 27.0).margin(1e-10));

    // exact retraining: remove sample 0 -> theta = 2, true delta = 4/3
    Vector w(2);
    w << 0.0, 2.0;
    TrainedModel retrained = train(quad, data, std::optional<Vector>(w), cfg);
    CHECK(retrained.theta_star[0] - tm.theta_star[0] == Catch::Approx(4.0 / 3.0).margin(1e-10));
    // second-order error 0.148 < first-order error 0.444
    CHECK(std::abs(32.0 / 27.0 - 4.0 / 3.0) < std::abs(8.0 / 9.0 - 4.0 / 3.0));
}

TEST_CASE("two-point fixture: test-loss influence and terms") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = two_point_fixture();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    GroupSpec U = GroupSpec::of({0});

    // test point with unit gradient: quadratic loss (1/2)(theta - y_t)^2,
    // y_t = theta* - 1
    Sample zt;
    zt.x = Vector::Ones(1);
    zt.y = tm.theta_star[0] - 1.0;

    CHECK(test_loss_influence(tm, data, U, zt, InfluenceOrder::first, cfg) ==
          Catch::Approx(8.0 / 9.0).margin(1e-10));
    CHECK(test_loss_influence(tm, data, U, zt, InfluenceOrder::second, cfg) ==
          Catch::Approx(32.0 / 27.0).margin(1e-10));

    auto [term1, term2] = term_decomposition(tm, data, U, zt, cfg);
    CHECK(term1 == Catch::Approx(0.0).margin(1e-12));  // p = 1/2 zeroes Term1
    CHECK(term1 + term2 == Catch::Approx(32.0 / 27.0).margin(1e-10));
}

TEST_CASE("equal-curvature pair: series is exact") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = equal_curvature_pair();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    CHECK(tm.theta_star[0] == Catch::Approx(1.0).margin(1e-12));

    GroupSpec U = GroupSpec::of({0});
    Vector t1 = theta1(tm, data, U, cfg);
    CHECK(t1[0] == Catch::Approx(-1.0).margin(1e-10));
    // identical per-sample curvature makes theta2 vanish
    CHECK(theta2(tm, data, U, t1, cfg).norm() <= 1e-10);
    CHECK(predict_removal_delta_theta(tm, data, U, cfg)[0] ==
          Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("empty and full groups") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = equal_curvature_pair();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);

    GroupSpec empty;
    CHECK(theta1(tm, data, empty, cfg).norm() == 0.0);
    CHECK(theta2(tm, data, empty, Vector::Zero(1), cfg).norm() == 0.0);
    Sample zt{Vector::Ones(1), 0.0};
    auto [a, b] = term_decomposition(tm, data, empty, zt, cfg);
    CHECK(a == 0.0);
    CHECK(b == 0.0);

    CHECK_THROWS_AS(theta1(tm, data, GroupSpec::of({0, 1}), cfg), DimensionError);
}

TEST_CASE("zero test gradient zeroes every order") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = two_point_fixture();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    Sample zt{Vector::Ones(1), tm.theta_star[0]};  // at its own minimum
    GroupSpec U = GroupSpec::of({0});
    for (auto order :
         {InfluenceOrder::first, InfluenceOrder::second, InfluenceOrder::first_unscaled})
        CHECK(test_loss_influence(tm, data, U, zt, order, cfg) ==
              Catch::Approx(0.0).margin(1e-12));
    CHECK(individual_influence(tm, data, 0, zt, cfg) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("first vs first_unscaled ratio at p = 1/2") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = two_point_fixture();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    Sample zt{Vector::Ones(1), tm.theta_star[0] - 1.0};
    GroupSpec U = GroupSpec::of({0});
    double f = test_loss_influence(tm, data, U, zt, InfluenceOrder::first, cfg);
    double fu = test_loss_influence(tm, data, U, zt, InfluenceOrder::first_unscaled, cfg);
    CHECK(f / fu == Catch::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("individual influence hand value and coincidence with first_unscaled") {
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    Dataset data = equal_curvature_pair();
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);
    Sample zt{Vector::Ones(1), tm.theta_star[0] - 1.0};
    CHECK(individual_influence(tm, data, 0, zt, cfg) == Catch::Approx(0.5).margin(1e-10));

    // for |U| = 1, first_unscaled equals the individual influence
    GroupSpec U = GroupSpec::of({0});
    CHECK(test_loss_influence(tm, data, U, zt, InfluenceOrder::first_unscaled, cfg) ==
          Catch::Approx(individual_influence(tm, data, 0, zt, cfg)).margin(1e-10));
}

TEST_CASE("decomposition identity on random logistic problems") {
    gi::Rng rng("decomp", 100);
    TrainConfig cfg = tight_cfg();
    cfg.grad_tol = 1e-10;
    for (int rep = 0; rep < 20; ++rep) {
        int m = 20 + int(rng.below(181));
        int d = 2 + int(rng.below(9));
        Dataset data = random_dataset(rng, m, d, LossFamily::binary_logistic);
        LossModel model{LossFamily::binary_logistic, 0.1, 0.0};
        TrainedModel tm = train(model, data, cfg);

        double p = 0.1 + 0.5 * rng.uniform();
        int size = std::max(1, std::min(m - 1, int(p * m)));
        std::vector<int> idx;
        for (int i = 0; i < size; ++i) idx.push_back(i);
        GroupSpec U = GroupSpec::of(idx);
        Sample zt = sample_at(data, Eigen::Index(rng.below(std::uint64_t(m))));

        // both sides via exact dense solves
        Matrix H = gitest::dense_hessian(model, data, tm.theta_star);
        Vector gU = Vector::Zero(d);
        Matrix HU = Matrix::Zero(d, d);
        for (int i : U.indices) {
            gU += per_sample_gradient(model, data, tm.theta_star, i);
            Vector e = Vector::Zero(d);
            for (int j = 0; j < d; ++j) {
                e[j] = 1.0;
                HU.col(j) += per_sample_hvp(model, data, tm.theta_star, i, e);
                e[j] = 0.0;
            }
        }
        // each sample carries its share of the regularizer
        gU += double(size) * model.l2_strength * tm.theta_star;
        HU += double(size) * model.l2_strength * Matrix::Identity(d, d);
        double pp = U.fraction(m);
        auto lu = H.partialPivLu();
        Vector Hi_gU = lu.solve(gU);
        Vector t1 = (-1.0 / (m * (1.0 - pp))) * Hi_gU;
        Vector t2 = (pp / (1.0 - pp)) * (t1 - lu.solve((HU * t1) / double(size)));
        Vector gt = sample_gradient(model, data, tm.theta_star, zt.x, zt.y);
        double series = gt.dot(-t1 + t2);

        double c1 = (1.0 / m) * (1.0 - 2.0 * pp) / ((1.0 - pp) * (1.0 - pp));
        double c2 = 1.0 / ((1.0 - pp) * (1.0 - pp) * double(m) * double(m));
        double term1 = c1 * gt.dot(Hi_gU);
        double term2 = c2 * lu.solve(gt).dot(HU * Hi_gU);
        double scale = std::max({std::abs(series), std::abs(term1) + std::abs(term2), 1e-9});
        CHECK(std::abs(term1 + term2 - series) <= 1e-6 * scale);

        // and the CG implementation agrees with the dense route
        auto [i1, i2] = term_decomposition(tm, data, U, zt, cfg);
        CHECK(std::abs(i1 + i2 - series) <= 1e-6 * scale);
    }
}

TEST_CASE("quadratic-exactness: equal curvatures make the series exact") {
    gi::Rng rng("qexact", 55);
    // identical x rows, lambda = 0 -> all per-sample Hessians equal
    int m = 10;
    Dataset data;
    data.features = Matrix::Ones(m, 1);
    data.labels = random_vector(rng, m);
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    TrainConfig cfg = tight_cfg();
    TrainedModel tm = train(quad, data, cfg);

    GroupSpec U = GroupSpec::of({1, 4, 7});
    Vector pred = predict_removal_delta_theta(tm, data, U, cfg);

    Vector w = Vector::Constant(m, double(m) / double(m - U.size()));
    for (int i : U.indices) w[i] = 0.0;
    TrainedModel retrained = train(quad, data, std::optional<Vector>(w), cfg);
    Vector truth = retrained.theta_star - tm.theta_star;
    CHECK((pred - truth).norm() <= 1e-8);
}

TEST_CASE("second order dominates first order on random ridge problems") {
    gi::Rng rng("ridge-dom", 2024);
    TrainConfig cfg = tight_cfg();
    int wins = 0, total = 0;
    for (int rep = 0; rep < 50; ++rep) {
        int m = 10 + int(rng.below(91));
        int d = 1 + int(rng.below(5));
        Dataset data = random_dataset(rng, m, d, LossFamily::quadratic);
        LossModel model{LossFamily::quadratic, 0.1, 0.0};
        TrainedModel tm = train(model, data, cfg);

        int size = 1 + int(rng.below(std::uint64_t(std::max(1, m / 2))));
        auto groups = sample_groups(data, size, 1, GroupMode::random, rng.next_u64());
        const GroupSpec& U = groups[0];

        Vector t1 = theta1(tm, data, U, cfg);
        Vector first = -t1;
        Vector second = -t1 + theta2(tm, data, U, t1, cfg);

        Vector w = Vector::Constant(m, double(m) / double(m - U.size()));
        for (int i : U.indices) w[i] = 0.0;
        Vector truth = train(model, data, std::optional<Vector>(w), cfg).theta_star -
                       tm.theta_star;
        if ((second - truth).norm() <= (first - truth).norm() + 1e-12) ++wins;
        ++total;
    }
    CHECK(double(wins) / double(total) >= 0.95);
}

TEST_CASE("theta2 scales like p/(1-p) for small groups") {
    // duplicate a sample so per-group terms stay fixed while p shrinks
    LossModel quad{LossFamily::quadratic, 0.0, 0.0};
    TrainConfig cfg = tight_cfg();
    std::vector<double> norms;
    for (int m : {10, 100, 1000}) {
        Dataset data;
        data.features.resize(m, 1);
        data.labels.resize(m);
        data.features(0, 0) = std::sqrt(2.0);
        data.labels[0] = 0.0;
        for (int i = 1; i < m; ++i) {
            data.features(i, 0) = 1.0;
            data.labels[i] = 2.0;
        }
        TrainedModel tm = train(quad, data, cfg);
        GroupSpec U = GroupSpec::of({0});
        Vector t1 = theta1(tm, data, U, cfg);
        Vector t2 = theta2(tm, data, U, t1, cfg);
        double p = U.fraction(m);
        // normalize out theta1 to isolate the p/(1-p) factor
        norms.push_back(t2.norm() / t1.norm() / (p / (1 - p)));
    }
    // the normalized ratio stays bounded as p -> 0 (theta2 -> 0 like p)
    for (double r : norms) CHECK(r < 2.0);
    CHECK(norms.back() > 0.0);
}
