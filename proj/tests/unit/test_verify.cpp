#include <doctest.h>

#include "helpers.hpp"
#include "precondlab/verify.hpp"

using namespace precondlab;

TEST_SUITE("verify") {

TEST_CASE("random_orthogonal is orthogonal") {
    const auto o = verify::random_orthogonal(7, 3);
    CHECK((o.transpose() * o - Eigen::MatrixXd::Identity(7, 7)).norm() < 1e-12);
}

TEST_CASE("trajectory invariance: identity rotation is exact, random rotations within 1e-8") {
    verify::InvarianceSetup s;
    s.p = -1.0;
    s.identity_rotation = true;
    const auto same = verify::train_trajectory_invariance(s);
    CHECK(same.passed);
    CHECK(same.deviation == 0.0);
    for (double p : {0.0, -1.0}) {
        verify::InvarianceSetup r;
        r.p = p;
        r.seed = 5;
        const auto rep = verify::train_trajectory_invariance(r);
        CHECK(rep.passed);
        CHECK(rep.deviation < 1e-8);
    }
}

TEST_CASE("test-point invariance: zero input and random input") {
    verify::InvarianceSetup s;
    s.p = -0.5;
    s.seed = 2;
    for (const auto& r : verify::test_point_invariance(s, Eigen::VectorXd::Zero(s.d_x))) {
        CHECK(r.passed);
        if (r.name == "test_point_invariance") CHECK(r.deviation == 0.0);
    }
    const Eigen::VectorXd x = testutil::gaussian(s.d_x, 1, 4);
    for (const auto& r : verify::test_point_invariance(s, x)) {
        CHECK(r.passed);
        CHECK(r.deviation < 1e-8);
    }
}

TEST_CASE("spectral identities, Hessian structure and gradient suite pass") {
    const auto id = verify::spectral_identity_checks({-1.0, 0.0, 0.5}, 3, 1);
    CHECK(verify::all_passed(id));
    const auto hs = verify::hessian_structure_check(3, 2);
    CHECK(verify::all_passed(hs));
    const auto gs = verify::gradient_suite(4, 3);
    CHECK(verify::all_passed(gs));
}

TEST_CASE("all_passed and the report writer") {
    std::vector<verify::CheckReport> r{{"a", "0", true, 0.0, 1.0}, {"b", "1", false, 2.0, 1.0}};
    CHECK_FALSE(verify::all_passed(r));
    r.pop_back();
    CHECK(verify::all_passed(r));
}

}
