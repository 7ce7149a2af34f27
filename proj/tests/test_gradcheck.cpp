#include "doctest.h"
#include "glims/gradcheck.hpp"
#include "glims/ops.hpp"

using namespace glims;

TEST_CASE("gradcheck flags a wrong gradient") {
  Tensor x = Tensor::from_values({3}, {0.3, -0.7, 1.1}, DType::f64);
  CHECK(gradcheck([&] { return mul(x, x); }, {x}).passed);
  // Detaching hides the dependence from the tape, so the analytic gradient is zero.
  const auto r = gradcheck([&] { return mul(x, x.detach()); }, {x});
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
  CHECK_THROWS_AS(gradcheck([&] { return x; }, {x.to(DType::f32)}), ConfigError);
}

TEST_CASE("op, block, loss and model suite") {
  const auto cases = run_gradcheck_suite(7);
  CHECK(cases.size() > 40);
  bool saw_model = false;
  for (const auto& c : cases) {
    INFO(c.name << ": " << c.result.worst);
    CHECK(c.result.coords_checked > 0);
    CHECK(c.result.max_rel_error < c.tolerance);
    CHECK(c.tolerance <= (c.name == "model_end_to_end" ? 1e-3 : 1e-4));
    saw_model = saw_model || c.name == "model_end_to_end";
  }
  CHECK(saw_model);
}
