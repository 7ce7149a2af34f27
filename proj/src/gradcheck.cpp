#include "glims/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "glims/autograd.hpp"
#include "glims/ops.hpp"

namespace glims {
namespace {

double weighted_sum(const Tensor& out, const std::vector<double>& r) {
  const double* p = out.data<double>();
  double acc = 0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += p[i] * r[i];
  return acc;
}

}  // namespace

GradcheckResult gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& opt) {
  for (const Tensor& t : inputs)
    if (t.dtype() != DType::f64) throw ConfigError("gradcheck: inputs must be f64");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;

  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  current_tape().clear();
  Tensor out = f();
  if (out.dtype() != DType::f64) throw ConfigError("gradcheck: function must produce f64");
  std::vector<double> r(static_cast<std::size_t>(out.numel()));
  for (auto& v : r) v = normal(rng);
  {
    Tensor weights = Tensor::from_values(out.shape(), r, DType::f64);
    backward(sum(mul(out, weights)));
  }

  GradcheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<double> analytic(static_cast<std::size_t>(t.numel()), 0.0);
    if (t.has_grad()) analytic = t.grad().to_vector();

    std::vector<std::int64_t> coords(static_cast<std::size_t>(t.numel()));
    std::iota(coords.begin(), coords.end(), 0);
    if (static_cast<std::int64_t>(coords.size()) > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opt.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    double* data = t.mutable_data<double>();
    for (std::int64_t c : coords) {
      const double x0 = data[c];
      const double a = analytic[static_cast<std::size_t>(c)];
      // A difference whose stencil straddles a kink (LeakyReLU, max ties) is
      // not a valid estimate; shrink the stencil before giving up.
      double numeric = 0, rel = std::numeric_limits<double>::infinity();
      double h = opt.step * std::max(1.0, std::abs(x0));
      for (int attempt = 0; attempt < opt.refinements + 1 && rel >= 0.1 * opt.tolerance; ++attempt, h /= 10) {
        double fp, fm;
        {
          NoGradGuard guard;
          data[c] = x0 + h;
          fp = weighted_sum(f(), r);
          data[c] = x0 - h;
          fm = weighted_sum(f(), r);
          data[c] = x0;
        }
        const double n = (fp - fm) / (2 * h);
        const double e = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
        if (e < rel) {
          rel = e;
          numeric = n;
        }
      }
      ++res.coords_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = "input " + std::to_string(k) + " index " + std::to_string(c) + ": analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
    t.clear_grad();
  }
  res.passed = res.max_rel_error < opt.tolerance;
  return res;
}

}  // namespace glims
