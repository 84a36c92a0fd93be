#include "mtlfer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mtlfer {

double finite_diff_check(const ScalarFn& f, std::span<Tensor<double>> wrt, double eps) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_check: eps must be positive");
  for (auto& t : wrt) {
    if (!t.requires_grad()) throw UsageError("finite_diff_check: tensor does not require grad");
    t.drop_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = f(tape);
    tape.backward(loss);
    for (auto& t : wrt) {
      auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  auto evaluate = [&]() {
    Tape<double> tape = Tape<double>::inference();
    return f(tape).item();
  };

  double worst = 0.0;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[ti][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>& f,
                         Tensor<double> x, double eps) {
  x.set_requires_grad(true);
  Tensor<double> held[] = {x};
  return finite_diff_check([&](Tape<double>& tape) { return f(tape, x); }, held, eps);
}

}  // namespace mtlfer
