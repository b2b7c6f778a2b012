#include "recnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "recnet/errors.hpp"

namespace recnet {

double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& point, double h) {
  Tensor x = point.clone().set_requires_grad(true);

  Tensor y = f(x);
  if (y.numel() != 1) {
    throw ShapeError("gradcheck needs a scalar-valued function, got " +
                     shape_string(y.shape()));
  }
  y.backward();
  const std::vector<float> analytic = x.grad();

  double worst = 0.0;
  // Difference quotients run without graph construction and with the
  // double-precision probe path active, so the quotient is not dominated by
  // float32 rounding of intermediate activations.
  NoGradGuard no_grad;
  NumericProbeGuard probe;
  std::vector<float>& data = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float original = data[i];

    const float plus = static_cast<float>(double(original) + h);
    const float minus = static_cast<float>(double(original) - h);
    const double achieved = (double(plus) - double(minus)) / 2.0;
    if (!(achieved > 0.0)) {
      throw ConfigError("gradcheck step " + std::to_string(h) +
                        " vanishes at coordinate " + std::to_string(i) +
                        " (value " + std::to_string(original) + ")");
    }

    data[i] = plus;
    const double fp = f(x).value();
    data[i] = minus;
    const double fm = f(x).value();
    data[i] = original;

    const double numeric = (fp - fm) / (2.0 * achieved);
    const double ana = analytic[i];
    const double denom =
        std::max({std::fabs(numeric), std::fabs(ana), 1e-8});
    worst = std::max(worst, std::fabs(numeric - ana) / denom);
  }
  return worst;
}

}  // namespace recnet
