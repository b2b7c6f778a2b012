#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "recnet/errors.hpp"
#include "recnet/gradcheck.hpp"
#include "recnet/losses.hpp"
#include "recnet/ops.hpp"
#include "recnet/tensor.hpp"

using namespace recnet;

namespace {

Tensor random_unit(const std::vector<int>& shape, std::mt19937& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Pose at(double x, double y, double z) {
  Pose p;
  p.translation = {x, y, z};
  return p;
}

}  // namespace

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK(c.alpha == 1.0);
  CHECK(c.lambda_grad == 1.0);
  CHECK(c.m == 10.0);
  CHECK_NOTHROW(c.validate());

  c.alpha = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda_grad = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.m = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pixel mean squared error") {
  std::mt19937 rng(3);

  SUBCASE("identical images score zero") {
    Tensor img = random_unit({1, 4, 6}, rng);
    CHECK(loss_mse(img, img.clone()).item() == 0.0f);
  }
  SUBCASE("unit offset scores one") {
    Tensor zeros = Tensor::zeros({1, 4, 5});
    Tensor ones = Tensor::full({1, 4, 5}, 1.0f);
    CHECK(loss_mse(zeros, ones).item() == doctest::Approx(1.0));
  }
  SUBCASE("single pixel") {
    Tensor a = Tensor::full({1, 1, 1}, 2.0f);
    Tensor b = Tensor::full({1, 1, 1}, 5.0f);
    CHECK(loss_mse(a, b).item() == doctest::Approx(9.0));
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(
        (void)loss_mse(Tensor::zeros({1, 4, 5}), Tensor::zeros({1, 5, 4})),
        ShapeError);
  }
}

TEST_CASE("image gradient error") {
  std::mt19937 rng(5);

  SUBCASE("identical images score zero") {
    Tensor img = random_unit({1, 5, 7}, rng);
    CHECK(loss_grad(img, img.clone()).item() == 0.0f);
  }
  SUBCASE("constant offsets are invisible") {
    Tensor a = Tensor::zeros({1, 4, 6});
    Tensor b = Tensor::full({1, 4, 6}, 5.0f);
    CHECK(loss_grad(a, b).item() == 0.0f);
    // ...which is exactly why the pixel term exists alongside it.
    CHECK(loss_mse(a, b).item() == doctest::Approx(25.0));
  }
  SUBCASE("hand-evaluated 2x2 case") {
    Tensor a = Tensor::zeros({1, 2, 2});
    Tensor b = Tensor::zeros({1, 2, 2});
    b.data() = {0.0f, 1.0f, 0.0f, 1.0f};
    // Horizontal differences disagree by 1 in each of the two rows,
    // vertical differences agree; normalized by the 4 pixels.
    CHECK(loss_grad(a, b).item() == doctest::Approx(0.5));
  }
  SUBCASE("batched input gives the same per-pixel normalization") {
    Tensor a = Tensor::zeros({2, 1, 2, 2});
    Tensor b = Tensor::zeros({2, 1, 2, 2});
    b.data() = {0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(loss_grad(a, b).item() == doctest::Approx(0.5));
  }
  SUBCASE("bad ranks and mismatches are rejected") {
    CHECK_THROWS_AS(
        (void)loss_grad(Tensor::zeros({1, 4, 6}), Tensor::zeros({1, 6, 4})),
        ShapeError);
    CHECK_THROWS_AS(
        (void)loss_grad(Tensor::zeros({4, 6}), Tensor::zeros({4, 6})),
        ShapeError);
  }
}

TEST_CASE("pose-derived target similarity") {
  SUBCASE("zero distance maps to one") {
    CHECK(target_similarity(at(3, 4, 5), at(3, 4, 5), 10.0) == 1.0);
  }
  SUBCASE("one scale length maps to 1/e") {
    CHECK(target_similarity(at(0, 0, 0), at(10, 0, 0), 10.0) ==
          doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  }
  SUBCASE("strictly decreasing in distance") {
    const double near = target_similarity(at(0, 0, 0), at(3, 0, 0), 10.0);
    const double far = target_similarity(at(0, 0, 0), at(5, 0, 0), 10.0);
    CHECK(near > far);
    CHECK(far > 0.0);
    CHECK(near < 1.0);
  }
  SUBCASE("strictly increasing in the scale for d > 0") {
    const double tight = target_similarity(at(0, 0, 0), at(7, 0, 0), 5.0);
    const double loose = target_similarity(at(0, 0, 0), at(7, 0, 0), 20.0);
    CHECK(loose > tight);
  }
  SUBCASE("nonpositive scale is rejected") {
    CHECK_THROWS_AS((void)target_similarity(at(0, 0, 0), at(1, 0, 0), 0.0),
                    ConfigError);
  }
}

TEST_CASE("similarity regression error") {
  SUBCASE("perfect prediction scores zero") {
    Tensor c = Tensor::full({1}, 0.75f);
    CHECK(loss_pr(0.75, c).item() == 0.0f);
  }
  SUBCASE("maximal miss scores one") {
    Tensor c = Tensor::zeros({1});
    CHECK(loss_pr(1.0, c).item() == doctest::Approx(1.0));
  }
  SUBCASE("hand-evaluated quarter-miss") {
    Tensor c = Tensor::full({1}, 0.35f);
    CHECK(loss_pr(0.6, c).item() == doctest::Approx(0.0625).epsilon(1e-6));
  }
  SUBCASE("non-scalar prediction is rejected") {
    CHECK_THROWS_AS((void)loss_pr(0.5, Tensor::zeros({2})), ShapeError);
  }
}

TEST_CASE("combined objective") {
  std::mt19937 rng(7);
  Tensor img = random_unit({1, 4, 6}, rng);
  Tensor rec = random_unit({1, 4, 6}, rng);
  Tensor c_hat = Tensor::full({1}, 0.4f);
  const Pose p1 = at(0, 0, 0);
  const Pose p2 = at(6, 8, 0);  // d = 10

  SUBCASE("components recombine into the total") {
    LossConfig cfg;
    cfg.alpha = 0.7;
    cfg.lambda_grad = 2.5;
    LossReport r = total_loss(img, rec, p1, p2, c_hat, cfg);
    CHECK(r.l_mse.item() >= 0.0f);
    CHECK(r.l_grad.item() >= 0.0f);
    CHECK(r.l_pr.item() >= 0.0f);
    CHECK(r.total.item() ==
          doctest::Approx(r.l_mse.item() + 2.5 * r.l_grad.item() +
                          0.7 * r.l_pr.item())
              .epsilon(1e-5));
  }
  SUBCASE("zero weights reduce to the pixel term") {
    LossConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda_grad = 0.0;
    LossReport r = total_loss(img, rec, p1, p2, c_hat, cfg);
    CHECK(r.total.item() == doctest::Approx(r.l_mse.item()).epsilon(1e-7));
    CHECK(r.total.item() == doctest::Approx(loss_mse(img, rec).item()));
  }
  SUBCASE("perfect pair scores zero") {
    Tensor perfect =
        Tensor::full({1}, static_cast<float>(target_similarity(p1, p2, 10.0)));
    LossReport r = total_loss(img, img.clone(), p1, p2, perfect, {});
    CHECK(r.total.item() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("total is linear in the weights") {
    auto total_at = [&](double alpha, double lambda) {
      LossConfig cfg;
      cfg.alpha = alpha;
      cfg.lambda_grad = lambda;
      return static_cast<double>(
          total_loss(img, rec, p1, p2, c_hat, cfg).total.item());
    };
    const double base = total_at(0.0, 0.0);
    const double da = total_at(1.0, 0.0) - base;
    const double dl = total_at(0.0, 1.0) - base;
    CHECK(total_at(3.0, 0.0) - base == doctest::Approx(3.0 * da).epsilon(1e-4));
    CHECK(total_at(0.0, 2.0) - base == doctest::Approx(2.0 * dl).epsilon(1e-4));
    CHECK(total_at(3.0, 2.0) - base ==
          doctest::Approx(3.0 * da + 2.0 * dl).epsilon(1e-4));
  }
  SUBCASE("invalid config propagates") {
    LossConfig cfg;
    cfg.m = -1.0;
    CHECK_THROWS_AS((void)total_loss(img, rec, p1, p2, c_hat, cfg),
                    ConfigError);
  }
}

TEST_CASE("objective gradients pass the numeric check") {
  std::mt19937 rng(11);
  Tensor img = random_unit({1, 4, 6}, rng);
  Tensor rec0 = random_unit({1, 4, 6}, rng);
  const Pose p1 = at(0, 0, 0);
  const Pose p2 = at(4, 3, 0);
  LossConfig cfg;
  cfg.alpha = 0.5;
  cfg.lambda_grad = 1.5;

  SUBCASE("with respect to the reconstruction") {
    Tensor c_hat = Tensor::full({1}, 0.37f);
    const double err = gradcheck(
        [&](const Tensor& r) {
          return total_loss(img, r, p1, p2, c_hat, cfg).total;
        },
        rec0);
    CHECK(err < 1e-4);
  }
  SUBCASE("with respect to the predicted score") {
    const double err = gradcheck(
        [&](const Tensor& c) {
          return total_loss(img, rec0, p1, p2, c, cfg).total;
        },
        Tensor::full({1}, 0.37f));
    CHECK(err < 1e-4);
  }
}

TEST_CASE("training log rows") {
  std::mt19937 rng(13);
  Tensor img = random_unit({1, 4, 6}, rng);
  Tensor rec = random_unit({1, 4, 6}, rng);
  LossReport r =
      total_loss(img, rec, at(0, 0, 0), at(2, 0, 0), Tensor::full({1}, 0.6f));

  std::ostringstream out;
  write_loss_row(out, 42, r);
  const std::string row = out.str();
  CHECK(row.substr(0, 3) == "42,");
  CHECK(row.back() == '\n');

  // Five comma-separated fields that parse back to the reported values.
  std::istringstream in(row);
  std::string field;
  std::vector<double> vals;
  while (std::getline(in, field, ',')) vals.push_back(std::stod(field));
  REQUIRE(vals.size() == 5);
  CHECK(vals[0] == 42.0);
  CHECK(vals[1] == doctest::Approx(r.l_mse.item()).epsilon(1e-6));
  CHECK(vals[2] == doctest::Approx(r.l_grad.item()).epsilon(1e-6));
  CHECK(vals[3] == doctest::Approx(r.l_pr.item()).epsilon(1e-6));
  CHECK(vals[4] == doctest::Approx(r.total.item()).epsilon(1e-6));
}
