#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "doctest.h"
#include "recnet/errors.hpp"
#include "recnet/model.hpp"
#include "recnet/ops.hpp"
#include "recnet/tensor.hpp"
#include "support.hpp"

using namespace recnet;

namespace {

// Valid-padding output extent, written independently of the library.
int conv_out(int in, int k, int s) { return (in - k) / s + 1; }

// Natural (pre-append) transposed-conv extent.
int tconv_base(int in, int k, int s) { return (in - 1) * s + k; }

Tensor random_image(const ModelProfile& p, std::mt19937& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor t = Tensor::zeros({1, p.in_h, p.in_w});
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

bool all_finite(const Tensor& t) {
  for (float v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

bool any_nonzero(const std::vector<float>& v) {
  for (float x : v)
    if (x != 0.0f) return true;
  return false;
}

struct Row {
  int c, h, w;
};

}  // namespace

TEST_CASE("encoder schedule reproduces the published output shapes") {
  const ModelProfile& p = ModelProfile::kitti();
  REQUIRE(p.encoder.size() == 10);

  const std::vector<Row> expected = {
      {16, 30, 443}, {16, 14, 215}, {32, 6, 102}, {32, 3, 90},
      {64, 1, 82},   {64, 1, 76},   {128, 1, 72}, {128, 1, 68},
      {256, 1, 66},  {256, 1, 64},
  };

  int h = 64, w = 900;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    CAPTURE(i);
    const Conv2dSpec& s = p.encoder[i];
    h = conv_out(h, s.kh, s.sh);
    w = conv_out(w, s.kw, s.sw);
    CHECK(s.out_channels == expected[i].c);
    CHECK(h == expected[i].h);
    CHECK(w == expected[i].w);
    // The stored schedule agrees with the arithmetic.
    CHECK(s.out_h == h);
    CHECK(s.out_w == w);
  }
  CHECK(h == 1);
  CHECK(w == p.bottleneck_w);
}

TEST_CASE("decoder schedule restores the published output shapes") {
  const ModelProfile& p = ModelProfile::kitti();
  REQUIRE(p.decoder.size() == 10);

  const std::vector<Row> expected = {
      {256, 1, 66},  {128, 1, 68},  {128, 1, 70}, {64, 1, 74},
      {64, 1, 82},   {32, 2, 90},   {32, 5, 102}, {16, 13, 215},
      {16, 30, 443}, {1, 64, 900},
  };

  int h = 1, w = p.bottleneck_w;
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    CAPTURE(i);
    const Conv2dSpec& s = p.decoder[i];
    CHECK(s.out_channels == expected[i].c);
    CHECK(s.out_h == expected[i].h);
    CHECK(s.out_w == expected[i].w);
    // Each target is reachable: at or above the natural size, never by more
    // than the appended-zeros margin of one kernel's worth.
    const int bh = tconv_base(h, s.kh, s.sh);
    const int bw = tconv_base(w, s.kw, s.sw);
    CHECK(bh <= s.out_h);
    CHECK(bw <= s.out_w);
    CHECK(s.out_h - bh <= s.kh);
    CHECK(s.out_w - bw <= s.kw);
    h = s.out_h;
    w = s.out_w;
  }
  CHECK(h == p.in_h);
  CHECK(w == p.in_w);
}

TEST_CASE("tail schedule matches the bottleneck-derived arithmetic") {
  const ModelProfile& p = ModelProfile::kitti();
  REQUIRE(p.tail.size() == 3);

  const std::vector<Row> expected = {{32, 50, 12}, {64, 16, 3}, {128, 14, 1}};
  int h = p.bottleneck_c, w = p.bottleneck_w;
  for (std::size_t i = 0; i < p.tail.size(); ++i) {
    CAPTURE(i);
    const Conv2dSpec& s = p.tail[i];
    h = conv_out(h, s.kh, s.sh);
    w = conv_out(w, s.kw, s.sw);
    CHECK(s.out_channels == expected[i].c);
    CHECK(h == expected[i].h);
    CHECK(w == expected[i].w);
  }
  CHECK(p.tail_dense_in() == 128 * 14 * 1);
}

TEST_CASE("mini schedule is self-consistent and ends at the small bottleneck") {
  const ModelProfile& p = ModelProfile::mini();
  REQUIRE(p.encoder.size() == 8);
  REQUIRE(p.decoder.size() == 8);

  int h = p.in_h, w = p.in_w;
  for (const Conv2dSpec& s : p.encoder) {
    h = conv_out(h, s.kh, s.sh);
    w = conv_out(w, s.kw, s.sw);
    CHECK(s.out_h == h);
    CHECK(s.out_w == w);
  }
  CHECK(h == 1);
  CHECK(w == p.bottleneck_w);
  CHECK(p.encoder.back().out_channels == p.bottleneck_c);

  h = 1;
  w = p.bottleneck_w;
  for (const Conv2dSpec& s : p.decoder) {
    const int bh = tconv_base(h, s.kh, s.sh);
    const int bw = tconv_base(w, s.kw, s.sw);
    CHECK(bh <= s.out_h);
    CHECK(bw <= s.out_w);
    h = s.out_h;
    w = s.out_w;
  }
  CHECK(h == p.in_h);
  CHECK(w == p.in_w);
}

TEST_CASE("normalization and activation placement follows the leg rules") {
  for (const ModelProfile* p :
       {&ModelProfile::kitti(), &ModelProfile::mini()}) {
    CAPTURE(p->name);
    // Encoder: every second stage normalized, including the last; PReLU
    // everywhere except the last.
    for (std::size_t i = 0; i < p->encoder.size(); ++i) {
      CHECK(p->encoder[i].batchnorm == (i % 2 == 1));
      CHECK(p->encoder[i].prelu == (i + 1 < p->encoder.size()));
    }
    // Decoder: every second stage normalized except the linear output.
    for (std::size_t i = 0; i < p->decoder.size(); ++i) {
      const bool last = i + 1 == p->decoder.size();
      CHECK(p->decoder[i].batchnorm == (i % 2 == 1 && !last));
      CHECK(p->decoder[i].prelu == !last);
    }
    // Tail: no normalization, PReLU after every stage.
    for (const Conv2dSpec& s : p->tail) {
      CHECK(!s.batchnorm);
      CHECK(s.prelu);
    }
  }
}

TEST_CASE("unknown profile name is rejected") {
  CHECK_THROWS_AS(ModelProfile::by_name("hdl64"), ConfigError);
}

TEST_CASE("full forward pass holds every published shape at once") {
  // Any intermediate deviation from the schedule throws inside the leg, so
  // a completed forward pass is itself the 20-shape assertion.
  std::mt19937 rng(11);
  RecNetModel m = RecNetModel::init(ModelProfile::kitti(), 3);
  Tensor img = random_image(m.profile(), rng);

  Tensor beta = m.encode(img);
  CHECK(beta.shape() == std::vector<int>{256, 64});
  CHECK(all_finite(beta));

  Tensor rec = m.decode(beta);
  CHECK(rec.shape() == img.shape());
  CHECK(all_finite(rec));
}

TEST_CASE("decode-encode round trip preserves shape on both profiles") {
  std::mt19937 rng(13);
  for (const ModelProfile* p :
       {&ModelProfile::kitti(), &ModelProfile::mini()}) {
    CAPTURE(p->name);
    RecNetModel m = RecNetModel::init(*p, 1);
    Tensor img = random_image(*p, rng);
    Tensor rec = m.decode(m.encode(img));
    CHECK(rec.shape() == img.shape());
    CHECK(all_finite(rec));
  }
}

TEST_CASE("zero input stays finite through freshly initialized weights") {
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 0);
  Tensor img = Tensor::zeros(
      {1, m.profile().in_h, m.profile().in_w});
  Tensor beta = m.encode(img);
  CHECK(all_finite(beta));
  CHECK(all_finite(m.decode(beta)));
}

TEST_CASE("evaluation is a pure function of weights and input") {
  std::mt19937 rng(17);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 9);
  Tensor img = random_image(m.profile(), rng);

  // Dirty the running statistics first so eval mode demonstrably does not
  // depend on call history.
  (void)m.encode(img, /*training=*/true);

  Tensor a = m.encode(img);
  Tensor b = m.encode(img);
  CHECK(a.data() == b.data());

  Tensor ra = m.decode(a);
  Tensor rb = m.decode(b);
  CHECK(ra.data() == rb.data());
}

TEST_CASE("training mode updates running statistics, eval mode does not") {
  std::mt19937 rng(19);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 2);
  Tensor img = random_image(m.profile(), rng);

  auto snapshot = [&m] {
    std::vector<std::vector<float>> s;
    for (auto& view : m.named_state()) s.push_back(*view.values);
    return s;
  };

  const auto before = snapshot();
  (void)m.encode(img, /*training=*/false);
  CHECK(snapshot() == before);
  (void)m.encode(img, /*training=*/true);
  CHECK(snapshot() != before);
}

TEST_CASE("tail similarity") {
  std::mt19937 rng(23);
  RecNetModel m = RecNetModel::init(ModelProfile::kitti(), 4);
  Tensor img = random_image(m.profile(), rng);
  Tensor beta = m.encode(img);

  SUBCASE("identical bottlenecks give the zero-delta constant") {
    // With zero biases the all-zero delta propagates to a zero logit.
    Tensor c = m.tail_similarity(beta, beta);
    CHECK(c.numel() == 1);
    CHECK(c.item() == doctest::Approx(0.5).epsilon(1e-6));

    // The constant is independent of which bottleneck is duplicated.
    Tensor other = m.encode(random_image(m.profile(), rng));
    Tensor c2 = m.tail_similarity(other, other);
    CHECK(c.item() == c2.item());
  }
  SUBCASE("scores stay strictly inside (0,1)") {
    for (int k = 0; k < 3; ++k) {
      Tensor other = m.encode(random_image(m.profile(), rng));
      const float c = m.tail_similarity(beta, other).item();
      CHECK(c > 0.0f);
      CHECK(c < 1.0f);
    }
  }
  SUBCASE("profile mismatch is rejected") {
    Tensor wrong = Tensor::zeros({128, 32});
    CHECK_THROWS_AS((void)m.tail_similarity(wrong, wrong), ShapeError);
    Tensor also = Tensor::zeros({256, 64});
    CHECK_THROWS_AS((void)m.tail_similarity(beta, wrong), ShapeError);
    (void)also;
  }
}

TEST_CASE("both legs see encoder updates identically") {
  std::mt19937 rng(29);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 5);
  Tensor img = random_image(m.profile(), rng);

  Tensor before = m.encode(img);

  // Perturb one encoder kernel through the live parameter handle.
  for (auto& [name, t] : m.named_parameters()) {
    if (name == "encoder.conv1.weight") {
      t.data()[0] += 0.25f;
      break;
    }
  }

  Tensor leg_a = m.encode(img);
  Tensor leg_b = m.encode(img);
  CHECK(leg_a.data() == leg_b.data());
  CHECK(leg_a.data() != before.data());
}

TEST_CASE("siamese forward wires both heads to the shared encoder") {
  std::mt19937 rng(31);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 6);
  Tensor i1 = random_image(m.profile(), rng);
  Tensor i2 = random_image(m.profile(), rng);

  auto [rec, score] = m.siamese_forward(i1, i2, /*training=*/true);
  CHECK(rec.shape() == i1.shape());
  CHECK(score.numel() == 1);

  // One backward pass over both heads reaches the encoder parameters.
  Tensor loss = add(sum(rec), sum(score));
  loss.backward();

  bool encoder_grad = false, decoder_grad = false, tail_grad = false;
  for (auto& [name, t] : m.named_parameters()) {
    if (!any_nonzero(t.grad())) continue;
    if (name.rfind("encoder.", 0) == 0) encoder_grad = true;
    if (name.rfind("decoder.", 0) == 0) decoder_grad = true;
    if (name.rfind("tail.", 0) == 0) tail_grad = true;
  }
  CHECK(encoder_grad);
  CHECK(decoder_grad);
  CHECK(tail_grad);

  // Swapped inputs also run to completion.
  auto [rec2, score2] = m.siamese_forward(i2, i1);
  CHECK(rec2.shape() == i2.shape());
  CHECK(score2.numel() == 1);
}

TEST_CASE("batched forward shapes") {
  std::mt19937 rng(37);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 7);
  const int h = m.profile().in_h, w = m.profile().in_w;

  Tensor batch = Tensor::zeros({2, 1, h, w});
  for (float& v : batch.data())
    v = static_cast<float>(std::uniform_real_distribution<double>(0, 1)(rng));

  Tensor beta = m.encode(batch);
  CHECK(beta.shape() == std::vector<int>{2, 128, 32});
  Tensor rec = m.decode(beta);
  CHECK(rec.shape() == std::vector<int>{2, 1, h, w});
  Tensor score = m.tail_similarity(beta, beta);
  CHECK(score.shape() == std::vector<int>{2, 1});
}

TEST_CASE("inference clamps reconstructions to the normalized band") {
  std::mt19937 rng(41);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 8);
  Tensor img = random_image(m.profile(), rng);
  Tensor rec = m.decode(m.encode(img));
  for (float v : rec.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("input validation names the offending stage or surface") {
  RecNetModel m = RecNetModel::init(ModelProfile::kitti(), 1);

  CHECK_THROWS_WITH_AS((void)m.encode(Tensor::zeros({1, 63, 899})),
                       doctest::Contains("does not match profile kitti"),
                       ShapeError);
  CHECK_THROWS_WITH_AS((void)m.decode(Tensor::zeros({128, 32})),
                       doctest::Contains("decode"), ShapeError);
  CHECK_THROWS_AS((void)m.encode(Tensor::zeros({64, 900})), ShapeError);
}

TEST_CASE("initialization is deterministic per seed") {
  RecNetModel a = RecNetModel::init(ModelProfile::mini(), 42);
  RecNetModel b = RecNetModel::init(ModelProfile::mini(), 42);
  RecNetModel c = RecNetModel::init(ModelProfile::mini(), 43);

  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  auto pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  REQUIRE(pa.size() == pc.size());

  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.data() == pb[i].second.data());
    if (pa[i].second.data() != pc[i].second.data()) differs = true;
  }
  CHECK(differs);

  // Slopes and normalization parameters carry their documented defaults.
  for (auto& [name, t] : pa) {
    if (name.find(".slope") != std::string::npos)
      CHECK(t.data() == std::vector<float>{0.25f});
    if (name.find(".gamma") != std::string::npos)
      for (float v : t.data()) CHECK(v == 1.0f);
    if (name.find(".bias") != std::string::npos ||
        name.find(".beta") != std::string::npos)
      for (float v : t.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("weight files round-trip bit-exactly") {
  testsupport::TempDir dir("model");
  std::mt19937 rng(47);
  RecNetModel m = RecNetModel::init(ModelProfile::mini(), 12);
  // Dirty the running statistics so the round trip covers them too.
  (void)m.encode(random_image(m.profile(), rng), /*training=*/true);

  const std::string path = dir.file("model.rwts");
  m.save(path);
  RecNetModel r = RecNetModel::load(path);
  CHECK(r.profile().name == "mini");

  auto pm = m.named_parameters();
  auto pr = r.named_parameters();
  REQUIRE(pm.size() == pr.size());
  for (std::size_t i = 0; i < pm.size(); ++i) {
    CAPTURE(pm[i].first);
    CHECK(pm[i].first == pr[i].first);
    CHECK(pm[i].second.data() == pr[i].second.data());
  }
  auto sm = m.named_state();
  auto sr = r.named_state();
  REQUIRE(sm.size() == sr.size());
  for (std::size_t i = 0; i < sm.size(); ++i) {
    CAPTURE(sm[i].name);
    CHECK(*sm[i].values == *sr[i].values);
  }

  // Same weights, same outputs.
  Tensor img = random_image(m.profile(), rng);
  CHECK(m.encode(img).data() == r.encode(img).data());
}

TEST_CASE("weight file corruption and mismatches are reported") {
  testsupport::TempDir dir("model");
  RecNetModel m = RecNetModel::init(ModelProfile::kitti(), 3);
  const std::string path = dir.file("model.rwts");
  m.save(path);

  SUBCASE("truncated file") {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    REQUIRE(f);
    std::vector<unsigned char> head(4096);
    const std::size_t got = std::fread(head.data(), 1, head.size(), f);
    std::fclose(f);
    REQUIRE(got == head.size());

    const std::string cut = dir.file("cut.rwts");
    std::FILE* g = std::fopen(cut.c_str(), "wb");
    REQUIRE(g);
    std::fwrite(head.data(), 1, head.size(), g);
    std::fclose(g);
    CHECK_THROWS_AS((void)RecNetModel::load(cut), FormatError);
  }
  SUBCASE("bad magic") {
    const std::string bad = dir.file("bad.rwts");
    std::FILE* g = std::fopen(bad.c_str(), "wb");
    REQUIRE(g);
    std::fwrite("NOPE****", 1, 8, g);
    std::fclose(g);
    CHECK_THROWS_AS((void)RecNetModel::load(bad), FormatError);
  }
  SUBCASE("profile cross-load names the first mismatched tensor") {
    CHECK_THROWS_WITH_AS((void)RecNetModel::load(path, "mini"),
                         doctest::Contains("encoder.conv"), ShapeError);
  }
}
