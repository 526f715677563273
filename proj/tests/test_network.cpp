#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "test_util.hpp"
#include "usbrain/network.hpp"
#include "usbrain/random.hpp"

using namespace usbrain;

namespace {

// Layer-by-layer count for the documented layout, written independently of
// the library: conv = in*out*k^3 + out, batch norm = 2*out.
std::uint64_t oracle_count(std::uint64_t l, std::uint64_t k, std::uint64_t f) {
  const std::uint64_t k3 = k * k * k;
  auto block = [&](std::uint64_t in, std::uint64_t out) { return in * out * k3 + out + 2 * out; };
  std::uint64_t total = 0, ch = 1, conv = 0;
  std::vector<std::uint64_t> skip;
  for (std::uint64_t i = 0; i < l; ++i) {
    for (int j = 0; j < 2; ++j, ++conv) {
      const std::uint64_t out = conv == 0 ? f : conv == 1 ? 2 * f : 4 * f;
      total += block(ch, out);
      ch = out;
    }
    skip.push_back(ch);
  }
  for (std::uint64_t i = l; i-- > 0;) {
    total += block(ch + skip[i], 4 * f);
    ch = 4 * f;
  }
  return total + ch + 1;
}

Tensor<float> random_input(NetworkSpec s, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(Shape{batch, 1, s.n, s.n, s.n});
  for (auto& v : t.values) v = float(rng.uniform());
  return t;
}

const NetworkSpec kSmall{8, 2, 3, 2};

}  // namespace

TEST(NetworkSpec, Validation) {
  EXPECT_NO_THROW((NetworkSpec{16, 4, 3, 1}.validate()));
  EXPECT_ERRC((NetworkSpec{12, 3, 3, 4}.validate()), Errc::InvalidSpec);
  EXPECT_ERRC((NetworkSpec{16, 2, 4, 4}.validate()), Errc::InvalidSpec);
  EXPECT_ERRC((NetworkSpec{16, 2, 3, 0}.validate()), Errc::InvalidSpec);
  EXPECT_ERRC((NetworkSpec{16, 0, 3, 4}.validate()), Errc::InvalidSpec);
  EXPECT_ERRC(param_count(NetworkSpec{10, 2, 3, 4}), Errc::InvalidSpec);
  EXPECT_ERRC(Network::build(NetworkSpec{16, 2, 2, 4}, 0), Errc::InvalidSpec);
}

TEST(ParamCount, MatchesLayerOracle) {
  for (std::uint32_t l = 1; l <= 4; ++l)
    for (std::uint32_t k : {1u, 3u, 5u, 7u})
      for (std::uint32_t f : {1u, 2u, 4u, 16u})
        EXPECT_EQ(param_count(NetworkSpec{16, l, k, f}), oracle_count(l, k, f)) << l << " " << k << " " << f;
}

TEST(ParamCount, ClosedFormForSingleLevelPointwise) {
  // l = 1, k = 1: 4f + (2f^2 + 6f) + (16f^2 + 12f) + (4f + 1) = 18f^2 + 26f + 1.
  for (std::uint32_t f = 1; f <= 64; ++f) {
    const std::uint64_t ff = f;
    EXPECT_EQ(param_count(NetworkSpec{2, 1, 1, f}), 18 * ff * ff + 26 * ff + 1);
    EXPECT_EQ(param_count(NetworkSpec{2, 1, 1, 2 * f}) - param_count(NetworkSpec{2, 1, 1, f}),
              54 * ff * ff + 26 * ff);
  }
}

TEST(ParamCount, PublishedGridWithinTwentyPercent) {
  for (const auto& ns : table1_specs()) {
    const double c = double(param_count(ns.spec));
    EXPECT_LE(std::abs(c - ns.published_params) / ns.published_params, 0.20)
        << ns.label << " " << c << " vs " << ns.published_params;
  }
}

TEST(ParamCount, PublishedOrdering) {
  std::map<char, std::uint64_t> c;
  for (const auto& ns : table1_specs()) c[ns.label] = param_count(ns.spec);
  EXPECT_LT(c['H'], c['G']);
  EXPECT_LT(c['G'], c['E']);
  EXPECT_EQ(c['E'], c['F']);
  EXPECT_LT(c['F'], c['D']);
  EXPECT_LT(c['D'], c['A']);
  EXPECT_LT(c['A'], c['B']);
  EXPECT_LT(c['B'], c['C']);
}

TEST(Network, BuildEnumeratesExactlyTheCount) {
  for (const auto& ns : table1_specs()) {
    const Network net = Network::build(ns.spec, 1);
    std::uint64_t n = 0;
    for (const auto* v : net.trainable()) n += v->size();
    EXPECT_EQ(n, param_count(ns.spec)) << ns.label;
    EXPECT_EQ(net.trainable_count(), n);
  }
}

TEST(Network, FilterScheduleAndInit) {
  Network net = Network::build(NetworkSpec{16, 3, 3, 2}, 7);
  std::vector<std::vector<std::uint32_t>> conv_dims;
  for (const auto& b : net.blobs())
    if (b.dims.size() == 5 && b.dims[2] == 3) conv_dims.push_back(b.dims);
  // Encoder: 1->2, 2->4, 4->8, 8->8, 8->8, 8->8; decoder concatenates skips.
  ASSERT_EQ(conv_dims.size(), 9u);
  const std::vector<std::pair<std::uint32_t, std::uint32_t>> want{
      {2, 1}, {4, 2}, {8, 4}, {8, 8}, {8, 8}, {8, 8}, {8, 16}, {8, 16}, {8, 12}};
  std::multiset<std::pair<std::uint32_t, std::uint32_t>> got, expected(want.begin(), want.end());
  for (const auto& d : conv_dims) got.insert({d[0], d[1]});
  EXPECT_EQ(got, expected);

  for (const auto& b : net.blobs()) {
    if (b.name.find("bias") != std::string::npos || b.name.find("beta") != std::string::npos ||
        b.name.find("mean") != std::string::npos) {
      for (float v : *b.values) EXPECT_EQ(v, 0.f) << b.name;
    } else if (b.name.find("gamma") != std::string::npos || b.name.find("var") != std::string::npos) {
      for (float v : *b.values) EXPECT_EQ(v, 1.f) << b.name;
    } else if (b.dims.size() == 5) {
      // He-uniform bound sqrt(6 / fan_in).
      const double bound = std::sqrt(6.0 / double(b.dims[1] * b.dims[2] * b.dims[3] * b.dims[4]));
      for (float v : *b.values) EXPECT_LE(std::abs(v), bound + 1e-7) << b.name;
    }
  }
}

TEST(Network, DeterministicBuildAndForward) {
  Network a = Network::build(kSmall, 42), b = Network::build(kSmall, 42), c = Network::build(kSmall, 43);
  const auto pa = a.trainable(), pb = b.trainable(), pc = c.trainable();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(*pa[i], *pb[i]);
    differs = differs || *pa[i] != *pc[i];
  }
  EXPECT_TRUE(differs);
  const auto x = random_input(kSmall, 2, 3);
  EXPECT_EQ(a.predict(x).values, a.predict(x).values);
  EXPECT_EQ(a.predict(x).values, b.predict(x).values);
}

TEST(Network, OutputShapeAndRange) {
  const Network net = Network::build(kSmall, 5);
  const auto y = net.predict(random_input(kSmall, 3, 9));
  EXPECT_EQ(y.shape, (Shape{3, 1, 8, 8, 8}));
  for (float v : y.values) {
    EXPECT_GT(v, 0.f);
    EXPECT_LT(v, 1.f);
  }
  EXPECT_ERRC(net.predict(Tensor<float>(Shape{1, 1, 8, 8, 4})), Errc::ShapeMismatch);
  EXPECT_ERRC(net.predict(Tensor<float>(Shape{1, 2, 8, 8, 8})), Errc::ShapeMismatch);
}

TEST(Network, BatchEntriesAreIndependentInEval) {
  const Network net = Network::build(kSmall, 5);
  const auto x = random_input(kSmall, 2, 10);
  const auto both = net.predict(x);
  Tensor<float> second(Shape{1, 1, 8, 8, 8});
  std::copy(x.values.begin() + 512, x.values.end(), second.values.begin());
  const auto one = net.predict(second);
  for (std::size_t i = 0; i < 512; ++i) EXPECT_EQ(both.values[512 + i], one.values[i]);
}

TEST(Network, TapeForwardMatchesPredictInEval) {
  Network net = Network::build(kSmall, 8);
  const auto x = random_input(kSmall, 1, 11);
  Tape<float> tape(false);
  const Var out = net.forward(tape, tape.leaf(x), BnMode::Eval, nullptr);
  EXPECT_EQ(tape[out].values, net.predict(x).values);

  Tape<float> train_tape;
  std::vector<Var> params;
  net.forward(train_tape, train_tape.leaf(x), BnMode::Train, &params);
  EXPECT_EQ(params.size(), net.trainable().size());
}

TEST(Network, NoNonFiniteOutputsOverSeeds) {
  const NetworkSpec s{16, 2, 3, 2};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Network net = Network::build(s, seed);
    for (float v : net.predict(random_input(s, 1, seed + 1000)).values) ASSERT_TRUE(std::isfinite(v)) << seed;
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  Network net = Network::build(kSmall, 12);
  net.set_step(345);
  // Perturb running statistics so they are not the defaults.
  for (auto& b : net.blobs())
    if (!b.trainable)
      for (std::size_t i = 0; i < b.values->size(); ++i) (*b.values)[i] += 0.01f * float(i + 1);
  save_checkpoint(net, dir / "n.nnck");
  Network back = load_checkpoint(dir / "n.nnck");
  EXPECT_EQ(back.spec(), kSmall);
  EXPECT_EQ(back.step(), 345u);
  EXPECT_EQ(back.seed(), 12u);
  auto a = net.blobs(), b = back.blobs();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].dims, b[i].dims);
    EXPECT_EQ(std::memcmp(a[i].values->data(), b[i].values->data(), a[i].values->size() * 4), 0);
  }
  const auto x = random_input(kSmall, 1, 13);
  EXPECT_EQ(net.predict(x).values, back.predict(x).values);
}

TEST(Checkpoint, HeaderLayout) {
  TempDir dir;
  Network net = Network::build(kSmall, 99);
  net.set_step(7);
  save_checkpoint(net, dir / "n.nnck");
  const auto bytes = read_bytes(dir / "n.nnck");
  ASSERT_GT(bytes.size(), 42u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "NNCK1\n");
  std::uint32_t nlkf[4];
  std::memcpy(nlkf, bytes.data() + 6, 16);
  EXPECT_EQ(nlkf[0], 8u);
  EXPECT_EQ(nlkf[1], 2u);
  EXPECT_EQ(nlkf[2], 3u);
  EXPECT_EQ(nlkf[3], 2u);
  std::uint64_t step, seed;
  std::memcpy(&step, bytes.data() + 22, 8);
  std::memcpy(&seed, bytes.data() + 30, 8);
  EXPECT_EQ(step, 7u);
  EXPECT_EQ(seed, 99u);
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 38, 4);
  EXPECT_EQ(count, net.blobs().size());
}

TEST(Checkpoint, ParameterLengthMatchesCount) {
  TempDir dir;
  const NetworkSpec d = table1_specs()[3].spec;
  Network net = Network::build(d, 1);
  save_checkpoint(net, dir / "d.nnck");
  const Network back = load_checkpoint(dir / "d.nnck");
  std::uint64_t n = 0;
  for (const auto* v : back.trainable()) n += v->size();
  EXPECT_EQ(n, param_count(d));
}

TEST(Checkpoint, Errors) {
  TempDir dir;
  Network net = Network::build(kSmall, 1);
  save_checkpoint(net, dir / "n.nnck");
  auto bytes = read_bytes(dir / "n.nnck");

  auto magic = bytes;
  magic[2] = 'X';
  write_bytes(dir / "magic.nnck", magic);
  EXPECT_ERRC(load_checkpoint(dir / "magic.nnck"), Errc::BadMagic);

  auto trunc = bytes;
  trunc.resize(trunc.size() - 5);
  write_bytes(dir / "trunc.nnck", trunc);
  EXPECT_ERRC(load_checkpoint(dir / "trunc.nnck"), Errc::TruncatedPayload);

  // First blob's first dimension lives after the name and the rank.
  std::uint16_t name_len;
  std::memcpy(&name_len, bytes.data() + 42, 2);
  auto dim = bytes;
  const std::size_t at = 42 + 2 + name_len + 4;
  std::uint32_t d0;
  std::memcpy(&d0, dim.data() + at, 4);
  d0 += 1;
  std::memcpy(dim.data() + at, &d0, 4);
  write_bytes(dir / "dim.nnck", dim);
  EXPECT_ERRC(load_checkpoint(dir / "dim.nnck"), Errc::SpecMismatch);

  auto spec = bytes;
  const std::uint32_t f = 3;
  std::memcpy(spec.data() + 18, &f, 4);
  write_bytes(dir / "spec.nnck", spec);
  EXPECT_ERRC(load_checkpoint(dir / "spec.nnck"), Errc::SpecMismatch);

  EXPECT_ERRC(load_checkpoint(dir / "missing.nnck"), Errc::IoFailure);
}
