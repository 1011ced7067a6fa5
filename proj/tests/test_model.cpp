#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "prefmmt/checkpoint.hpp"
#include "prefmmt/gradcheck.hpp"
#include "prefmmt/model.hpp"

using namespace prefmmt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(Variant v, int d = 8, int heads = 2) {
  ModelConfig c;
  c.variant = v;
  c.state_dim = 3;
  c.action_dim = 2;
  c.d_model = d;
  c.n_heads = heads;
  c.max_len = 16;
  c.dropout = 0.0;
  c.mlp_hidden = {16, 16};
  return c;
}

Eigen::MatrixXd random_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::MatrixXd::NullaryExpr(rows, cols, [&]() { return n(rng); });
}

// A random head so outputs are not identically zero.
template <typename S>
void randomize_head(RewardModel<S>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& [name, buf] : m.params())
    if (name.rfind("head.", 0) == 0)
      for (Eigen::Index i = 0; i < buf.size(); ++i) buf.data()[i] = static_cast<S>(n(rng));
}

template <typename S>
Matrix<S> as(const Eigen::MatrixXd& m) {
  return m.cast<S>();
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "prefmmt_test_model";
  fs::create_directories(dir);
  return dir / name;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const Variant kAllVariants[] = {Variant::PrefMMT, Variant::MR, Variant::PrefIntra, Variant::PrefInter,
                                Variant::UniSeq};

}  // namespace

TEST(ModelConfig, ValidatesInvariants) {
  auto c = tiny(Variant::PrefMMT);
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(Variant::PrefMMT);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(Variant::PrefMMT);
  c.max_len = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("Transformer"), ConfigError);
}

TEST(ModelConfig, SerializationRoundTrips) {
  auto c = tiny(Variant::UniSeq);
  c.dropout = 0.123456789012345678;
  c.mlp_hidden = {7, 3, 9};
  EXPECT_EQ(parse_model_config(serialize(c)), c);
}

TEST(ModelParams, InitializationFollowsLayout) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 1);
  const auto layout = RewardModel<double>::layout(m.config());
  EXPECT_EQ(layout.size(), m.params().size());
  double sumsq = 0.0;
  long count = 0;
  for (const auto& [name, shape] : layout) {
    const auto& buf = m.params().at(name);
    EXPECT_EQ(buf.rows(), shape.first) << name;
    EXPECT_EQ(buf.cols(), shape.second) << name;
    if (name.rfind("head.", 0) == 0 || name.ends_with(".bias")) {
      EXPECT_TRUE(buf.isZero()) << name;
    } else if (name.ends_with(".gain")) {
      EXPECT_TRUE(buf.isOnes()) << name;
    } else {
      sumsq += buf.squaredNorm();
      count += buf.size();
    }
  }
  EXPECT_NEAR(std::sqrt(sumsq / static_cast<double>(count)), 0.02, 0.002);
}

TEST(ModelParams, SameSeedSameInitialization) {
  EXPECT_EQ(RewardModel<float>(tiny(Variant::PrefMMT), 3).params(), RewardModel<float>(tiny(Variant::PrefMMT), 3).params());
  EXPECT_FALSE(RewardModel<float>(tiny(Variant::PrefMMT), 3).params() ==
               RewardModel<float>(tiny(Variant::PrefMMT), 4).params());
}

TEST(EmbedInputs, ZeroInputsAndWeightsYieldTimeEmbedding) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 2);
  m.params().at("embed.state.weight").setZero();
  Graph<double> g;
  const auto [xs, xa] = m.embed_inputs(g, Matrix<double>::Zero(5, 3), as<double>(random_rows(5, 2, 1)));
  EXPECT_EQ(xs.value(), m.params().at("embed.time").topRows(5));
  EXPECT_EQ(xa.rows(), 5);
}

TEST(EmbedInputs, SingleStepShapes) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 2);
  Graph<double> g;
  const auto [xs, xa] = m.embed_inputs(g, as<double>(random_rows(1, 3, 2)), as<double>(random_rows(1, 2, 3)));
  EXPECT_EQ(xs.rows(), 1);
  EXPECT_EQ(xs.cols(), 8);
  EXPECT_EQ(xa.rows(), 1);
  EXPECT_EQ(xa.cols(), 8);
}

TEST(EmbedInputs, RowLocality) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 2);
  Eigen::MatrixXd s = random_rows(6, 3, 4);
  const Eigen::MatrixXd a = random_rows(6, 2, 5);
  Graph<double> g1, g2;
  const auto xs1 = m.embed_inputs(g1, as<double>(s), as<double>(a)).first.value();
  s.row(3) += random_rows(1, 3, 6);
  const auto xs2 = m.embed_inputs(g2, as<double>(s), as<double>(a)).first.value();
  for (int t = 0; t < 6; ++t) {
    if (t == 3) EXPECT_NE(xs1.row(t), xs2.row(t));
    else EXPECT_EQ(xs1.row(t), xs2.row(t));
  }
}

TEST(EmbedInputs, TooLongIsContractError) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 2);
  Graph<double> g;
  EXPECT_THROW(m.embed_inputs(g, Matrix<double>::Zero(17, 3), Matrix<double>::Zero(17, 2)), ContractError);
}

TEST(IntraEncode, PerturbingLastRowLeavesPrefixBitIdentical) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 7);
  Matrix<double> x = as<double>(random_rows(6, 8, 8));
  Graph<double> g1, g2;
  const auto y1 = m.intra_encode(g1, g1.constant(x), Modality::State).value();
  x.row(5) += as<double>(random_rows(1, 8, 9));
  const auto y2 = m.intra_encode(g2, g2.constant(x), Modality::State).value();
  EXPECT_EQ(y1.topRows(5), y2.topRows(5));
  EXPECT_NE(y1.row(5), y2.row(5));
}

TEST(IntraEncode, SingleTokenMatchesAnalyticPath) {
  // With one token the attention weight is 1, so each block reduces to
  // x + W_o (LN(x) W_v) + b_o followed by the feed-forward residual.
  RewardModel<double> m(tiny(Variant::PrefMMT), 10);
  const Matrix<double> x = as<double>(random_rows(1, 8, 11));
  AttentionTrace<double> trace;
  Graph<double> g;
  const auto y = m.intra_encode(g, g.constant(x), Modality::Action, &trace).value();
  for (const auto& w : trace.intra_action) EXPECT_EQ(w(0, 0), 1.0);

  auto ln = [](const Matrix<double>& v, const Matrix<double>& gain, const Matrix<double>& bias) {
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    return Matrix<double>(((v.array() - mean) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(gain) + bias);
  };
  auto gelu = [](const Matrix<double>& v) {
    return Matrix<double>(v.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }));
  };
  const auto& P = m.params();
  Matrix<double> h = x;
  for (int l = 0; l < 3; ++l) {
    const std::string pre = "intra.action." + std::to_string(l);
    const Matrix<double> n1 = ln(h, P.at(pre + ".ln1.gain"), P.at(pre + ".ln1.bias"));
    h = h + (n1 * P.at(pre + ".attn.value")) * P.at(pre + ".attn.out.weight") + P.at(pre + ".attn.out.bias");
    const Matrix<double> n2 = ln(h, P.at(pre + ".ln2.gain"), P.at(pre + ".ln2.bias"));
    const Matrix<double> f1 = gelu(n2 * P.at(pre + ".ffn.fc1.weight") + P.at(pre + ".ffn.fc1.bias"));
    h = h + f1 * P.at(pre + ".ffn.fc2.weight") + P.at(pre + ".ffn.fc2.bias");
  }
  EXPECT_LE((y - h).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IntraEncode, PrefixRecomputationOracle) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 12);
  const Matrix<double> x = as<double>(random_rows(8, 8, 13));
  Graph<double> g;
  const auto full = m.intra_encode(g, g.constant(x), Modality::State).value();
  for (int k = 1; k <= 8; ++k) {
    Graph<double> gk;
    const auto part = m.intra_encode(gk, gk.constant(Matrix<double>(x.topRows(k))), Modality::State).value();
    EXPECT_LE((part - full.topRows(k)).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
  }
}

TEST(CrossAttend, SingleStepCopiesOtherValueRow) {
  // With zero-width FFN contribution (fc2 zeroed) and zero out-projection
  // bias, z^S = x^S + (LN(x^A) W_v^A) W_o^S exactly.
  RewardModel<double> m(tiny(Variant::PrefInter), 14);
  auto& P = m.params();
  P.at("inter.0.state.ffn.fc2.weight").setZero();
  P.at("inter.0.action.ffn.fc2.weight").setZero();
  P.at("inter.0.state.attn.out.weight").setIdentity();
  const Matrix<double> xs = as<double>(random_rows(1, 8, 15));
  const Matrix<double> xa = as<double>(random_rows(1, 8, 16));
  AttentionTrace<double> trace;
  Graph<double> g;
  const auto [zs, za] = m.cross_attend(g, g.constant(xs), g.constant(xa), &trace);
  for (const auto& w : trace.inter_state) EXPECT_EQ(w(0, 0), 1.0);
  const double mean = xa.mean();
  const double var = (xa.array() - mean).square().mean();
  const Matrix<double> na = ((xa.array() - mean) / std::sqrt(var + 1e-5)).matrix();
  const Matrix<double> v = na * P.at("inter.0.action.attn.value");
  EXPECT_LE((zs.value() - xs - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttend, PerturbingLastActionLeavesStatePrefix) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 17);
  const Matrix<double> xs = as<double>(random_rows(6, 8, 18));
  Matrix<double> xa = as<double>(random_rows(6, 8, 19));
  Graph<double> g1, g2;
  const auto z1 = m.cross_attend(g1, g1.constant(xs), g1.constant(xa)).first.value();
  xa.row(5) += as<double>(random_rows(1, 8, 20));
  const auto z2 = m.cross_attend(g2, g2.constant(xs), g2.constant(xa)).first.value();
  EXPECT_EQ(z1.topRows(5), z2.topRows(5));
  EXPECT_NE(z1.row(5), z2.row(5));
}

TEST(CrossAttend, TiedWeightsAndEqualInputsAreSymmetric) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 21);
  auto& P = m.params();
  for (auto& [name, buf] : P) {
    const std::string prefix = "inter.0.action.";
    if (name.rfind(prefix, 0) == 0) buf = P.at("inter.0.state." + name.substr(prefix.size()));
  }
  const Matrix<double> x = as<double>(random_rows(5, 8, 22));
  Graph<double> g;
  const auto [zs, za] = m.cross_attend(g, g.constant(x), g.constant(x));
  EXPECT_EQ(zs.value(), za.value());
}

TEST(CrossAttend, LengthMismatchIsContractError) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 23);
  Graph<double> g;
  EXPECT_THROW(m.cross_attend(g, g.constant(Matrix<double>::Zero(3, 8)), g.constant(Matrix<double>::Zero(4, 8))),
               ContractError);
}

TEST(PoolRewards, EqualStreamsUseOneStream) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 24);
  randomize_head(m, 25);
  const Matrix<double> z = as<double>(random_rows(4, 8, 26));
  Graph<double> g;
  const auto r = m.pool_rewards(g, g.constant(z), g.constant(z)).value();
  const Matrix<double> expect =
      (z * m.params().at("head.weight")).array() + m.params().at("head.bias")(0, 0);
  EXPECT_LE((r - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoolRewards, ZeroHeadGivesZeroRewards) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 27);
  const auto seq = m.score(random_rows(6, 3, 28), random_rows(6, 2, 29));
  EXPECT_TRUE(seq.rewards.isZero(0.0));
  EXPECT_EQ(seq.score, 0.0);
}

TEST(PoolRewards, ScoreMatchesPerStepRecomputation) {
  RewardModel<double> m(tiny(Variant::PrefMMT), 30);
  randomize_head(m, 31);
  const Matrix<double> zs = as<double>(random_rows(7, 8, 32));
  const Matrix<double> za = as<double>(random_rows(7, 8, 33));
  Graph<double> g;
  const auto r = m.pool_rewards(g, g.constant(zs), g.constant(za)).value();
  double total = 0.0;
  for (int t = 0; t < 7; ++t) {
    double rt = m.params().at("head.bias")(0, 0);
    for (int j = 0; j < 8; ++j) rt += 0.5 * (zs(t, j) + za(t, j)) * m.params().at("head.weight")(j, 0);
    EXPECT_NEAR(r(t, 0), rt, 1e-12);
    total += rt;
  }
  EXPECT_NEAR(r.sum(), total, 1e-6);
}

TEST(Score, MrPermutationEquivariance) {
  RewardModel<double> m(tiny(Variant::MR), 34);
  randomize_head(m, 35);
  const auto s = random_rows(6, 3, 36);
  const auto a = random_rows(6, 2, 37);
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  Eigen::MatrixXd sp(6, 3), ap(6, 2);
  for (int i = 0; i < 6; ++i) {
    sp.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
    ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
  }
  const auto r = m.score(s, a);
  const auto rp = m.score(sp, ap);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(rp.rewards(i), r.rewards(perm[static_cast<std::size_t>(i)]));
  EXPECT_NEAR(rp.score, r.score, 1e-12);
}

TEST(Score, ScoreIsSumOfRewardsForEveryVariant) {
  for (Variant v : kAllVariants) {
    RewardModel<float> m(tiny(v), 38);
    randomize_head(m, 39);
    const auto seq = m.score(random_rows(9, 3, 40), random_rows(9, 2, 41));
    EXPECT_EQ(seq.rewards.size(), 9) << to_string(v);
    EXPECT_NEAR(seq.score, seq.rewards.sum(), 1e-6) << to_string(v);
  }
}

TEST(Score, ForwardIsDeterministic) {
  for (Variant v : kAllVariants) {
    RewardModel<float> a(tiny(v), 42), b(tiny(v), 42);
    randomize_head(a, 43);
    randomize_head(b, 43);
    const auto s = random_rows(8, 3, 44);
    const auto act = random_rows(8, 2, 45);
    EXPECT_EQ(a.score(s, act).rewards, b.score(s, act).rewards) << to_string(v);
  }
}

TEST(Score, CausalityForSequenceVariants) {
  for (Variant v : {Variant::PrefMMT, Variant::PrefIntra, Variant::PrefInter, Variant::UniSeq}) {
    RewardModel<double> m(tiny(v), 46);
    randomize_head(m, 47);
    const auto s = random_rows(8, 3, 48);
    const auto a = random_rows(8, 2, 49);
    const auto base = m.score(s, a).rewards;
    for (int t = 0; t < 7; ++t) {
      Eigen::MatrixXd s2 = s, a2 = a;
      s2.bottomRows(7 - t) = random_rows(7 - t, 3, 50 + static_cast<std::uint64_t>(t));
      a2.bottomRows(7 - t) = random_rows(7 - t, 2, 60 + static_cast<std::uint64_t>(t));
      const auto r = m.score(s2, a2).rewards;
      for (int k = 0; k <= t; ++k) EXPECT_LE(std::abs(r(k) - base(k)), 1e-9) << to_string(v) << " t=" << t;
    }
  }
}

TEST(Score, MrLocalityIsBitExact) {
  RewardModel<double> m(tiny(Variant::MR), 70);
  randomize_head(m, 71);
  const auto s = random_rows(8, 3, 72);
  const auto a = random_rows(8, 2, 73);
  const auto base = m.score(s, a).rewards;
  for (int t = 0; t < 8; ++t) {
    Eigen::MatrixXd s2 = random_rows(8, 3, 80 + static_cast<std::uint64_t>(t));
    Eigen::MatrixXd a2 = random_rows(8, 2, 90 + static_cast<std::uint64_t>(t));
    s2.row(t) = s.row(t);
    a2.row(t) = a.row(t);
    const auto single = m.score(s.row(t), a.row(t)).rewards;
    EXPECT_EQ(m.score(s2, a2).rewards(t), base(t));
    EXPECT_EQ(single(0), base(t));
  }
}

TEST(Score, WrongFeatureWidthIsShapeError) {
  RewardModel<float> m(tiny(Variant::PrefMMT), 74);
  EXPECT_THROW(m.score(random_rows(4, 4, 1), random_rows(4, 2, 2)), ShapeError);
  RewardModel<float> mr(tiny(Variant::MR), 75);
  EXPECT_THROW(mr.score(random_rows(4, 3, 1), random_rows(4, 3, 2)), ShapeError);
}

TEST(GradCheck, FullPrefMMTAtTinyScale) {
  ModelConfig c = tiny(Variant::PrefMMT, 8, 2);
  c.max_len = 4;
  RewardModel<double> m(c, 76);
  randomize_head(m, 77);
  const Matrix<double> s = as<double>(random_rows(4, 3, 78));
  const Matrix<double> a = as<double>(random_rows(4, 2, 79));
  const Matrix<double> w = as<double>(random_rows(4, 1, 80));
  std::vector<NamedBuffer> buffers;
  for (auto& [name, buf] : m.params()) buffers.push_back({name, &buf});
  const auto report = grad_check(
      [&](Graph<double>& g) {
        auto r = m.forward(g, s, a);
        return sum(hadamard(r, g.constant(w)));
      },
      buffers);
  EXPECT_TRUE(report.passed) << "max relative error " << report.max_rel_error;
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error;
}

TEST(GradCheck, EveryVariantAtTinyScale) {
  for (Variant v : {Variant::MR, Variant::PrefIntra, Variant::PrefInter, Variant::UniSeq}) {
    ModelConfig c = tiny(v, 8, 2);
    c.max_len = 4;
    c.n_intra_layers = 1;
    c.mlp_hidden = {6};
    RewardModel<double> m(c, 81);
    randomize_head(m, 82);
    const Matrix<double> s = as<double>(random_rows(4, 3, 83));
    const Matrix<double> a = as<double>(random_rows(4, 2, 84));
    std::vector<NamedBuffer> buffers;
    for (auto& [name, buf] : m.params()) buffers.push_back({name, &buf});
    const auto report = grad_check(
        [&](Graph<double>& g) {
          auto r = m.forward(g, s, a);
          return sum(hadamard(r, r));
        },
        buffers);
    EXPECT_TRUE(report.passed) << to_string(v) << " " << report.max_rel_error;
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (Variant v : kAllVariants) {
    RewardModel<float> m(tiny(v), 85);
    randomize_head(m, 86);
    const auto p1 = temp_path("a_" + to_string(v) + ".ckpt");
    const auto p2 = temp_path("b_" + to_string(v) + ".ckpt");
    save_checkpoint(m, p1);
    const auto back = load_checkpoint(p1);
    save_checkpoint(back, p2);
    EXPECT_EQ(read_file(p1), read_file(p2));
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(back.params(), m.params());
  }
}

TEST(Checkpoint, ForwardPassIsBitIdenticalAfterLoad) {
  RewardModel<float> m(tiny(Variant::PrefMMT), 87);
  randomize_head(m, 88);
  const auto p = temp_path("forward.ckpt");
  save_checkpoint(m, p);
  const auto back = load_checkpoint(p);
  const auto s = random_rows(10, 3, 89);
  const auto a = random_rows(10, 2, 90);
  EXPECT_EQ(m.score(s, a).rewards, back.score(s, a).rewards);
}

TEST(Checkpoint, MismatchedConfigIsCheckpointError) {
  RewardModel<float> m(tiny(Variant::PrefMMT), 91);
  const auto p = temp_path("mismatch.ckpt");
  save_checkpoint(m, p);
  auto other = tiny(Variant::PrefMMT, 16, 2);
  EXPECT_THROW(load_checkpoint(p, other), CheckpointError);
  EXPECT_THROW(RewardModel<float>(other, m.params()), CheckpointError);
}

TEST(Checkpoint, TruncatedFileIsCheckpointError) {
  RewardModel<float> m(tiny(Variant::PrefMMT), 92);
  const auto p = temp_path("truncated.ckpt");
  save_checkpoint(m, p);
  const std::string bytes = read_file(p);
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << bytes.substr(0, bytes.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
}
