#include "doctest.h"

#include "jarvis/numerics/errors.hpp"
#include "jarvis/numerics/grad_check.hpp"
#include "jarvis/relation_model/checkpoint.hpp"
#include "jarvis/relation_model/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <set>

using namespace jarvis;

namespace {

ModelConfig tiny_config(Variant v = Variant::Unified) {
  ModelConfig c;
  c.embed_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 16;
  c.dropout = 0.0;
  c.attention_dropout = 0.0;
  c.num_classes = 3;
  c.actor_feature_dim = 5;
  c.scene_feature_dim = 4;
  c.variant = v;
  return c;
}

std::vector<ActorProposal> random_proposals(int k, int c, RngStream& rng) {
  std::vector<ActorProposal> out;
  for (int i = 0; i < k; ++i) {
    ActorProposal p;
    const double x = rng.uniform(0.0, 0.6), y = rng.uniform(0.0, 0.6);
    p.box = make_box(x, y, x + rng.uniform(0.1, 0.4), y + rng.uniform(0.1, 0.4));
    p.geometry = geometry_vector(p.box);
    p.person_score = rng.uniform();
    p.feature = Vector(c);
    for (int j = 0; j < c; ++j) p.feature(j) = rng.normal();
    out.push_back(p);
  }
  return out;
}

SceneContextGrid random_grid(int h, int w, int t, int c, RngStream& rng) {
  SceneContextGrid g{h, w, t, Tensor(c, h * w * t)};
  for (Eigen::Index i = 0; i < g.features.size(); ++i) g.features.data()[i] = rng.normal();
  return g;
}

Tensor ln_oracle(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tensor out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double mean = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) mean += x(i, j);
    mean /= static_cast<double>(x.rows());
    double var = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * gain(i) + bias(i);
  }
  return out;
}

double gelu_oracle(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// One pre-norm block, single head, written out with explicit loops.
Tensor block_oracle(const ModelParams& m, const Tensor& x) {
  const auto& b = m.encoder[0];
  const auto P = [&](std::size_t i) -> const Tensor& { return m.params[i].value; };
  const double eps = m.config.ln_eps;
  const Eigen::Index d = x.rows(), n = x.cols();
  const Tensor xn = ln_oracle(x, P(b.norm_attn.gain), P(b.norm_attn.bias), eps);
  auto lin = [&](std::size_t w, std::size_t bias, const Tensor& in) {
    Tensor out(P(w).rows(), in.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < in.cols(); ++j) {
        double s = P(bias)(i);
        for (Eigen::Index k = 0; k < in.rows(); ++k) s += P(w)(i, k) * in(k, j);
        out(i, j) = s;
      }
    return out;
  };
  const Tensor q = lin(b.attn.q_w, b.attn.q_b, xn), k = lin(b.attn.k_w, b.attn.k_b, xn),
               v = lin(b.attn.v_w, b.attn.v_b, xn);
  Tensor att(d, n);
  for (Eigen::Index qi = 0; qi < n; ++qi) {
    std::vector<double> logits(n);
    for (Eigen::Index ki = 0; ki < n; ++ki) {
      double s = 0;
      for (Eigen::Index r = 0; r < d; ++r) s += q(r, qi) * k(r, ki);
      logits[ki] = s / std::sqrt(static_cast<double>(d));
    }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    for (Eigen::Index r = 0; r < d; ++r) {
      double s = 0;
      for (Eigen::Index ki = 0; ki < n; ++ki) s += std::exp(logits[ki]) / z * v(r, ki);
      att(r, qi) = s;
    }
  }
  const Tensor z = x + lin(b.attn.o_w, b.attn.o_b, att);
  Tensor hidden = lin(b.mlp.w1, b.mlp.b1, ln_oracle(z, P(b.norm_mlp.gain), P(b.norm_mlp.bias), eps));
  for (Eigen::Index i = 0; i < hidden.size(); ++i) hidden.data()[i] = gelu_oracle(hidden.data()[i]);
  return z + lin(b.mlp.w2, b.mlp.b2, hidden);
}

void randomize(ModelParams& m, RngStream& rng, double s = 0.5) {
  for (auto& p : m.params)
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-s, s);
}

}  // namespace

TEST_CASE("config validation and json round trip") {
  ModelConfig c;
  CHECK(c.embed_dim == 256);
  CHECK(c.layers == 6);
  CHECK(c.heads == 8);
  CHECK(c.ffn_dim == 1024);
  CHECK(c.dropout == 0.1);
  CHECK(c.pre_norm);
  c.heads = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const ModelConfig t = tiny_config(Variant::EncoderDecoder);
  const ModelConfig back = model_config_from_json(to_json(t));
  CHECK(to_json(back) == to_json(t));
  nlohmann::json bad = to_json(t);
  bad["hidden_size"] = 3;
  CHECK_THROWS_AS(model_config_from_json(bad), ConfigError);
  CHECK(parse_variant("dec") == Variant::DecoderOnly);
  CHECK_THROWS_AS(parse_variant("nope"), ConfigError);
}

TEST_CASE("parameter names are unique and shapes follow the config") {
  RngStream rng(1, 0);
  for (Variant v : {Variant::Unified, Variant::DecoderOnly, Variant::EncoderDecoder}) {
    const ModelParams m = init_model(tiny_config(v), rng);
    std::set<std::string> names;
    for (const auto& p : m.params) {
      CHECK(names.insert(p.name).second);
      CHECK(p.grad.rows() == p.value.rows());
      CHECK(p.grad.cols() == p.value.cols());
    }
    CHECK(m.params[m.actor_proj].value.rows() == 8);
    CHECK(m.params[m.actor_proj].value.cols() == 5);
    CHECK(m.params[m.geom_proj].value.cols() == 6);
    CHECK(m.params[m.scene_proj].value.cols() == 4);
    CHECK(m.params[m.head.w2].value.rows() == 3);
  }
}

TEST_CASE("embed_actors") {
  RngStream rng(2, 0);
  ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, rng);
  const auto props = random_proposals(3, cfg.actor_feature_dim, rng);
  Tape t;
  ModelGraph g(t, std::as_const(m));
  const Tensor a = embed_actors(g, props).value();
  Tensor f(5, 3), geo(6, 3);
  for (int i = 0; i < 3; ++i) {
    f.col(i) = props[i].feature;
    geo.col(i) = props[i].geometry;
  }
  const Tensor want = m.params[m.actor_proj].value * f + m.params[m.geom_proj].value * geo;
  CHECK((a - want).cwiseAbs().maxCoeff() < 1e-12);

  m.params[m.geom_proj].value.setZero();
  auto doubled = props;
  for (auto& p : doubled) p.feature *= 2.0;
  Tape t2;
  ModelGraph g2(t2, std::as_const(m));
  const Tensor a1 = embed_actors(g2, props).value(), a2 = embed_actors(g2, doubled).value();
  CHECK((a2 - 2.0 * a1).cwiseAbs().maxCoeff() < 1e-12);

  m.params[m.actor_proj].value.setZero();
  CHECK(embed_actors(g2, props).value().isZero());

  auto wrong = props;
  wrong[1].feature = Vector::Zero(4);
  CHECK_THROWS_AS(embed_actors(g2, wrong), DimensionError);
}

TEST_CASE("sinusoidal_pe") {
  const Tensor pe = sinusoidal_pe(64, 256);
  for (int i = 0; i < 128; ++i) {
    CHECK(pe(2 * i, 0) == 0.0);
    CHECK(pe(2 * i + 1, 0) == 1.0);
  }
  for (int n = 0; n < 64; ++n) CHECK(pe.col(n).squaredNorm() == doctest::Approx(128.0).epsilon(1e-12));
  double min_dist = 1e9;
  for (int a = 0; a < 64; ++a)
    for (int b = a + 1; b < 64; ++b) min_dist = std::min(min_dist, (pe.col(a) - pe.col(b)).norm());
  CHECK(min_dist > 0.0);
  CHECK(pe(2, 5) == doctest::Approx(std::sin(5.0 / std::pow(10000.0, 2.0 / 256.0))).epsilon(1e-14));
  CHECK_THROWS_AS(sinusoidal_pe(4, 7), ConfigError);
}

TEST_CASE("embed_scene") {
  RngStream rng(3, 0);
  ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, rng);
  const SceneContextGrid grid = random_grid(2, 2, 2, cfg.scene_feature_dim, rng);
  Tape t;
  ModelGraph g(t, std::as_const(m));
  const Tensor v = embed_scene(g, grid).value();
  const Tensor want = m.params[m.scene_proj].value * grid.features + sinusoidal_pe(8, 8);
  CHECK((v - want).cwiseAbs().maxCoeff() < 1e-12);

  m.params[m.scene_proj].value.setZero();
  CHECK(embed_scene(g, grid).value() == sinusoidal_pe(8, 8));
  const SceneContextGrid one = random_grid(1, 1, 1, cfg.scene_feature_dim, rng);
  CHECK(embed_scene(g, one).value() == sinusoidal_pe(1, 8));

  const SceneContextGrid wrong = random_grid(2, 2, 1, 3, rng);
  CHECK_THROWS_AS(embed_scene(g, wrong), DimensionError);
  CHECK(SceneContextGrid::token_index(1, 0, 1, 2, 2) == 5);
}

TEST_CASE("encode matches a hand-rolled single-head block") {
  RngStream rng(4, 0);
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 4;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.ffn_dim = 6;
  ModelParams m = init_model(cfg, rng);
  randomize(m, rng);
  Tensor x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Tape t;
  ModelGraph g(t, std::as_const(m));
  const TokenSequence out = encode(g, TokenSequence{t.constant(x), 1, 2}, {});
  CHECK((out.tokens.value() - block_oracle(m, x)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("identity at init with zeroed residual branches") {
  RngStream rng(5, 0);
  for (Variant v : {Variant::Unified, Variant::DecoderOnly, Variant::EncoderDecoder}) {
    for (int layers : {0, 1, 3}) {
      ModelConfig cfg = tiny_config(v);
      cfg.layers = layers;
      ModelParams m = init_model(cfg, rng);
      randomize(m, rng);
      zero_residual_branches(m);
      Tensor actors(8, 3), scene(8, 5);
      for (Eigen::Index i = 0; i < actors.size(); ++i) actors.data()[i] = rng.normal();
      for (Eigen::Index i = 0; i < scene.size(); ++i) scene.data()[i] = rng.normal();
      Tape t;
      ModelGraph g(t, std::as_const(m));
      if (v == Variant::Unified) {
        const std::vector<Var> parts{t.constant(actors), t.constant(scene)};
        const Var j0 = concat_cols(parts);
        CHECK(encode(g, TokenSequence{j0, 3, 5}, {}).tokens.value() == j0.value());
      } else {
        CHECK(encode_variant(g, t.constant(actors), t.constant(scene), {}).value() == actors);
      }
    }
  }
}

TEST_CASE("variant routing") {
  RngStream rng(6, 0);
  const ModelParams uni = init_model(tiny_config(Variant::Unified), rng);
  const ModelParams dec = init_model(tiny_config(Variant::DecoderOnly), rng);
  Tape t;
  ModelGraph gu(t, uni), gd(t, dec);
  const Var x = t.constant(Tensor::Ones(8, 2));
  CHECK_THROWS_AS(encode_variant(gu, x, x, {}), ContractError);
  CHECK_THROWS_AS(encode(gd, TokenSequence{x, 1, 1}, {}), ContractError);
}

TEST_CASE("decoder-only cross-attention over duplicated scene tokens") {
  RngStream rng(7, 0);
  ModelConfig cfg = tiny_config(Variant::DecoderOnly);
  cfg.layers = 1;
  ModelParams m = init_model(cfg, rng);
  randomize(m, rng);
  Tensor actors(8, 2);
  for (Eigen::Index i = 0; i < actors.size(); ++i) actors.data()[i] = rng.normal();
  Vector token(8);
  for (int i = 0; i < 8; ++i) token(i) = rng.normal();
  Tensor reference;
  for (int n : {1, 2, 5}) {
    Tensor scene(8, n);
    for (int j = 0; j < n; ++j) scene.col(j) = token;
    AttentionTrace trace;
    Tape t;
    ModelGraph g(t, std::as_const(m));
    ForwardOptions opt;
    opt.trace = &trace;
    const Tensor out = encode_variant(g, t.constant(actors), t.constant(scene), opt).value();
    if (n == 1) {
      reference = out;
      for (const auto& e : trace.entries) CHECK(e.weights == Tensor::Ones(1, 2));
    } else {
      CHECK((out - reference).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("classify") {
  RngStream rng(8, 0);
  ModelConfig cfg = tiny_config();
  cfg.num_classes = 8;
  ModelParams m = init_model(cfg, rng);
  Tensor x(8, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Tape t;
  ModelGraph g(t, std::as_const(m));
  const auto& P = m.params;
  Tensor h = P[m.head.w1].value * x;
  h.colwise() += Vector(P[m.head.b1].value.col(0));
  h = h.unaryExpr([](double v) { return gelu_oracle(v); });
  const Tensor want = P[m.head.w2].value * h;
  CHECK((classify(g, t.constant(x)).value() - want).cwiseAbs().maxCoeff() < 1e-12);

  // identity pass-through: w1 = I on positive inputs, w2 = I
  m.params[m.head.w1].value = 10.0 * Tensor::Identity(8, 8);
  m.params[m.head.w2].value = 0.1 * Tensor::Identity(8, 8);
  const Tensor pos = x.cwiseAbs() + Tensor::Constant(8, 4, 1.0);
  CHECK((classify(g, t.constant(pos.leftCols(1))).value() - pos.leftCols(1)).cwiseAbs().maxCoeff() < 1e-12);

  for (auto& p : m.params) p.value.setZero();
  const Tensor logits = classify(g, t.constant(x)).value();
  CHECK(logits.isZero());
  RngStream prng(9, 0);
  const auto props = random_proposals(4, cfg.actor_feature_dim, prng);
  for (const auto& p : make_predictions(props, logits)) CHECK((p.scores.array() == 0.5).all());
}

TEST_CASE("select_final") {
  RngStream rng(10, 0);
  const auto props = random_proposals(6, 5, rng);
  Tensor logits(3, 6);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
  const PredictionSet pred = make_predictions(props, logits);

  const PredictionSet all = select_final(pred, 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(all[i].proposal_index == i);
  CHECK_THROWS_AS(select_final(pred, 0), ConfigError);
  CHECK_THROWS_AS(select_final(pred, 7), ContractError);

  PredictionSet spike = pred;
  for (auto& p : spike) {
    p.person_score = 0.0;
  }
  spike[4].person_score = 1.0;
  spike[4].scores.setOnes();
  CHECK(select_final(spike, 1).front().proposal_index == 4);

  // ties resolve to the lower index
  PredictionSet flat = pred;
  for (auto& p : flat) {
    p.person_score = 0.5;
    p.scores.setConstant(0.5);
  }
  const auto two = select_final(flat, 2);
  CHECK(two[0].proposal_index == 0);
  CHECK(two[1].proposal_index == 1);

  for (int trial = 0; trial < 100; ++trial) {
    PredictionSet r = pred;
    for (auto& p : r) {
      p.person_score = rng.uniform();
      for (Eigen::Index k = 0; k < p.scores.size(); ++k) p.scores(k) = rng.uniform();
    }
    const int kp = 1 + static_cast<int>(rng.below(6));
    std::vector<std::pair<double, std::size_t>> conf;
    for (std::size_t i = 0; i < r.size(); ++i) conf.emplace_back(-r[i].person_score * r[i].scores.maxCoeff(), i);
    std::sort(conf.begin(), conf.end());
    std::vector<std::size_t> want;
    for (int i = 0; i < kp; ++i) want.push_back(conf[i].second);
    std::sort(want.begin(), want.end());
    const auto got = select_final(r, kp);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i].proposal_index == want[i]);
  }
}

TEST_CASE("actor permutation equivariance") {
  RngStream rng(11, 0);
  ModelConfig cfg = tiny_config();
  ModelParams m = init_model(cfg, rng);
  randomize(m, rng, 0.4);
  const auto props = random_proposals(5, cfg.actor_feature_dim, rng);
  const auto grid = random_grid(2, 2, 1, cfg.scene_feature_dim, rng);
  const Tensor base = infer_logits(m, props, grid);
  std::vector<int> perm{3, 0, 4, 1, 2};
  std::vector<ActorProposal> shuffled;
  for (int i : perm) shuffled.push_back(props[i]);
  const Tensor permuted = infer_logits(m, shuffled, grid);
  for (int j = 0; j < 5; ++j) CHECK((permuted.col(j) - base.col(perm[j])).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("shape contract across K and N") {
  RngStream rng(12, 0);
  for (Variant v : {Variant::Unified, Variant::DecoderOnly, Variant::EncoderDecoder}) {
    const ModelParams m = init_model(tiny_config(v), rng);
    for (int k : {1, 4}) {
      for (int h : {1, 3}) {
        const auto props = random_proposals(k, 5, rng);
        const auto grid = random_grid(h, 2, 2, 4, rng);
        const Tensor logits = infer_logits(m, props, grid);
        CHECK(logits.rows() == 3);
        CHECK(logits.cols() == k);
        CHECK(all_finite(logits));
      }
    }
  }
  ModelConfig c = tiny_config();
  c.use_scene = false;
  const ModelParams actor_only = init_model(c, rng);
  const auto props = random_proposals(3, 5, rng);
  CHECK(infer_logits(actor_only, props, SceneContextGrid{}).cols() == 3);
}

TEST_CASE("full forward passes grad_check") {
  RngStream rng(13, 0);
  for (Variant v : {Variant::Unified, Variant::DecoderOnly, Variant::EncoderDecoder}) {
    for (bool pre : {true, false}) {
      CAPTURE(to_string(v));
      CAPTURE(pre);
      ModelConfig cfg = tiny_config(v);
      cfg.layers = 1;
      cfg.pre_norm = pre;
      ModelParams m = init_model(cfg, rng);
      const auto props = random_proposals(3, cfg.actor_feature_dim, rng);
      const auto grid = random_grid(2, 2, 1, cfg.scene_feature_dim, rng);
      Tensor w(3, 3);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
      const auto report = grad_check(m.params, [&](Tape& t) {
        ModelGraph g(t, m);
        return sum(hadamard(sigmoid(forward_logits(g, props, grid, {})), t.constant(w)));
      });
      CHECK(report.passed());
      CHECK(report.max_rel_error() <= 1e-4);
    }
  }
}

TEST_CASE("dropout only acts in training mode") {
  RngStream rng(14, 0);
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  cfg.attention_dropout = 0.3;
  const ModelParams m = init_model(cfg, rng);
  const auto props = random_proposals(2, 5, rng);
  const auto grid = random_grid(2, 2, 1, 4, rng);
  const Tensor a = infer_logits(m, props, grid), b = infer_logits(m, props, grid);
  CHECK(a == b);
  Tape t;
  ModelGraph g(t, m);
  RngStream drop(1, 2);
  ForwardOptions opt{&drop, true, nullptr};
  CHECK(forward_logits(g, props, grid, opt).value() != a);
  ForwardOptions missing{nullptr, true, nullptr};
  CHECK_THROWS_AS(forward_logits(g, props, grid, missing), ContractError);
}

TEST_CASE("attention trace") {
  RngStream rng(15, 0);
  ModelConfig cfg = tiny_config();
  const ModelParams m = init_model(cfg, rng);
  const auto props = random_proposals(3, 5, rng);
  const auto grid = random_grid(2, 2, 1, 4, rng);
  AttentionTrace trace;
  infer_logits(m, props, grid, &trace);
  CHECK(trace.entries.size() == static_cast<std::size_t>(cfg.layers * cfg.heads));
  for (const auto& e : trace.entries) {
    CHECK(e.weights.rows() == 7);
    CHECK(e.weights.cols() == 7);
    CHECK((e.weights.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  RngStream rng(16, 0);
  for (Variant v : {Variant::Unified, Variant::EncoderDecoder}) {
    const ModelParams m = init_model(tiny_config(v), rng);
    Checkpoint ck = model_checkpoint(m);
    ck.meta["epoch"] = 3;
    const auto path = std::filesystem::temp_directory_path() / "jarvis_ckpt_test.bin";
    write_checkpoint(path, ck);
    const Checkpoint back = read_checkpoint(path);
    CHECK(back.meta["epoch"] == 3);
    const ModelParams loaded = model_from_checkpoint(back);
    REQUIRE(loaded.params.size() == m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      CHECK(loaded.params[i].name == m.params[i].name);
      CHECK(std::memcmp(loaded.params[i].value.data(), m.params[i].value.data(),
                        sizeof(double) * m.params[i].value.size()) == 0);
    }
    CHECK(hash_values(loaded.params) == hash_values(m.params));
    CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
    std::filesystem::remove(path);
  }
}

TEST_CASE("checkpoint decoding rejects damage") {
  RngStream rng(17, 0);
  const ModelParams m = init_model(tiny_config(), rng);
  const std::string bytes = encode_checkpoint(model_checkpoint(m));
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 8)), IoError);
  CHECK_THROWS_AS(decode_checkpoint("NOT-A-CHECKPOINT 1 2\n{}"), IoError);

  Checkpoint ck = model_checkpoint(m);
  ck.sections[0].tensors.pop_back();
  CHECK_THROWS_AS(model_from_checkpoint(ck), ConfigError);
  Checkpoint shaped = model_checkpoint(m);
  shaped.sections[0].tensors[0].value = Tensor::Zero(1, 1);
  CHECK_THROWS_AS(model_from_checkpoint(shaped), DimensionError);
}
