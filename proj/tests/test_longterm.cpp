#include "doctest.h"

#include "jarvis/longterm/longterm.hpp"
#include "jarvis/numerics/grad_check.hpp"
#include "jarvis/synthdata/dataset_io.hpp"
#include "jarvis/training/training.hpp"

#include <cstring>

using namespace jarvis;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.embed_dim = 16;
  m.layers = 1;
  m.heads = 2;
  m.ffn_dim = 32;
  m.dropout = 0.0;
  m.attention_dropout = 0.0;
  return m;
}

std::vector<Tensor> random_scores(RngStream& rng, int windows, int classes, int k) {
  std::vector<Tensor> s;
  for (int n = 0; n < windows; ++n) {
    Tensor t(classes, k);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform();
    s.push_back(t);
  }
  return s;
}

// K proposals sitting on K ground-truth actors; window n=0 scores reveal the
// labels, every other window is noise.
AggregationExample informative_keyframe_example(RngStream& rng, const WindowingConfig& w, int classes, int k) {
  AggregationExample ex;
  std::vector<GroundTruthActor> actors;
  for (int i = 0; i < k; ++i) {
    const double x = 0.05 + 0.09 * i;
    ActorProposal p;
    p.box = BoundingBox{x, 0.2, x + 0.08, 0.6};
    p.person_score = 0.9;
    p.feature = Vector::Zero(4);
    p.geometry = geometry_vector(p.box);
    ex.proposals.push_back(p);
    GroundTruthActor a{p.box, {}};
    for (int c = 0; c < classes; ++c)
      if (rng.uniform() < 0.3) a.classes.push_back(c);
    actors.push_back(a);
  }
  ex.targets = pad_targets(actors, static_cast<std::size_t>(k), classes);
  for (int n = w.n_min(); n <= w.n_max(); ++n) {
    Tensor s(classes, k);
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < classes; ++c) {
        const bool on = ex.targets.entries[j] && ex.targets.entries[j]->labels(c) > 0.5;
        s(c, j) = n == 0 ? (on ? 0.85 : 0.1) + 0.05 * rng.uniform() : rng.uniform();
      }
    ex.windows.offsets.push_back(n);
    ex.windows.scores.push_back(s);
  }
  return ex;
}

}  // namespace

TEST_CASE("window enumeration") {
  SUBCASE("no reach gives one window on the keyframe") {
    const auto w = windows(WindowingConfig::single_window(), 900.0);
    REQUIRE(w.size() == 1);
    CHECK(w[0].n == 0);
    CHECK(w[0].start == doctest::Approx(898.95));
    CHECK(w[0].end == doctest::Approx(901.05));
  }
  SUBCASE("6 s either side at stride 1") {
    const WindowingConfig c;
    const auto w = windows(c, 10.0);
    REQUIRE(w.size() == 13);
    CHECK(c.window_count() == 13);
    CHECK(w.front().n == -6);
    CHECK(w.back().n == 6);
    for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i].n == w[i - 1].n + 1);
    CHECK(w.front().start == doctest::Approx(10.0 - 6.0 - 1.05));
    CHECK(c.row_of(0) == 6);
  }
  SUBCASE("floor arithmetic") {
    const WindowingConfig c{1.05, 1.05, 5.0, 3.0, 2.0};
    const auto w = windows(c, 0.0);
    REQUIRE(w.size() == 4);
    CHECK(w.front().n == -2);
    CHECK(w.back().n == 1);
    CHECK(w.back().start == doctest::Approx(2.0 - 1.05));
  }
  SUBCASE("support mapping") {
    CHECK(WindowingConfig::from_support(2.1).window_count() == 1);
    CHECK(WindowingConfig::from_support(12.0).window_count() == 13);
    CHECK(WindowingConfig::from_support(4.0).window_count() == 5);
    CHECK_THROWS_AS(WindowingConfig::from_support(0.0), ConfigError);
  }
  SUBCASE("invalid configs") {
    CHECK_THROWS_AS((WindowingConfig{1.05, 1.05, 6.0, 6.0, 0.0}).validate(), ConfigError);
    CHECK_THROWS_AS((WindowingConfig{1.05, 1.05, 0.5, 6.0, 1.0}).validate(), ConfigError);
    CHECK_THROWS_AS((WindowingConfig{0.0, 1.05, 6.0, 6.0, 1.0}).validate(), ConfigError);
  }
  SUBCASE("JSON round trip") {
    const WindowingConfig c{1.0, 1.2, 4.0, 5.0, 0.5};
    CHECK(to_json(windowing_config_from_json(to_json(c))) == to_json(c));
    auto j = to_json(c);
    j["strde"] = 1;
    CHECK_THROWS_AS(windowing_config_from_json(j), ConfigError);
  }
}

TEST_CASE("score aggregation") {
  RngStream rng(1, 2);
  const auto s = random_scores(rng, 5, 3, 4);

  SUBCASE("one-hot keyframe weights reproduce the keyframe window") {
    const auto w = AggregationWeights::one_hot(5, 3, 2);
    CHECK(bit_equal(aggregate(s, w, {Strategy::WeightedSum, 1}), s[2]));
  }
  SUBCASE("uniform weights equal the average bit for bit") {
    const auto w = AggregationWeights::uniform(5, 3);
    CHECK(bit_equal(aggregate(s, w, {Strategy::WeightedSum, 1}), aggregate(s, w, {Strategy::Avg, 1})));
  }
  SUBCASE("hand dot product") {
    std::vector<Tensor> three{Tensor::Constant(1, 1, 0.2), Tensor::Constant(1, 1, 0.9), Tensor::Constant(1, 1, 0.4)};
    AggregationWeights w{Tensor(3, 1)};
    w.A << 0.1, 0.8, 0.1;
    CHECK(aggregate(three, w, {Strategy::WeightedSum, 1})(0, 0) == doctest::Approx(0.78).epsilon(1e-12));
  }
  SUBCASE("linear in A") {
    for (int trial = 0; trial < 50; ++trial) {
      AggregationWeights a{Tensor::Random(5, 3)}, b{Tensor::Random(5, 3)}, ab{a.A + b.A};
      const Tensor lhs = aggregate(s, ab, {Strategy::WeightedSum, 1});
      const Tensor rhs = aggregate(s, a, {Strategy::WeightedSum, 1}) + aggregate(s, b, {Strategy::WeightedSum, 1});
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("top-k relations") {
    const AggregationWeights none{Tensor()};
    CHECK(bit_equal(aggregate(s, none, {Strategy::Max, 1}), aggregate(s, none, {Strategy::TopK, 1})));
    CHECK((aggregate(s, none, {Strategy::Avg, 1}) - aggregate(s, none, {Strategy::TopK, 5})).cwiseAbs().maxCoeff() <
          1e-12);
    const Tensor top2 = aggregate(s, none, {Strategy::TopK, 2});
    std::vector<double> v;
    for (const auto& t : s) v.push_back(t(1, 3));
    std::sort(v.begin(), v.end(), std::greater<>());
    CHECK(top2(1, 3) == doctest::Approx(0.5 * (v[0] + v[1])));
    CHECK_THROWS_AS(aggregate(s, none, {Strategy::TopK, 6}), ConfigError);
  }
  SUBCASE("contract and shape errors") {
    CHECK_THROWS_AS(aggregate(std::vector<Tensor>{}, AggregationWeights{}, {Strategy::Avg, 1}), ContractError);
    CHECK_THROWS_AS(aggregate(s, AggregationWeights::uniform(4, 3), {Strategy::WeightedSum, 1}), DimensionError);
    CHECK(parse_strategy("weighted") == Strategy::WeightedSum);
    CHECK_THROWS_AS(parse_strategy("median"), ConfigError);
  }
  SUBCASE("differentiable weighted sum matches aggregate and finite differences") {
    ParameterSet params;
    const std::size_t a = params.add("A", 5, 3);
    params[a].value = Tensor::Random(5, 3);
    const Tensor r = Tensor::Random(3, 4);
    Tape tape;
    const Var out = weighted_window_sum(tape.parameter(params[a]), s);
    CHECK(bit_equal(out.value(), aggregate(s, AggregationWeights{params[a].value}, {Strategy::WeightedSum, 1})));
    const auto report = grad_check(params, [&](Tape& t) {
      return sum(hadamard(weighted_window_sum(t.parameter(params[a]), s), t.constant(r)));
    });
    CHECK(report.passed());
  }
}

TEST_CASE("aggregation loss gradient matches finite differences") {
  RngStream rng(4, 4);
  const WindowingConfig w{1.05, 1.05, 2.0, 2.0, 1.0};
  const auto ex = informative_keyframe_example(rng, w, 4, 5);
  LossConfig loss;
  ParameterSet params;
  const std::size_t a = params.add("A", w.window_count(), 4);
  // strictly inside the probability clamp so the loss is smooth
  for (Eigen::Index i = 0; i < params[a].value.size(); ++i) params[a].value.data()[i] = rng.uniform(0.1, 0.25);
  const auto report = grad_check(params, [&](Tape& t) { return aggregation_loss(t.parameter(params[a]), ex, loss); });
  CHECK(report.passed());

  // a step against the gradient lowers the loss
  params.zero_grad();
  Tape tape;
  const Var l0 = aggregation_loss(tape.parameter(params[a]), ex, loss);
  tape.backward(l0);
  const Tensor grad = params[a].grad;
  params[a].value -= 1e-3 * grad;
  Tape tape2;
  CHECK(aggregation_loss(tape2.parameter(params[a]), ex, loss).value()(0, 0) < l0.value()(0, 0));
}

TEST_CASE("train_aggregation") {
  RngStream init(2, 2);
  ModelConfig mc = tiny_model();
  mc.num_classes = 6;
  ModelParams model = init_model(mc, init);

  SUBCASE("refuses a model that is not frozen") {
    const WindowingConfig w{1.05, 1.05, 2.0, 2.0, 1.0};
    RngStream rng(1, 1);
    std::vector<AggregationExample> ex{informative_keyframe_example(rng, w, 6, 4)};
    CHECK_THROWS_AS(train_aggregation(model, ex, w, LossConfig{}, AggregationTrainConfig{}), ContractError);
  }
  SUBCASE("concentrates on the only informative window") {
    model.params.set_frozen(true);
    const auto hash = hash_values(model.params);
    const WindowingConfig w{1.05, 1.05, 3.0, 3.0, 1.0};
    RngStream rng(5, 1);
    std::vector<AggregationExample> ex;
    for (int i = 0; i < 24; ++i) ex.push_back(informative_keyframe_example(rng, w, 6, 5));
    AggregationTrainConfig cfg;
    cfg.epochs = 15;
    std::vector<AggregationTrainLog> log;
    const auto weights = train_aggregation(model, ex, w, LossConfig{}, cfg, &log);
    CHECK(hash_values(model.params) == hash);
    REQUIRE(log.size() == 15);
    CHECK(log.back().loss < log.front().loss);
    for (int k = 0; k < 6; ++k) {
      Eigen::Index best = 0;
      weights.A.col(k).maxCoeff(&best);
      CHECK(best == w.row_of(0));
    }
  }
  SUBCASE("checkpoint section round trip") {
    const AggregationWeights w{Tensor::Random(13, 6)};
    CHECK(bit_equal(aggregation_from_section(aggregation_section(w)).A, w.A));
    CHECK_THROWS_AS(aggregation_from_section(CheckpointSection{"aggregation", {}}), ConfigError);
  }
}

TEST_CASE("windowed inference") {
  RngStream init(3, 3);
  ModelConfig mc = tiny_model();
  const ModelParams model = init_model(mc, init);
  ScenarioConfig sc;
  sc.train_clips = 3;
  sc.eval_clips = 0;

  SUBCASE("one window equals plain inference") {
    const auto d = generate_dataset(sc);
    const auto& clip = d.train[0];
    const auto props = sample_proposals(clip.detections, ProposalSampling::top_k(10), 32);
    const auto ws = run_windowed(model, clip, props, WindowingConfig::single_window());
    REQUIRE(ws.scores.size() == 1);
    const Tensor logits = infer_logits(model, props, clip.short_clip(1.05));
    CHECK(bit_equal(ws.scores[0], logits.unaryExpr([](double v) { return sigmoid_value(v); })));
  }
  SUBCASE("time-invariant scene gives equal window scores") {
    auto still = sc;
    still.scene_noise = 0.0;
    still.momentary_probability = 0.0;
    still.sustained_min = 50.0;
    still.sustained_max = 60.0;
    const auto d = generate_dataset(still);
    const auto& clip = d.train[1];
    const auto props = sample_proposals(clip.detections, ProposalSampling::top_k(10), 32);
    const auto ws = run_windowed(model, clip, props, WindowingConfig{});
    REQUIRE(ws.scores.size() == 13);
    for (const auto& s : ws.scores) CHECK(bit_equal(s, ws.scores[6]));
  }
  SUBCASE("time-varying actions change window scores") {
    auto lt = long_term_scenario(sc);
    const auto d = generate_dataset(lt);
    double spread = 0.0;
    for (const auto& clip : d.train) {
      const auto props = sample_proposals(clip.detections, ProposalSampling::top_k(10), 32);
      const auto ws = run_windowed(model, clip, props, WindowingConfig{});
      for (const auto& s : ws.scores) spread = std::max(spread, (s - ws.scores[6]).cwiseAbs().maxCoeff());
    }
    CHECK(spread > 1e-6);
  }
  SUBCASE("windows past the timeline are clamped, not dropped") {
    auto shortline = sc;
    shortline.timeline_half_span = 3.0;
    const auto d = generate_dataset(shortline);
    const auto& clip = d.train[0];
    const auto props = sample_proposals(clip.detections, ProposalSampling::top_k(10), 32);
    const auto ws = run_windowed(model, clip, props, WindowingConfig{});
    REQUIRE(ws.scores.size() == 13);
    CHECK(bit_equal(ws.scores.front(), ws.scores[1]));
    CHECK(bit_equal(ws.scores.back(), ws.scores[11]));
  }
  SUBCASE("single-window weights keep the short-term mAP") {
    sc.train_clips = 8;
    sc.eval_clips = 6;
    const auto d = generate_dataset(sc);
    ModelParams frozen = model;
    frozen.params.set_frozen(true);
    const auto w = WindowingConfig::single_window();
    const auto ex = prepare_aggregation_examples(frozen, d.train, w, 10, 1);
    AggregationTrainConfig cfg;
    cfg.epochs = 5;
    const auto weights = train_aggregation(frozen, ex, w, LossConfig{}, cfg);
    CHECK(weights.A.minCoeff() > 0.0);
    InferenceOptions io;
    const double short_map = evaluate_model(frozen, d.eval, io, 1).mean_ap;
    io.weights = &weights;
    CHECK(std::abs(evaluate_model(frozen, d.eval, io, 1).mean_ap - short_map) <= 1e-9);
  }
}
