#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "dfopt/actions.hpp"
#include "dfopt/benchmarks.hpp"
#include "dfopt/model.hpp"

using namespace dfopt;

namespace {

std::vector<uint8_t> random_features(std::mt19937_64& rng, int max_pairs) {
  std::vector<uint8_t> x(static_cast<size_t>(max_pairs) * kChannels, 0);
  std::uniform_int_distribution<int> coin(0, 3);
  for (auto& v : x) v = coin(rng) == 0 ? 1 : 0;
  return x;
}

// Independent forward pass: materializes each window as an explicit vector
// and walks filters in the inner loop, unlike the library implementation.
double reference_forward(const ModelParams& p, const std::vector<uint8_t>& x) {
  int npos = p.max_pairs - kWindow + 1;
  std::vector<double> pooled(kFilters, -std::numeric_limits<double>::infinity());
  for (int pos = 0; pos < npos; ++pos) {
    std::vector<double> window;
    for (int t = 0; t < kWindow; ++t)
      for (int c = 0; c < kChannels; ++c)
        window.push_back(static_cast<double>(x[(pos + t) * kChannels + c]));
    for (int f = 0; f < kFilters; ++f) {
      double z = p.conv_b[f];
      for (size_t i = 0; i < window.size(); ++i)
        z += p.conv_w[f * kWindow * kChannels + i] * window[i];
      double a = std::max(0.0, z);
      pooled[f] = std::max(pooled[f], a);
    }
  }
  double logit = p.out_b;
  for (int f = 0; f < kFilters; ++f) logit += p.out_w[f] * pooled[f];
  return 1.0 / (1.0 + std::exp(-logit));
}

std::vector<uint8_t> features_of(const Program& prog, int max_pairs = kDefaultMaxPairs) {
  return flatten_features(pad_sequence(featurize(prog), max_pairs));
}

}  // namespace

TEST_CASE("zero parameters give 0.5 regardless of input") {
  ModelParams p = zero_params();
  std::vector<uint8_t> zeros(static_cast<size_t>(p.max_pairs) * kChannels, 0);
  CHECK(forward_flat(p, zeros) == 0.5);
  std::mt19937_64 rng(1);
  CHECK(forward_flat(p, random_features(rng, p.max_pairs)) == 0.5);
}

TEST_CASE("forward matches an independently coded reference pass") {
  ModelParams p = init_params(42);
  std::mt19937_64 rng(43);
  for (int i = 0; i < 20; ++i) {
    std::vector<uint8_t> x = random_features(rng, p.max_pairs);
    CHECK_THAT(forward_flat(p, x), Catch::Matchers::WithinAbs(reference_forward(p, x), 1e-6));
  }
  std::vector<uint8_t> real = features_of(make_benchmark("logreg"));
  CHECK_THAT(forward_flat(p, real), Catch::Matchers::WithinAbs(reference_forward(p, real), 1e-6));
}

TEST_CASE("forward output stays inside (0,1) and rejects bad shapes") {
  ModelParams p = init_params(7);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    double v = forward_flat(p, random_features(rng, p.max_pairs));
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  std::vector<uint8_t> bad(10, 0);
  CHECK_THROWS_AS(forward_flat(p, bad), ModelError);
}

TEST_CASE("max pool tolerates interior shifts of a feature block") {
  ModelParams p = init_params(1234);
  std::vector<uint8_t> a(static_cast<size_t>(p.max_pairs) * kChannels, 0);
  std::vector<uint8_t> b = a;
  // Three non-zero pair vectors at positions 20..22, then shifted to 21..23.
  for (int pos = 20; pos < 23; ++pos)
    for (int c = 0; c < kChannels; c += 2) {
      a[pos * kChannels + c] = 1;
      b[(pos + 1) * kChannels + c] = 1;
    }
  CHECK(forward_flat(p, a) == forward_flat(p, b));
}

TEST_CASE("gradient check: analytic matches finite differences") {
  std::mt19937_64 rng(4200);
  for (int draw = 0; draw < 10; ++draw) {
    ModelParams p = init_params(1000 + draw);
    std::vector<uint8_t> x = random_features(rng, p.max_pairs);
    double y = draw % 2;
    CHECK(grad_check(p, x, y) < 1e-4);
  }
}

TEST_CASE("gradient check detects a corrupted gradient") {
  ModelParams p = init_params(77);
  std::mt19937_64 rng(78);
  std::vector<uint8_t> x = random_features(rng, p.max_pairs);
  Gradients g = compute_gradients(p, x, 1.0);
  for (size_t i = 0; i < g.conv_w.size(); i += 7) g.conv_w[i] = g.conv_w[i] * 1.5 + 0.1;
  CHECK(gradient_discrepancy(p, x, 1.0, g) > 1e-2);
}

TEST_CASE("zero input, zero params: only the output bias has gradient") {
  ModelParams p = zero_params();
  std::vector<uint8_t> x(static_cast<size_t>(p.max_pairs) * kChannels, 0);
  for (double y : {0.0, 1.0}) {
    Gradients g = compute_gradients(p, x, y);
    for (double v : g.conv_w) CHECK(v == 0.0);
    for (double v : g.conv_b) CHECK(v == 0.0);
    CHECK(g.out_b == 0.5 - y);
  }
}

TEST_CASE("training overfits a single positive example") {
  DatasetRecord rec;
  rec.features = features_of(make_benchmark("kmeans"));
  rec.label = 1;
  TrainConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.epochs = 400;
  cfg.seed = 5;
  TrainResult tr = train({rec}, cfg);
  CHECK(forward_flat(tr.params, rec.features) > 0.9);
}

TEST_CASE("labels independent of features train to the entropy floor") {
  // Identical feature rows with half-and-half labels: nothing to learn, so
  // the loss can only descend to the base-rate entropy ln 2.
  std::mt19937_64 rng(31337);
  std::vector<uint8_t> shared = random_features(rng, kDefaultMaxPairs);
  std::vector<DatasetRecord> data;
  for (int i = 0; i < 120; ++i) {
    DatasetRecord r;
    r.features = shared;
    r.label = i % 2;
    data.push_back(std::move(r));
  }
  TrainConfig cfg;
  cfg.seed = 9;
  TrainResult tr = train(data, cfg);
  CHECK_THAT(tr.epoch_losses.back(), Catch::Matchers::WithinAbs(std::log(2.0), 0.1));
}

TEST_CASE("training is reproducible under a seed") {
  std::mt19937_64 rng(222);
  std::vector<DatasetRecord> data;
  for (int i = 0; i < 40; ++i) {
    DatasetRecord r;
    r.features = random_features(rng, kDefaultMaxPairs);
    r.label = i % 3 == 0;
    data.push_back(std::move(r));
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 77;
  std::string a = serialize_model(train(data, cfg).params);
  std::string b = serialize_model(train(data, cfg).params);
  CHECK(a == b);
}

TEST_CASE("model files round trip at full precision") {
  ModelParams p = init_params(31);
  ModelParams q = parse_model(serialize_model(p));
  CHECK(q.conv_w == p.conv_w);
  CHECK(q.conv_b == p.conv_b);
  CHECK(q.out_w == p.out_w);
  CHECK(q.out_b == p.out_b);
  CHECK(q.max_pairs == p.max_pairs);
  CHECK_THROWS_AS(parse_model("garbage"), ModelError);
  CHECK_THROWS_AS(parse_model("dfopt-model 1\nmax_pairs 64\n"), ModelError);
}

TEST_CASE("train rejects bad configs and empty data") {
  TrainConfig cfg;
  CHECK_THROWS_AS(train({}, cfg), ModelError);
  DatasetRecord r;
  r.features.assign(kDefaultMaxPairs * kChannels, 0);
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(train({r}, cfg), ModelError);
  cfg.learning_rate = 0.05;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train({r}, cfg), ModelError);
}

TEST_CASE("prior caches by content and floors oversized programs") {
  ModelParams params = init_params(91);
  PriorFn prior = make_prior(params);
  Program p = make_benchmark("logreg");
  double v1 = prior(p);
  double v2 = prior(p);
  CHECK(v1 == v2);
  CHECK(v1 > 0.0);
  CHECK(v1 < 1.0);

  // 13 entities -> 78 pairs > 64: the prior falls back to the floor.
  std::string text;
  for (int i = 0; i < 13; ++i)
    text += "load e" + std::to_string(i) + " 10 10 big\n";
  CHECK(prior(parse_program(text)) == 0.01);
}
