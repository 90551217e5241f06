#pragma once

// Learned sampling-policy prior: a 1D convolutional classifier over padded
// pair-vector sequences. Nine filters of window 10 over the 6-channel
// sequence, ReLU, global max-pool, then a single sigmoid output neuron giving
// the probability that a state has outsized utility. Trained with binary
// cross-entropy by plain mini-batch gradient descent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_map>

#include "dfopt/features.hpp"
#include "dfopt/program.hpp"

namespace dfopt {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kFilters = 9;
constexpr int kWindow = 10;
constexpr int kChannels = 6;
constexpr int kDefaultMaxPairs = 64;

struct ModelParams {
  int max_pairs = kDefaultMaxPairs;
  std::vector<double> conv_w;   // [filter][window][channel], row-major
  std::vector<double> conv_b;   // [filter]
  std::vector<double> out_w;    // [filter]
  double out_b = 0;

  int positions() const { return max_pairs - kWindow + 1; }
  double& w(int f, int t, int c) { return conv_w[(f * kWindow + t) * kChannels + c]; }
  double w(int f, int t, int c) const { return conv_w[(f * kWindow + t) * kChannels + c]; }

  void check() const {
    if (max_pairs < kWindow) throw ModelError("max_pairs must be >= window size");
    if (conv_w.size() != kFilters * kWindow * kChannels ||
        conv_b.size() != kFilters || out_w.size() != kFilters)
      throw ModelError("model parameter shapes are wrong");
    for (double v : conv_w) if (!std::isfinite(v)) throw ModelError("non-finite parameter");
    for (double v : conv_b) if (!std::isfinite(v)) throw ModelError("non-finite parameter");
    for (double v : out_w) if (!std::isfinite(v)) throw ModelError("non-finite parameter");
    if (!std::isfinite(out_b)) throw ModelError("non-finite parameter");
  }
};

inline ModelParams zero_params(int max_pairs = kDefaultMaxPairs) {
  ModelParams p;
  p.max_pairs = max_pairs;
  p.conv_w.assign(kFilters * kWindow * kChannels, 0.0);
  p.conv_b.assign(kFilters, 0.0);
  p.out_w.assign(kFilters, 0.0);
  p.out_b = 0.0;
  return p;
}

inline ModelParams init_params(uint64_t seed, int max_pairs = kDefaultMaxPairs) {
  ModelParams p = zero_params(max_pairs);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (double& v : p.conv_w) v = dist(rng);
  for (double& v : p.conv_b) v = dist(rng);
  for (double& v : p.out_w) v = dist(rng);
  p.out_b = dist(rng);
  return p;
}

namespace detail {

struct ForwardTrace {
  std::vector<double> pooled;   // [filter]
  std::vector<int> argmax;      // [filter], position of the pooled max
  double logit = 0;
  double prob = 0;
};

template <typename Feat>
inline ForwardTrace forward_trace(const ModelParams& p, const Feat& x) {
  if (static_cast<int>(x.size()) != p.max_pairs * kChannels)
    throw ModelError("input length " + std::to_string(x.size()) + " does not match max_pairs " +
                     std::to_string(p.max_pairs));
  ForwardTrace tr;
  tr.pooled.assign(kFilters, 0.0);
  tr.argmax.assign(kFilters, 0);
  int npos = p.positions();
  for (int f = 0; f < kFilters; ++f) {
    double best = -1;  // ReLU output is >= 0, so any activation beats this
    int best_pos = 0;
    for (int pos = 0; pos < npos; ++pos) {
      double z = p.conv_b[f];
      for (int t = 0; t < kWindow; ++t)
        for (int c = 0; c < kChannels; ++c)
          z += p.w(f, t, c) * static_cast<double>(x[(pos + t) * kChannels + c]);
      double a = z > 0 ? z : 0;
      if (a > best) { best = a; best_pos = pos; }
    }
    tr.pooled[f] = best;
    tr.argmax[f] = best_pos;
  }
  tr.logit = p.out_b;
  for (int f = 0; f < kFilters; ++f) tr.logit += p.out_w[f] * tr.pooled[f];
  tr.prob = 1.0 / (1.0 + std::exp(-tr.logit));
  return tr;
}

inline double bce_from_logit(double logit, double y) {
  // softplus(logit) - y * logit, computed stably
  double sp = std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
  return sp - y * logit;
}

}  // namespace detail

inline double forward(const ModelParams& p, const PairVectorSequence& x) {
  return detail::forward_trace(p, flatten_features(x)).prob;
}

inline double forward_flat(const ModelParams& p, const std::vector<uint8_t>& x) {
  return detail::forward_trace(p, x).prob;
}

struct Gradients {
  std::vector<double> conv_w;
  std::vector<double> conv_b;
  std::vector<double> out_w;
  double out_b = 0;
};

inline Gradients zero_gradients(const ModelParams& p) {
  Gradients g;
  g.conv_w.assign(p.conv_w.size(), 0.0);
  g.conv_b.assign(p.conv_b.size(), 0.0);
  g.out_w.assign(p.out_w.size(), 0.0);
  return g;
}

// Gradient of the cross-entropy loss for one example, accumulated into g.
// Max-pool routes gradient to the argmax position; ReLU gates it off when the
// pooled activation is zero.
inline double accumulate_gradients(const ModelParams& p, const std::vector<uint8_t>& x,
                                   double y, Gradients& g) {
  detail::ForwardTrace tr = detail::forward_trace(p, x);
  double dlogit = tr.prob - y;
  g.out_b += dlogit;
  for (int f = 0; f < kFilters; ++f) {
    g.out_w[f] += dlogit * tr.pooled[f];
    if (tr.pooled[f] <= 0) continue;
    double dz = dlogit * p.out_w[f];
    int pos = tr.argmax[f];
    g.conv_b[f] += dz;
    for (int t = 0; t < kWindow; ++t)
      for (int c = 0; c < kChannels; ++c)
        g.conv_w[(f * kWindow + t) * kChannels + c] +=
            dz * static_cast<double>(x[(pos + t) * kChannels + c]);
  }
  return detail::bce_from_logit(tr.logit, y);
}

inline Gradients compute_gradients(const ModelParams& p, const std::vector<uint8_t>& x,
                                   double y) {
  Gradients g = zero_gradients(p);
  accumulate_gradients(p, x, y, g);
  return g;
}

namespace detail {

template <typename Get>
inline double central_difference(const ModelParams& p, const std::vector<uint8_t>& x,
                                 double y, Get&& get) {
  ModelParams q = p;
  double* v = get(q);
  double orig = *v;
  double h = 1e-5 * std::max(1.0, std::abs(orig));
  *v = orig + h;
  double up = bce_from_logit(forward_trace(q, x).logit, y);
  *v = orig - h;
  double dn = bce_from_logit(forward_trace(q, x).logit, y);
  *v = orig;
  return (up - dn) / (2 * h);
}

}  // namespace detail

// Max relative discrepancy between `grads` and central finite differences of
// the loss over every parameter.
inline double gradient_discrepancy(const ModelParams& p, const std::vector<uint8_t>& x,
                                   double y, const Gradients& grads) {
  double worst = 0;
  auto consider = [&](double analytic, double fd) {
    double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
    worst = std::max(worst, std::abs(analytic - fd) / denom);
  };
  for (size_t i = 0; i < p.conv_w.size(); ++i)
    consider(grads.conv_w[i], detail::central_difference(
                                  p, x, y, [&](ModelParams& q) { return &q.conv_w[i]; }));
  for (size_t i = 0; i < p.conv_b.size(); ++i)
    consider(grads.conv_b[i], detail::central_difference(
                                  p, x, y, [&](ModelParams& q) { return &q.conv_b[i]; }));
  for (size_t i = 0; i < p.out_w.size(); ++i)
    consider(grads.out_w[i], detail::central_difference(
                                 p, x, y, [&](ModelParams& q) { return &q.out_w[i]; }));
  consider(grads.out_b,
           detail::central_difference(p, x, y, [&](ModelParams& q) { return &q.out_b; }));
  return worst;
}

inline double grad_check(const ModelParams& p, const std::vector<uint8_t>& x, double y) {
  return gradient_discrepancy(p, x, y, compute_gradients(p, x, y));
}

// ---- Training ----

struct DatasetRecord {
  std::vector<uint8_t> features;  // flattened padded pair vectors
  double q_mean = 0;
  int label = 0;
};

// Defaults run full-batch descent: every benchmark dataset here is a few
// hundred records, and full batches keep the epoch loss trace monotone.
struct TrainConfig {
  double learning_rate = 0.3;
  int epochs = 600;
  int batch_size = 1024;
  uint64_t seed = 0;
  double l2_penalty = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_losses;  // mean train loss after each epoch
};

inline double mean_loss(const ModelParams& p, const std::vector<DatasetRecord>& data) {
  double total = 0;
  for (const DatasetRecord& r : data)
    total += detail::bce_from_logit(detail::forward_trace(p, r.features).logit, r.label);
  return data.empty() ? 0 : total / static_cast<double>(data.size());
}

inline TrainResult train(const std::vector<DatasetRecord>& data, const TrainConfig& cfg,
                         int max_pairs = kDefaultMaxPairs) {
  if (data.empty()) throw ModelError("training dataset is empty");
  if (cfg.learning_rate <= 0) throw ModelError("learning_rate must be > 0");
  if (cfg.epochs < 1) throw ModelError("epochs must be >= 1");
  bool has0 = false, has1 = false;
  for (const DatasetRecord& r : data) (r.label ? has1 : has0) = true;
  if (!has0 || !has1)
    std::fprintf(stderr, "warning: training data contains a single label value\n");

  TrainResult res;
  res.params = init_params(cfg.seed, max_pairs);
  std::mt19937_64 rng(cfg.seed + 0x5eed);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int batch = std::max(1, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(batch));
      Gradients g = zero_gradients(res.params);
      for (size_t i = start; i < end; ++i) {
        const DatasetRecord& r = data[order[i]];
        accumulate_gradients(res.params, r.features, r.label, g);
      }
      double scale = cfg.learning_rate / static_cast<double>(end - start);
      ModelParams& p = res.params;
      for (size_t i = 0; i < p.conv_w.size(); ++i)
        p.conv_w[i] -= scale * (g.conv_w[i] + cfg.l2_penalty * p.conv_w[i] * (double)(end - start));
      for (size_t i = 0; i < p.conv_b.size(); ++i) p.conv_b[i] -= scale * g.conv_b[i];
      for (size_t i = 0; i < p.out_w.size(); ++i)
        p.out_w[i] -= scale * (g.out_w[i] + cfg.l2_penalty * p.out_w[i] * (double)(end - start));
      p.out_b -= scale * g.out_b;
    }
    double loss = mean_loss(res.params, data);
    if (!std::isfinite(loss))
      throw ModelError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    res.epoch_losses.push_back(loss);
  }
  return res;
}

// ---- Model file I/O ----

inline std::string serialize_model(const ModelParams& p) {
  p.check();
  std::string out = "dfopt-model 1\n";
  out += "max_pairs " + std::to_string(p.max_pairs) + "\n";
  auto emit = [&](const char* key, const std::vector<double>& vs) {
    out += key;
    for (double v : vs) out += " " + format_double(v);
    out += "\n";
  };
  emit("conv_w", p.conv_w);
  emit("conv_b", p.conv_b);
  emit("out_w", p.out_w);
  out += "out_b " + format_double(p.out_b) + "\n";
  return out;
}

inline ModelParams parse_model(const std::string& text) {
  ModelParams p;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "dfopt-model 1")
    throw ModelError("bad model file header");
  bool saw_b = false;
  while (std::getline(in, line)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    auto nums = [&](size_t expect) {
      if (tok.size() != expect + 1)
        throw ModelError("model field '" + tok[0] + "': expected " + std::to_string(expect) +
                         " values");
      std::vector<double> vs;
      for (size_t i = 1; i < tok.size(); ++i) vs.push_back(parse_double(tok[i], tok[0].c_str()));
      return vs;
    };
    if (tok[0] == "max_pairs") p.max_pairs = static_cast<int>(parse_ll(tok[1], "max_pairs"));
    else if (tok[0] == "conv_w") p.conv_w = nums(kFilters * kWindow * kChannels);
    else if (tok[0] == "conv_b") p.conv_b = nums(kFilters);
    else if (tok[0] == "out_w") p.out_w = nums(kFilters);
    else if (tok[0] == "out_b") { p.out_b = nums(1)[0]; saw_b = true; }
    else throw ModelError("unknown model field '" + tok[0] + "'");
  }
  if (!saw_b) throw ModelError("model file missing out_b");
  p.check();
  return p;
}

// ---- Prior over program states ----

using PriorFn = std::function<double(const Program&)>;

// Composes featurization, padding, and the forward pass, memoized by program
// content hash. States with more pairs than the model accepts score a fixed
// floor instead of failing the search.
inline PriorFn make_prior(ModelParams params, double overflow_floor = 0.01) {
  params.check();
  auto cache = std::make_shared<std::unordered_map<uint64_t, double>>();
  auto shared = std::make_shared<ModelParams>(std::move(params));
  return [cache, shared, overflow_floor](const Program& prog) {
    uint64_t h = program_hash(prog);
    if (auto it = cache->find(h); it != cache->end()) return it->second;
    double value;
    PairVectorSequence seq = featurize(prog);
    if (static_cast<int>(seq.vectors.size()) > shared->max_pairs) {
      std::fprintf(stderr, "warning: %zu pairs exceed model max_pairs %d; prior floored\n",
                   seq.vectors.size(), shared->max_pairs);
      value = overflow_floor;
    } else {
      value = forward(*shared, pad_sequence(std::move(seq), shared->max_pairs));
    }
    (*cache)[h] = value;
    return value;
  };
}

}  // namespace dfopt
