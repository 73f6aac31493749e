#pragma once

// Weight initialization, Adam with decoupled-from-nothing plain L2, the
// deterministic training loop, and training checkpoints.
//
// Determinism contract: training is single-threaded, and every random draw
// is made from a stream derived only from (seed, pipeline stage, iteration).
// Restoring a checkpoint therefore continues with exactly the future an
// uninterrupted run would have had, down to the bit pattern of the metric
// trace.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gunet/array_store.hpp"
#include "gunet/data.hpp"
#include "gunet/errors.hpp"
#include "gunet/net.hpp"
#include "gunet/rng.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

// ---------------------------------------------------------------------------
// Weight initialization
// ---------------------------------------------------------------------------

// Weights ~ N(0, std^2), biases zero. Each parameter draws from its own
// child stream, so the values depend only on (seed, parameter index), not
// on how many draws other parameters made.
template <typename T>
void init_weights(std::vector<Parameter<T>>& params, double std_dev, std::uint64_t seed) {
  if (std_dev <= 0)
    throw ConfigError("init std must be positive, got " + std::to_string(std_dev));
  const RngStream root = seed_stream(seed, Stream::kInit);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    if (p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
      std::fill(p.data, p.data + p.count, T{});
    } else {
      RngStream s = root.child(i);
      for (std::size_t k = 0; k < p.count; ++k)
        p.data[k] = static_cast<T>(s.normal(0.0, std_dev));
    }
  }
}

template <typename T>
void init_weights(Network<T>& net, double std_dev, std::uint64_t seed) {
  init_weights(net.parameters(), std_dev, seed);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<T>> m, v;  // moments, parallel to the parameter list

  void init(const std::vector<Parameter<T>>& params) {
    m.clear();
    v.clear();
    for (const Parameter<T>& p : params) {
      m.emplace_back(p.count, T{});
      v.emplace_back(p.count, T{});
    }
    t = 0;
  }

  void check_aligned(const std::vector<Parameter<T>>& params) const {
    if (m.size() != params.size() || v.size() != params.size())
      throw ConfigError("optimizer state holds " + std::to_string(m.size()) +
                        " parameters but the network has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
      if (m[i].size() != params[i].count || v[i].size() != params[i].count)
        throw ConfigError("optimizer state for '" + params[i].name +
                          "' does not match the parameter size");
  }
};

// One Adam update from the accumulated gradients. Moment math runs in
// double and is stored back in the parameter scalar type.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& st) {
  st.check_aligned(params);
  st.t += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    if (p.grad.size() != p.count)
      throw ConfigError("parameter '" + p.name + "' has no accumulated gradient");
    for (std::size_t k = 0; k < p.count; ++k) {
      const double g = static_cast<double>(p.grad[k]);
      if (!std::isfinite(g))
        throw Error("non-finite gradient in parameter '" + p.name + "' at step " +
                    std::to_string(st.t));
      const double mk = st.beta1 * static_cast<double>(st.m[i][k]) + (1.0 - st.beta1) * g;
      const double vk = st.beta2 * static_cast<double>(st.v[i][k]) + (1.0 - st.beta2) * g * g;
      st.m[i][k] = static_cast<T>(mk);
      st.v[i][k] = static_cast<T>(vk);
      const double step = st.lr * (mk / c1) / (std::sqrt(vk / c2) + st.epsilon);
      p.data[k] = static_cast<T>(static_cast<double>(p.data[k]) - step);
    }
  }
}

// ---------------------------------------------------------------------------
// L2 regularization
// ---------------------------------------------------------------------------

// Penalty term: scale * sum of squared weights. Biases are excluded unless
// include_biases is set (the decay flag on each parameter marks weights).
template <typename T>
double l2_penalty(const std::vector<Parameter<T>>& params, double scale,
                  bool include_biases = false) {
  if (scale == 0) return 0;
  double acc = 0;
  for (const Parameter<T>& p : params) {
    if (!p.decay && !include_biases) continue;
    for (std::size_t k = 0; k < p.count; ++k) {
      const double w = static_cast<double>(p.data[k]);
      acc += w * w;
    }
  }
  return scale * acc;
}

template <typename T>
double regularized_loss(double data_loss, const std::vector<Parameter<T>>& params, double scale,
                        bool include_biases = false) {
  return data_loss + l2_penalty(params, scale, include_biases);
}

// Analytic gradient of the penalty: adds 2 * scale * w to each regularized
// parameter's accumulated gradient.
template <typename T>
void add_l2_gradients(std::vector<Parameter<T>>& params, double scale,
                      bool include_biases = false) {
  if (scale == 0) return;
  for (Parameter<T>& p : params) {
    if (!p.decay && !include_biases) continue;
    if (p.grad.size() != p.count) p.zero_grad();
    for (std::size_t k = 0; k < p.count; ++k)
      p.grad[k] += static_cast<T>(2.0 * scale * static_cast<double>(p.data[k]));
  }
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::int64_t iterations = 200000;
  int batch_size = 128;
  double l2_scale = 2.5e-5;
  bool l2_include_biases = false;
  double init_std = 0.02;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 1000;       // validation MAE cadence
  std::int64_t checkpoint_every = 10000;
  // Identical patches inside a batch (same source window, flip, and gamma)
  // are forwarded once and their gradient weighted by multiplicity. On tiny
  // fixtures where every patch is the full image this is a large saving; the
  // grouping is deterministic, so traces stay reproducible.
  bool group_duplicates = true;
  SampleOptions sampling;  // n and patch_side are overwritten at train time

  void validate() const {
    if (iterations < 1)
      throw ConfigError("iterations must be positive, got " + std::to_string(iterations));
    if (batch_size < 1)
      throw ConfigError("batch size must be positive, got " + std::to_string(batch_size));
    if (l2_scale < 0)
      throw ConfigError("l2 scale must be nonnegative, got " + std::to_string(l2_scale));
    if (init_std <= 0)
      throw ConfigError("init std must be positive, got " + std::to_string(init_std));
    if (eval_every < 1)
      throw ConfigError("eval-every must be positive, got " + std::to_string(eval_every));
    if (checkpoint_every < 1)
      throw ConfigError("checkpoint-every must be positive, got " +
                        std::to_string(checkpoint_every));
  }
};

inline void to_json(nlohmann::ordered_json& j, const TrainConfig& c) {
  j = nlohmann::ordered_json{{"iterations", c.iterations},
                             {"batch_size", c.batch_size},
                             {"l2_scale", c.l2_scale},
                             {"l2_include_biases", c.l2_include_biases},
                             {"init_std", c.init_std},
                             {"seed", c.seed},
                             {"eval_every", c.eval_every},
                             {"checkpoint_every", c.checkpoint_every},
                             {"group_duplicates", c.group_duplicates},
                             {"sampling",
                              {{"centered_fraction", c.sampling.centered_fraction},
                               {"flip_prob", c.sampling.flip_prob},
                               {"gamma_augment", c.sampling.gamma_augment},
                               {"gamma_min", c.sampling.gamma_min},
                               {"gamma_max", c.sampling.gamma_max},
                               {"image_per_patch", c.sampling.image_per_patch}}}};
}

inline void from_json(const nlohmann::ordered_json& j, TrainConfig& c) {
  c.iterations = j.at("iterations").get<std::int64_t>();
  c.batch_size = j.at("batch_size").get<int>();
  c.l2_scale = j.at("l2_scale").get<double>();
  c.l2_include_biases = j.at("l2_include_biases").get<bool>();
  c.init_std = j.at("init_std").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<std::int64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
  c.group_duplicates = j.at("group_duplicates").get<bool>();
  const auto& s = j.at("sampling");
  c.sampling.centered_fraction = s.at("centered_fraction").get<double>();
  c.sampling.flip_prob = s.at("flip_prob").get<double>();
  c.sampling.gamma_augment = s.at("gamma_augment").get<bool>();
  c.sampling.gamma_min = s.at("gamma_min").get<double>();
  c.sampling.gamma_max = s.at("gamma_max").get<double>();
  c.sampling.image_per_patch = s.at("image_per_patch").get<bool>();
}

// ---------------------------------------------------------------------------
// Metric trace and training state
// ---------------------------------------------------------------------------

template <typename T>
struct TrainState {
  AdamState<T> adam;
  std::int64_t iteration = 0;  // completed iterations
  std::vector<std::int64_t> trace_iter;
  std::vector<double> trace_loss;
  std::vector<double> trace_val;  // NaN on iterations without evaluation
};

// CSV rendering of the trace; val_mae cells are empty on iterations where
// no evaluation ran. %.17g keeps doubles round-trippable, so rewriting the
// file from a restored trace is byte-identical.
inline std::string trace_to_csv(const std::vector<std::int64_t>& iters,
                                const std::vector<double>& loss,
                                const std::vector<double>& val) {
  std::string out = "iter,loss,val_mae\n";
  char buf[64];
  for (std::size_t i = 0; i < iters.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%lld,", static_cast<long long>(iters[i]));
    out += buf;
    std::snprintf(buf, sizeof(buf), "%.17g,", loss[i]);
    out += buf;
    if (std::isfinite(val[i])) {
      std::snprintf(buf, sizeof(buf), "%.17g", val[i]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// Mean absolute count error over a dataset split, using full-image
// inference with the ROI applied to predictions.
template <typename T>
double validation_mae(Network<T>& net, const Dataset<T>& ds, const std::vector<int>& split) {
  if (split.empty()) throw ConfigError("validation split has zero images");
  double acc = 0;
  for (int idx : split) {
    const DatasetImage<T>& di = ds.images[static_cast<std::size_t>(idx)];
    Tensor4<T> pred = net.forward_padded(di.image);
    if (di.roi) pred = apply_roi(pred, *di.roi);
    acc += std::abs(sum(pred) - di.density.sum());
  }
  return acc / static_cast<double>(split.size());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
std::vector<std::int64_t> param_shape(const Parameter<T>& p) {
  std::vector<std::int64_t> s;
  for (int d : p.dims) s.push_back(d);
  return s;
}
}  // namespace detail

template <typename T>
void save_training_checkpoint(const std::string& path, const Network<T>& net,
                              const TrainConfig& cfg, const TrainState<T>& st) {
  const std::vector<Parameter<T>>& params = net.parameters();
  st.adam.check_aligned(params);
  ArrayStore store;
  store.meta["kind"] = "training-checkpoint";
  store.meta["spec"] = nlohmann::ordered_json(net.spec());
  store.meta["config"] = nlohmann::ordered_json(cfg);
  store.meta["iteration"] = st.iteration;
  store.meta["seed"] = cfg.seed;
  store.meta["adam"] = nlohmann::ordered_json{{"lr", st.adam.lr},
                                              {"beta1", st.adam.beta1},
                                              {"beta2", st.adam.beta2},
                                              {"epsilon", st.adam.epsilon},
                                              {"t", st.adam.t}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = params[i];
    store.put("p/" + p.name, detail::param_shape(p), p.data, p.count);
    store.put("m/" + p.name, detail::param_shape(p), st.adam.m[i].data(), p.count);
    store.put("v/" + p.name, detail::param_shape(p), st.adam.v[i].data(), p.count);
  }
  store.put("trace/iter", st.trace_iter);
  store.put("trace/loss", st.trace_loss);
  store.put("trace/val_mae", st.trace_val);
  store.save(path);
}

template <typename T>
struct LoadedCheckpoint {
  NetworkSpec spec;
  TrainConfig config;
  TrainState<T> state;
  std::vector<std::pair<std::string, std::vector<T>>> params;
};

template <typename T>
LoadedCheckpoint<T> load_training_checkpoint(const std::string& path) {
  const ArrayStore store = ArrayStore::load(path);
  LoadedCheckpoint<T> ck;
  try {
    if (store.meta.at("kind").get<std::string>() != "training-checkpoint")
      throw FormatError(path + ": not a training checkpoint (kind = " +
                        store.meta.at("kind").get<std::string>() + ")");
    ck.spec = store.meta.at("spec").get<NetworkSpec>();
    ck.config = store.meta.at("config").get<TrainConfig>();
    ck.state.iteration = store.meta.at("iteration").get<std::int64_t>();
    const auto& adam = store.meta.at("adam");
    ck.state.adam.lr = adam.at("lr").get<double>();
    ck.state.adam.beta1 = adam.at("beta1").get<double>();
    ck.state.adam.beta2 = adam.at("beta2").get<double>();
    ck.state.adam.epsilon = adam.at("epsilon").get<double>();
    ck.state.adam.t = adam.at("t").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed checkpoint metadata: " + e.what());
  }
  for (const ArrayEntry& e : store.arrays()) {
    if (e.name.rfind("p/", 0) == 0)
      ck.params.emplace_back(e.name.substr(2), store.get<T>(e.name));
    else if (e.name.rfind("m/", 0) == 0)
      ck.state.adam.m.push_back(store.get<T>(e.name));
    else if (e.name.rfind("v/", 0) == 0)
      ck.state.adam.v.push_back(store.get<T>(e.name));
  }
  ck.state.trace_iter = store.get<std::int64_t>("trace/iter");
  ck.state.trace_loss = store.get<double>("trace/loss");
  ck.state.trace_val = store.get<double>("trace/val_mae");
  if (ck.state.trace_iter.size() != ck.state.trace_loss.size() ||
      ck.state.trace_iter.size() != ck.state.trace_val.size())
    throw FormatError(path + ": trace arrays have mismatched lengths");
  return ck;
}

// Copies checkpointed parameter values into the network, requiring an exact
// name-for-name match.
template <typename T>
void apply_parameters(Network<T>& net,
                      const std::vector<std::pair<std::string, std::vector<T>>>& stored) {
  std::size_t applied = 0;
  for (const auto& [name, values] : stored) {
    Parameter<T>* p = net.find_parameter(name);
    if (p == nullptr)
      throw FormatError("checkpoint parameter '" + name + "' does not exist in the network");
    if (values.size() != p->count)
      throw FormatError("checkpoint parameter '" + name + "' has " +
                        std::to_string(values.size()) + " values, network expects " +
                        std::to_string(p->count));
    std::copy(values.begin(), values.end(), p->data);
    ++applied;
  }
  if (applied != net.parameters().size())
    throw FormatError("checkpoint holds " + std::to_string(applied) +
                      " parameters, network has " + std::to_string(net.parameters().size()));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor4<T> slice_batch_item(const Tensor4<T>& t, int b) {
  const Shape4 s = t.shape();
  Tensor4<T> out(Shape4{1, s.c, s.h, s.w});
  const std::size_t plane = out.size();
  std::copy(t.data() + static_cast<std::size_t>(b) * plane,
            t.data() + static_cast<std::size_t>(b + 1) * plane, out.data());
  return out;
}

}  // namespace detail

// Continues training from st.iteration + 1 through cfg.iterations,
// recording the loss every iteration and validation MAE every eval_every
// iterations. Checkpoints (and the trace CSV) land in out_dir when given;
// the final iteration is always checkpointed. A non-finite loss aborts with
// the iteration number; checkpoints already written stay on disk.
template <typename T>
void run_train_loop(Network<T>& net, const Dataset<T>& ds, const TrainConfig& cfg,
                    TrainState<T>& st, const std::string& out_dir = "") {
  cfg.validate();
  if (ds.train.empty()) throw ConfigError("training requires a nonempty train split");
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::vector<int>& val_split = ds.val_or_train();
  std::vector<Parameter<T>>& params = net.parameters();
  st.adam.check_aligned(params);

  for (std::int64_t it = st.iteration + 1; it <= cfg.iterations; ++it) {
    PatchBatch<T> batch = sample_patch_batch(ds, ds.train, cfg.sampling, cfg.seed,
                                             static_cast<std::uint64_t>(it));
    const int n = cfg.sampling.n;

    std::vector<std::pair<int, int>> groups;  // (batch index, multiplicity)
    for (int b = 0; b < n; ++b) {
      bool merged = false;
      if (cfg.group_duplicates) {
        for (auto& [b0, mult] : groups)
          if (batch.provenance[b] == batch.provenance[b0]) {
            ++mult;
            merged = true;
            break;
          }
      }
      if (!merged) groups.emplace_back(b, 1);
    }

    for (Parameter<T>& p : params) p.zero_grad();
    double data_loss = 0;
    for (const auto& [b0, mult] : groups) {
      Graph<T> g;
      const NodeId pred =
          net.forward_graph(g, g.constant(detail::slice_batch_item(batch.images, b0)));
      const NodeId loss = g.mse(pred, g.constant(detail::slice_batch_item(batch.targets, b0)));
      g.backward(g.scale(loss, static_cast<T>(static_cast<double>(mult) / n)));
      data_loss += static_cast<double>(g.value(loss)[0]) * mult / n;
    }

    add_l2_gradients(params, cfg.l2_scale, cfg.l2_include_biases);
    const double total = regularized_loss(data_loss, params, cfg.l2_scale, cfg.l2_include_biases);
    if (!std::isfinite(total))
      throw Error("training diverged at iteration " + std::to_string(it) +
                  " (loss = " + std::to_string(total) + "); last checkpoint retained");
    adam_step(params, st.adam);

    st.iteration = it;
    st.trace_iter.push_back(it);
    st.trace_loss.push_back(total);
    double vm = std::numeric_limits<double>::quiet_NaN();
    if (it % cfg.eval_every == 0) vm = validation_mae(net, ds, val_split);
    st.trace_val.push_back(vm);

    if (!out_dir.empty() && (it % cfg.checkpoint_every == 0 || it == cfg.iterations)) {
      char name[40];
      std::snprintf(name, sizeof(name), "ckpt_%08lld.gunc", static_cast<long long>(it));
      save_training_checkpoint((std::filesystem::path(out_dir) / name).string(), net, cfg, st);
      write_text_file((std::filesystem::path(out_dir) / "trace.csv").string(),
                      trace_to_csv(st.trace_iter, st.trace_loss, st.trace_val));
    }
  }
}

// Fills sampling fields that are owned by other parts of the config: batch
// size and the network's patch side.
template <typename T>
TrainConfig resolve_sampling(TrainConfig cfg, const Network<T>& net) {
  cfg.sampling.n = cfg.batch_size;
  cfg.sampling.patch_side = net.spec().patch_side;
  return cfg;
}

// Fresh training run: initialize weights and optimizer, then loop.
template <typename T>
TrainState<T> train(Network<T>& net, const Dataset<T>& ds, const TrainConfig& cfg_in,
                    const std::string& out_dir = "") {
  TrainConfig cfg = resolve_sampling(cfg_in, net);
  cfg.validate();
  init_weights(net, cfg.init_std, cfg.seed);
  TrainState<T> st;
  st.adam.init(net.parameters());
  run_train_loop(net, ds, cfg, st, out_dir);
  return st;
}

// Resumes from a checkpoint file. The stored config is reused verbatim
// except that a positive `extend_iterations` replaces the horizon (to
// continue past the original budget). Returns the final state; `net` must
// have been built from the stored spec.
template <typename T>
TrainState<T> resume_training(Network<T>& net, const Dataset<T>& ds, LoadedCheckpoint<T> ck,
                              std::int64_t extend_iterations = 0,
                              const std::string& out_dir = "") {
  if (!(nlohmann::ordered_json(ck.spec) == nlohmann::ordered_json(net.spec())))
    throw ConfigError("checkpoint spec does not match the constructed network");
  apply_parameters(net, ck.params);
  TrainConfig cfg = resolve_sampling(ck.config, net);
  if (extend_iterations > 0) cfg.iterations = extend_iterations;
  cfg.validate();
  TrainState<T> st = std::move(ck.state);
  run_train_loop(net, ds, cfg, st, out_dir);
  return st;
}

template <typename T>
TrainState<T> resume_training(Network<T>& net, const Dataset<T>& ds, const std::string& ckpt_path,
                              std::int64_t extend_iterations = 0,
                              const std::string& out_dir = "") {
  return resume_training(net, ds, load_training_checkpoint<T>(ckpt_path), extend_iterations,
                         out_dir);
}

}  // namespace gunet
