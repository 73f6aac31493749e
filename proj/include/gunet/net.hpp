#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gunet/conv.hpp"
#include "gunet/errors.hpp"
#include "gunet/graph.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

enum class Fusion { kConcat, kSum, kMul };

inline std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::kConcat: return "concat";
    case Fusion::kSum: return "sum";
    case Fusion::kMul: return "mul";
  }
  return "concat";
}

inline Fusion fusion_from_name(const std::string& s) {
  if (s == "concat") return Fusion::kConcat;
  if (s == "sum") return Fusion::kSum;
  if (s == "mul") return Fusion::kMul;
  throw ConfigError("fusion must be one of concat|sum|mul, got \"" + s + "\"");
}

// Declarative description of the density-regression network: a five-stage
// strided-conv encoder, a mirrored five-stage transpose-conv decoder with
// four skip connections (optionally gated), and a single-channel linear
// output layer.
struct NetworkSpec {
  int in_channels = 3;
  std::array<int, 5> encoder_channels = {32, 64, 128, 256, 512};
  bool gated = true;
  Fusion fusion = Fusion::kConcat;
  double leaky_slope = 0.2;
  int patch_side = 96;
  int filter_size_threshold = 24;
  std::uint64_t seed = 1;

  void validate() const {
    if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
    for (int c : encoder_channels)
      if (c < 1) throw ConfigError("net.encoder_channels entries must be >= 1");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
      throw ConfigError("net.leaky_slope must lie in (0, 1), got " +
                        std::to_string(leaky_slope));
    if (patch_side < 32 || patch_side % 32 != 0)
      throw ConfigError("net.patch_side must be a positive multiple of 32 (five stride-2 "
                        "halvings), got " + std::to_string(patch_side));
    if (filter_size_threshold < 1) throw ConfigError("net.filter_size_threshold must be >= 1");
  }
};

inline void to_json(nlohmann::ordered_json& j, const NetworkSpec& s) {
  j = nlohmann::ordered_json{{"in_channels", s.in_channels},
                             {"encoder_channels", s.encoder_channels},
                             {"gated", s.gated},
                             {"fusion", fusion_name(s.fusion)},
                             {"leaky_slope", s.leaky_slope},
                             {"patch_side", s.patch_side},
                             {"filter_size_threshold", s.filter_size_threshold},
                             {"seed", s.seed}};
}

inline void from_json(const nlohmann::ordered_json& j, NetworkSpec& s) {
  j.at("in_channels").get_to(s.in_channels);
  j.at("encoder_channels").get_to(s.encoder_channels);
  j.at("gated").get_to(s.gated);
  s.fusion = fusion_from_name(j.at("fusion").get<std::string>());
  j.at("leaky_slope").get_to(s.leaky_slope);
  j.at("patch_side").get_to(s.patch_side);
  j.at("filter_size_threshold").get_to(s.filter_size_threshold);
  j.at("seed").get_to(s.seed);
}

// A learnable skip-connection gate: a stride-1 convolution whose sigmoid
// output scales the skipped tensor elementwise.
template <typename T>
struct GateUnit {
  ConvParams<T> conv;
  double last_activation_mean = 0.0;
  bool has_run = false;
};

template <typename T>
std::size_t parameter_count(const std::vector<Parameter<T>>& params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.count;
  return total;
}

// The full 11-layer network (5 encoder convs, 5 decoder transpose convs, 1
// output conv) with 4 skip connections. Parameters are zero-initialized at
// build; weight initialization is the optimizer's job.
template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)) { build(); }
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const { return gunet::parameter_count(params_); }

  int skip_count() const { return 4; }
  const GateUnit<T>& gate(int k) const { return gates_[static_cast<std::size_t>(k)]; }
  const ConvParams<T>& encoder_layer(int k) const { return enc_[static_cast<std::size_t>(k)]; }
  const ConvParams<T>& decoder_layer(int j) const { return dec_[static_cast<std::size_t>(j)]; }
  const ConvParams<T>& output_layer() const { return out_; }

  Parameter<T>* find_parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Records the forward computation on the given graph and returns the output
  // node (single channel, same spatial size as the input). When
  // `with_params` is set, conv records carry parameter references so
  // backward() accumulates their gradients. `hard_open_gates` replaces every
  // gate activation with exact ones (the gates' convolutions are skipped),
  // which reduces the network to the ungated data path bit-for-bit.
  NodeId forward_graph(Graph<T>& g, NodeId x, bool with_params = true,
                       bool hard_open_gates = false) {
    const Shape4 xs = g.value(x).shape();
    if (xs.c != spec_.in_channels)
      throw ShapeError("forward: input has " + std::to_string(xs.c) + " channels, network wants " +
                       std::to_string(spec_.in_channels));
    if (xs.h % 32 != 0 || xs.w % 32 != 0)
      throw ShapeError("forward: input sides " + std::to_string(xs.h) + "x" +
                       std::to_string(xs.w) +
                       " must be divisible by 32 (use the pad-and-crop entry point for "
                       "arbitrary sizes)");
    const T slope = static_cast<T>(spec_.leaky_slope);
    auto wp = [&](int idx) { return with_params ? &params_[static_cast<std::size_t>(idx)] : nullptr; };

    std::array<NodeId, 5> z{};
    NodeId cur = x;
    for (int k = 0; k < 5; ++k) {
      cur = g.leaky_relu(g.conv2d(cur, &enc_[static_cast<std::size_t>(k)], wp(enc_idx_[k].w),
                                  wp(enc_idx_[k].b)),
                         slope);
      z[static_cast<std::size_t>(k)] = cur;
    }
    for (int j = 0; j < 5; ++j) {
      cur = g.leaky_relu(g.transpose_conv2d(cur, &dec_[static_cast<std::size_t>(j)],
                                            wp(dec_idx_[j].w), wp(dec_idx_[j].b)),
                         slope);
      if (j < 4) {
        const int k = 3 - j;  // skip source: encoder output z[k]
        NodeId skip = z[static_cast<std::size_t>(k)];
        if (spec_.gated && !hard_open_gates) {
          GateUnit<T>& u = gates_[static_cast<std::size_t>(k)];
          NodeId a = g.sigmoid(g.conv2d(skip, &u.conv, wp(gate_idx_[k].w), wp(gate_idx_[k].b)));
          u.last_activation_mean = mean(g.value(a));
          u.has_run = true;
          skip = g.mul(skip, a);
        }
        switch (spec_.fusion) {
          case Fusion::kConcat: cur = g.concat_channels(skip, cur); break;
          case Fusion::kSum: cur = g.add(skip, cur); break;
          case Fusion::kMul: cur = g.mul(skip, cur); break;
        }
      }
    }
    return g.conv2d(cur, &out_, wp(out_idx_.w), wp(out_idx_.b));
  }

  // Inference on an input whose sides are divisible by 32.
  Tensor4<T> forward(const Tensor4<T>& x) {
    Graph<T> g;
    return g.value(forward_graph(g, g.constant(x), /*with_params=*/false));
  }

  // Inference on arbitrary spatial sizes: mirror-pads up to the next multiple
  // of 32 on the bottom/right, runs the network, and crops the output back.
  Tensor4<T> forward_padded(const Tensor4<T>& x) {
    const Shape4 s = x.shape();
    const int ph = (s.h + 31) / 32 * 32;
    const int pw = (s.w + 31) / 32 * 32;
    if (ph == s.h && pw == s.w) return forward(x);
    Tensor4<T> padded(Shape4{s.n, s.c, ph, pw});
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < ph; ++y)
          for (int xw = 0; xw < pw; ++xw)
            padded.at(n, c, y, xw) = x.at(n, c, mirror_index(y, s.h), mirror_index(xw, s.w));
    Tensor4<T> full = forward(padded);
    Tensor4<T> out(Shape4{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw) out.at(n, 0, y, xw) = full.at(n, 0, y, xw);
    return out;
  }

  // Mean gate activation of each skip from the most recent gated forward.
  std::vector<double> gate_activation_report() const {
    if (!spec_.gated) throw ConfigError("gate report requested on an ungated network");
    std::vector<double> means;
    for (const auto& u : gates_) {
      if (!u.has_run) throw Error("gate report requested before any gated forward pass");
      means.push_back(u.last_activation_mean);
    }
    return means;
  }

 private:
  struct Idx {
    int w = -1, b = -1;
  };

  void build() {
    spec_.validate();
    const auto& e = spec_.encoder_channels;
    int side = spec_.patch_side;
    int in_c = spec_.in_channels;
    std::array<int, 5> enc_kernel{};
    for (int k = 0; k < 5; ++k) {
      const int ker = side >= spec_.filter_size_threshold ? 4 : 3;
      enc_kernel[static_cast<std::size_t>(k)] = ker;
      enc_.push_back(make_conv<T>(e[static_cast<std::size_t>(k)], in_c, ker, ker, 2, 2,
                                  Padding::kSame));
      in_c = e[static_cast<std::size_t>(k)];
      side /= 2;
    }
    if (spec_.gated) {
      for (int k = 0; k < 4; ++k) {
        GateUnit<T> u;
        const int ch = e[static_cast<std::size_t>(k)];
        const int ker = enc_kernel[static_cast<std::size_t>(k)];
        u.conv = make_conv<T>(ch, ch, ker, ker, 1, 1, Padding::kSame);
        gates_.push_back(std::move(u));
      }
    }
    const std::array<int, 5> dec_out = {e[3], e[2], e[1], e[0], std::max(e[0] / 2, 1)};
    int cur = e[4];
    for (int j = 0; j < 5; ++j) {
      side *= 2;  // output side of this decoder stage
      const int ker = side >= spec_.filter_size_threshold ? 4 : 3;
      dec_.push_back(make_transpose_conv<T>(cur, dec_out[static_cast<std::size_t>(j)], ker, ker, 2,
                                            2, Padding::kSame));
      if (j < 4) {
        const int skip_ch = e[static_cast<std::size_t>(3 - j)];
        if (spec_.fusion == Fusion::kConcat) {
          cur = dec_out[static_cast<std::size_t>(j)] + skip_ch;
        } else {
          if (dec_out[static_cast<std::size_t>(j)] != skip_ch)
            throw ConfigError("fusion " + fusion_name(spec_.fusion) + ": decoder stage " +
                              std::to_string(j + 1) + " has " +
                              std::to_string(dec_out[static_cast<std::size_t>(j)]) +
                              " channels but its skip source has " + std::to_string(skip_ch));
          cur = dec_out[static_cast<std::size_t>(j)];
        }
      } else {
        cur = dec_out[static_cast<std::size_t>(j)];
      }
    }
    out_ = make_conv<T>(1, cur, 4, 4, 1, 1, Padding::kSame);
    wire_params();
  }

  void add_param_views(const std::string& prefix, ConvParams<T>& p, Idx* idx) {
    const Shape4 ws = p.weights.shape();
    Parameter<T> w;
    w.name = prefix + ".weight";
    w.dims = {ws.n, ws.c, ws.h, ws.w};
    w.data = p.weights.data();
    w.count = p.weights.size();
    w.decay = true;
    w.zero_grad();
    idx->w = static_cast<int>(params_.size());
    params_.push_back(std::move(w));
    Parameter<T> b;
    b.name = prefix + ".bias";
    b.dims = {static_cast<int>(p.bias.size())};
    b.data = p.bias.data();
    b.count = p.bias.size();
    b.decay = false;
    b.zero_grad();
    idx->b = static_cast<int>(params_.size());
    params_.push_back(std::move(b));
  }

  void wire_params() {
    for (int k = 0; k < 5; ++k)
      add_param_views("enc" + std::to_string(k + 1), enc_[static_cast<std::size_t>(k)],
                      &enc_idx_[static_cast<std::size_t>(k)]);
    if (spec_.gated)
      for (int k = 0; k < 4; ++k)
        add_param_views("gate" + std::to_string(k + 1), gates_[static_cast<std::size_t>(k)].conv,
                        &gate_idx_[static_cast<std::size_t>(k)]);
    for (int j = 0; j < 5; ++j)
      add_param_views("dec" + std::to_string(j + 1), dec_[static_cast<std::size_t>(j)],
                      &dec_idx_[static_cast<std::size_t>(j)]);
    add_param_views("out", out_, &out_idx_);
  }

  NetworkSpec spec_;
  std::vector<ConvParams<T>> enc_, dec_;
  std::vector<GateUnit<T>> gates_;
  ConvParams<T> out_;
  std::vector<Parameter<T>> params_;
  std::array<Idx, 5> enc_idx_{}, dec_idx_{};
  std::array<Idx, 4> gate_idx_{};
  Idx out_idx_{};
};

// Mean over all elements of the squared difference, accumulated sequentially
// in double precision.
template <typename T>
double mse_loss(const Tensor4<T>& pred, const Tensor4<T>& gt) {
  detail::require_same_shape("mse_loss", pred, gt);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

}  // namespace gunet
