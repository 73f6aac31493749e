#pragma once
// Command-line surface: dataset generation, training, evaluation, inference,
// and gate inspection. Exit codes: 0 success, 1 usage/config error, 2 runtime
// failure. The resolved configuration of every run is echoed into its output
// directory as flat dotted keys so any run can be reproduced from its
// artifacts alone.

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "gunet/data.hpp"
#include "gunet/errors.hpp"
#include "gunet/metrics.hpp"
#include "gunet/net.hpp"
#include "gunet/optim.hpp"
#include "gunet/tensor.hpp"

namespace gunet {
namespace cli_detail {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config plumbing: flat dotted keys mirroring the flags. Precedence is
// flags > config file > GUNC_SEED (for seeds) > built-in defaults.
// ---------------------------------------------------------------------------

class ConfigTable {
 public:
  template <typename V>
  void bind(std::string key, CLI::Option* opt, V* target) {
    entries_.push_back(Entry{std::move(key), opt, false,
                             [target](const nlohmann::json& v) { v.get_to(*target); },
                             [target]() { return nlohmann::json(*target); }});
  }

  void apply_file(const std::string& path) {
    const nlohmann::json j = parse_json_file(path);
    if (!j.is_object())
      throw ConfigError("config file " + path + " must hold a JSON object of dotted keys");
    for (const auto& [key, value] : j.items()) {
      Entry* e = find(key);
      if (e == nullptr) throw ConfigError("unknown config key \"" + key + "\" in " + path);
      e->from_file = true;
      if (e->opt != nullptr && e->opt->count() > 0) continue;  // flags win over the file
      try {
        e->set(value);
      } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("config key \"" + key + "\": " + ex.what());
      }
    }
  }

  bool provided(const std::string& key) const {
    const Entry* e = find(key);
    return e != nullptr && ((e->opt != nullptr && e->opt->count() > 0) || e->from_file);
  }

  nlohmann::ordered_json resolved() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& e : entries_) out[e.key] = e.get();
    return out;
  }

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    bool from_file;
    std::function<void(const nlohmann::json&)> set;
    std::function<nlohmann::json()> get;
  };

  Entry* find(const std::string& key) {
    for (auto& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }
  const Entry* find(const std::string& key) const {
    return const_cast<ConfigTable*>(this)->find(key);
  }

  std::vector<Entry> entries_;
};

inline void echo_config(const std::string& dir, nlohmann::ordered_json resolved) {
  write_text_file((fs::path(dir) / "config.json").string(), resolved.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Small value parsers for flag syntax
// ---------------------------------------------------------------------------

inline std::pair<std::string, std::string> split_once(const std::string& s,
                                                      const std::string& sep) {
  const std::size_t pos = s.find(sep);
  if (pos == std::string::npos) return {s, ""};
  return {s.substr(0, pos), s.substr(pos + sep.size())};
}

inline int parse_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": \"" + s + "\" is not an integer");
  }
}

inline double parse_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": \"" + s + "\" is not a number");
  }
}

// "3..8" (or a bare "5" meaning 5..5)
inline std::pair<int, int> parse_int_range(const std::string& s, const char* what) {
  const auto [lo, hi] = split_once(s, "..");
  const int a = parse_int(lo, what);
  const int b = hi.empty() ? a : parse_int(hi, what);
  if (b < a) throw ConfigError(std::string(what) + ": empty range \"" + s + "\"");
  return {a, b};
}

inline std::pair<double, double> parse_double_range(const std::string& s, const char* what) {
  const auto [lo, hi] = split_once(s, "..");
  const double a = parse_double(lo, what);
  const double b = hi.empty() ? a : parse_double(hi, what);
  if (b < a) throw ConfigError(std::string(what) + ": empty range \"" + s + "\"");
  return {a, b};
}

// "96x96"
inline std::pair<int, int> parse_canvas(const std::string& s) {
  const auto [h, w] = split_once(s, "x");
  if (w.empty()) throw ConfigError("canvas: expected HxW, got \"" + s + "\"");
  return {parse_int(h, "canvas height"), parse_int(w, "canvas width")};
}

// "8,16,32,64,128" -> the five encoder widths
inline std::array<int, 5> parse_channels(const std::string& s) {
  std::array<int, 5> out{};
  std::size_t start = 0;
  int i = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    const std::string tok =
        comma == std::string::npos ? s.substr(start) : s.substr(start, comma - start);
    if (i >= 5) throw ConfigError("channels: expected 5 comma-separated values, got \"" + s + "\"");
    out[static_cast<std::size_t>(i++)] = parse_int(tok, "channels");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (i != 5) throw ConfigError("channels: expected 5 comma-separated values, got \"" + s + "\"");
  return out;
}

inline double sigma_preset_value(const std::string& name) {
  if (name == "trancos") return 10.0;
  if (name == "shanghai") return 4.0;
  if (name == "ucsd") return 5.0;
  throw ConfigError("unknown sigma preset \"" + name + "\" (expected trancos|shanghai|ucsd)");
}

// Seed precedence: an explicit flag/config value wins; otherwise the
// GUNC_SEED environment variable; otherwise the built-in default.
inline std::uint64_t resolve_seed(std::uint64_t current, bool provided) {
  if (provided) return current;
  const char* v = std::getenv("GUNC_SEED");
  if (v == nullptr || *v == '\0') return current;
  errno = 0;
  char* end = nullptr;
  const unsigned long long parsed = std::strtoull(v, &end, 10);
  if (errno != 0 || end == v || *end != '\0' || v[0] == '-')
    throw ConfigError(std::string("GUNC_SEED must be a nonnegative integer, got \"") + v + "\"");
  return parsed;
}

// Shared --sigma / --sigma-preset resolution.
inline double resolve_sigma(double sigma, const std::string& preset, const ConfigTable& table,
                            const char* sigma_key, const char* preset_key) {
  if (!table.provided(preset_key) || preset.empty()) return sigma;
  if (table.provided(sigma_key))
    throw ConfigError("give either --sigma or --sigma-preset, not both");
  return sigma_preset_value(preset);
}

// ---------------------------------------------------------------------------
// Shared model/data flag bundles
// ---------------------------------------------------------------------------

struct ModelFlags {
  int in_channels = 3;
  std::string channels = "32,64,128,256,512";
  bool gated = true;
  std::string fusion = "concat";
  double leaky_slope = 0.2;
  int patch_side = 96;

  void add(CLI::App& app, ConfigTable& table) {
    table.bind("net.in_channels",
               app.add_option("--in-channels", in_channels, "Input image channels"),
               &in_channels);
    table.bind("net.channels",
               app.add_option("--channels", channels,
                              "Encoder channel widths, five comma-separated values"),
               &channels);
    table.bind("net.gated",
               app.add_flag("--gated,!--ungated", gated,
                            "Gate the four skip connections (default on)"),
               &gated);
    table.bind("net.fusion",
               app.add_option("--fusion", fusion, "Skip fusion: concat, sum, or mul")
                   ->check(CLI::IsMember({"concat", "sum", "mul"})),
               &fusion);
    table.bind("net.leaky_slope",
               app.add_option("--leaky-slope", leaky_slope, "Negative slope of encoder/decoder "
                                                           "activations"),
               &leaky_slope);
    table.bind("net.patch_side",
               app.add_option("--patch-side", patch_side, "Training patch side (multiple of 32)"),
               &patch_side);
  }

  NetworkSpec spec() const {
    NetworkSpec s;
    s.in_channels = in_channels;
    s.encoder_channels = parse_channels(channels);
    s.gated = gated;
    s.fusion = fusion_from_name(fusion);
    s.leaky_slope = leaky_slope;
    s.patch_side = patch_side;
    return s;
  }
};

struct DataFlags {
  std::string manifest;
  double sigma = 4.0;
  std::string sigma_preset;
  int max_side = 0;

  void add(CLI::App& app, ConfigTable& table) {
    // Not marked required at parse time: the config file may supply it.
    table.bind("data.manifest", app.add_option("--data", manifest, "Dataset manifest JSON"),
               &manifest);
    table.bind("data.sigma",
               app.add_option("--sigma", sigma, "Gaussian std-dev for ground-truth density"),
               &sigma);
    table.bind("data.sigma_preset",
               app.add_option("--sigma-preset", sigma_preset,
                              "Named sigma: trancos (10), shanghai (4), or ucsd (5)")
                   ->check(CLI::IsMember({"trancos", "shanghai", "ucsd"})),
               &sigma_preset);
    table.bind("data.max_side",
               app.add_option("--max-side", max_side,
                              "Downscale images whose longer side exceeds this (0 = never)"),
               &max_side);
  }

  template <typename T>
  Dataset<T> load(int channels, const ConfigTable& table) {
    if (manifest.empty())
      throw ConfigError("a dataset is required: give --data or the data.manifest config key");
    sigma = resolve_sigma(sigma, sigma_preset, table, "data.sigma", "data.sigma_preset");
    LoadOptions opt;
    opt.sigma = sigma;
    opt.channels = channels;
    opt.max_side = max_side;
    return load_dataset<T>(manifest, opt);
  }
};

inline const std::vector<int>& split_indices(const Dataset<float>& ds, const std::string& name) {
  const std::vector<int>& idx = ds.split(name);
  if (idx.empty()) throw ConfigError("split \"" + name + "\" is empty in this dataset");
  return idx;
}

template <typename T>
Network<T> network_from_checkpoint(const LoadedCheckpoint<T>& ck) {
  Network<T> net(ck.spec);
  apply_parameters(net, ck.params);
  return net;
}

inline void write_density_file(const std::string& path, const Tensor4<float>& map,
                               const std::string& source, double count_value) {
  const Shape4 s = map.shape();
  ArrayStore store;
  store.meta["kind"] = "density-map";
  store.meta["source_image"] = source;
  store.meta["count"] = count_value;
  store.put("density", {s.h, s.w}, map.data(), map.size());
  store.save(path);
}

inline ImageU8 density_preview(const Tensor4<float>& map) {
  float mx = 0.0f;
  for (std::size_t i = 0; i < map.size(); ++i) mx = std::max(mx, map[i]);
  Tensor4<float> norm(map.shape());
  if (mx > 0.0f)
    for (std::size_t i = 0; i < map.size(); ++i) norm[i] = std::max(0.0f, map[i]) / mx;
  return to_u8(norm);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataCmd {
  std::string out;
  std::string config_path;
  int images = 16;
  std::string count = "3..8";
  std::string canvas = "96x96";
  std::string radius = "3..6";
  std::string background = "stripes";
  std::uint64_t seed = 7;
  int val = 0;
  int test = 0;
  bool force = false;
  ConfigTable table;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("gen-data", "Render a synthetic dot-annotated dataset");
    app->add_option("--out", out, "Output directory")->required();
    app->add_option("--config", config_path, "JSON config file (flat dotted keys)");
    app->add_flag("--force", force, "Write into an existing non-empty directory");
    table.bind("gen.images", app->add_option("--images", images, "Number of images"), &images);
    table.bind("gen.count", app->add_option("--count", count, "Objects per image, e.g. 3..8"),
               &count);
    table.bind("gen.canvas", app->add_option("--canvas", canvas, "Image size HxW"), &canvas);
    table.bind("gen.radius", app->add_option("--radius", radius, "Object radius range, e.g. 3..6"),
               &radius);
    table.bind("gen.background",
               app->add_option("--background", background, "flat, stripes, or noise")
                   ->check(CLI::IsMember({"flat", "stripes", "noise"})),
               &background);
    table.bind("gen.seed", app->add_option("--seed", seed, "Generation seed"), &seed);
    table.bind("gen.val", app->add_option("--val", val, "Trailing images assigned to val"), &val);
    table.bind("gen.test", app->add_option("--test", test, "Trailing images assigned to test"),
               &test);
  }

  int run() {
    if (!config_path.empty()) table.apply_file(config_path);
    seed = resolve_seed(seed, table.provided("gen.seed"));

    if (fs::exists(out) && !fs::is_empty(out) && !force)
      throw ConfigError("output directory " + out + " is not empty (use --force to overwrite)");

    SyntheticSceneSpec spec;
    std::tie(spec.canvas_h, spec.canvas_w) = parse_canvas(canvas);
    std::tie(spec.count_min, spec.count_max) = parse_int_range(count, "count");
    std::tie(spec.radius_min, spec.radius_max) = parse_double_range(radius, "radius");
    spec.background = background;
    spec.seed = seed;

    SyntheticSplits splits;
    splits.val = val;
    splits.test = test;
    generate_synthetic_dataset(spec, images, out, splits);

    nlohmann::ordered_json resolved = table.resolved();
    resolved["gen.seed"] = seed;
    echo_config(out, std::move(resolved));
    std::cout << "wrote " << images << " images to " << out << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
  std::string out;
  std::string config_path;
  std::string resume;
  ModelFlags model;
  DataFlags data;
  std::int64_t iterations = 200000;
  int batch_size = 128;
  double l2_scale = 2.5e-5;
  bool l2_include_biases = false;
  double init_std = 0.02;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 1000;
  std::int64_t checkpoint_every = 10000;
  double centered_fraction = 0.5;
  double flip_prob = 0.5;
  bool gamma_augment = false;
  double gamma_min = 0.5;
  double gamma_max = 1.5;
  bool image_per_patch = false;
  ConfigTable table;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("train", "Train a density-regression model");
    app->add_option("--out", out, "Run directory for checkpoints and the trace")->required();
    app->add_option("--config", config_path, "JSON config file (flat dotted keys)");
    app->add_option("--resume", resume, "Checkpoint to continue from");
    model.add(*app, table);
    data.add(*app, table);
    table.bind("train.iterations",
               app->add_option("--iters,--iterations", iterations, "Training iterations"),
               &iterations);
    table.bind("train.batch_size", app->add_option("--batch-size", batch_size, "Patches per step"),
               &batch_size);
    table.bind("train.l2_scale", app->add_option("--l2-scale", l2_scale, "L2 penalty scale"),
               &l2_scale);
    table.bind("train.l2_include_biases",
               app->add_flag("--l2-biases", l2_include_biases, "Also decay bias terms"),
               &l2_include_biases);
    table.bind("train.init_std",
               app->add_option("--init-std", init_std, "Std-dev of the weight init"), &init_std);
    table.bind("train.seed", app->add_option("--seed", seed, "Training seed"), &seed);
    table.bind("train.eval_every",
               app->add_option("--eval-every", eval_every, "Validation MAE cadence"), &eval_every);
    table.bind("train.checkpoint_every",
               app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint cadence"),
               &checkpoint_every);
    table.bind("sample.centered_fraction",
               app->add_option("--centered-fraction", centered_fraction,
                               "Fraction of patches centered on an annotated object"),
               &centered_fraction);
    table.bind("sample.flip_prob",
               app->add_option("--flip-prob", flip_prob, "Horizontal flip probability"),
               &flip_prob);
    table.bind("sample.gamma_augment",
               app->add_flag("--gamma-augment", gamma_augment, "Random gamma on images"),
               &gamma_augment);
    table.bind("sample.gamma_min", app->add_option("--gamma-min", gamma_min, "Gamma lower bound"),
               &gamma_min);
    table.bind("sample.gamma_max", app->add_option("--gamma-max", gamma_max, "Gamma upper bound"),
               &gamma_max);
    table.bind("sample.image_per_patch",
               app->add_flag("--image-per-patch", image_per_patch,
                             "Draw a fresh source image for every patch"),
               &image_per_patch);
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.iterations = iterations;
    cfg.batch_size = batch_size;
    cfg.l2_scale = l2_scale;
    cfg.l2_include_biases = l2_include_biases;
    cfg.init_std = init_std;
    cfg.seed = seed;
    cfg.eval_every = eval_every;
    cfg.checkpoint_every = checkpoint_every;
    cfg.sampling.centered_fraction = centered_fraction;
    cfg.sampling.flip_prob = flip_prob;
    cfg.sampling.gamma_augment = gamma_augment;
    cfg.sampling.gamma_min = gamma_min;
    cfg.sampling.gamma_max = gamma_max;
    cfg.sampling.image_per_patch = image_per_patch;
    return cfg;
  }

  int run() {
    if (!config_path.empty()) table.apply_file(config_path);
    seed = resolve_seed(seed, table.provided("train.seed"));

    fs::create_directories(out);
    const Dataset<float> ds = data.load<float>(model.in_channels, table);

    nlohmann::ordered_json resolved = table.resolved();
    resolved["train.seed"] = seed;
    resolved["data.sigma"] = data.sigma;
    resolved.erase("data.sigma_preset");  // already folded into data.sigma

    if (!resume.empty()) {
      LoadedCheckpoint<float> ck = load_training_checkpoint<float>(resume);
      Network<float> net(ck.spec);
      resolved["net.channels"] = [&] {
        std::string s;
        for (int c : ck.spec.encoder_channels) s += (s.empty() ? "" : ",") + std::to_string(c);
        return s;
      }();
      resolved["net.gated"] = ck.spec.gated;
      resolved["net.fusion"] = fusion_name(ck.spec.fusion);
      echo_config(out, std::move(resolved));
      const std::int64_t extend = table.provided("train.iterations") ? iterations : 0;
      const TrainState<float> st = resume_training(net, ds, std::move(ck), extend, out);
      report(net, st);
      return 0;
    }

    const NetworkSpec spec = model.spec();
    Network<float> net(spec);
    echo_config(out, std::move(resolved));
    const TrainState<float> st = train(net, ds, config(), out);
    report(net, st);
    return 0;
  }

  void report(const Network<float>& net, const TrainState<float>& st) const {
    std::cout << "model: " << (net.spec().gated ? "gated" : "ungated") << " "
              << fusion_name(net.spec().fusion) << ", " << net.parameter_count()
              << " parameters\n";
    std::cout << "trained to iteration " << st.iteration;
    if (!st.trace_loss.empty()) std::cout << ", final loss " << st.trace_loss.back();
    for (std::size_t i = st.trace_val.size(); i-- > 0;) {
      if (std::isfinite(st.trace_val[i])) {
        std::cout << ", val MAE " << st.trace_val[i] << " (iteration " << st.trace_iter[i] << ")";
        break;
      }
    }
    std::cout << "\nrun directory: " << out << "\n";
  }
};

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmd {
  std::string checkpoint;
  std::string out = "eval";
  std::string config_path;
  std::string split = "test";
  DataFlags data;
  int in_channels = 3;
  int game_max = 3;
  bool averaged = false;
  bool oracle_gt = false;
  bool grids = false;
  ConfigTable table;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    app->add_option("--config", config_path, "JSON config file (flat dotted keys)");
    table.bind("eval.checkpoint", app->add_option("--checkpoint", checkpoint, "Model checkpoint"),
               &checkpoint);
    table.bind("eval.out", app->add_option("--out", out, "Report directory"), &out);
    table.bind("eval.split",
               app->add_option("--split", split, "Dataset split to score")
                   ->check(CLI::IsMember({"train", "val", "test"})),
               &split);
    table.bind("eval.game_max",
               app->add_option("--game-max", game_max, "Highest GAME level to report"), &game_max);
    table.bind("eval.averaged_game",
               app->add_flag("--averaged-game", averaged,
                             "Divide each GAME level by its cell count"),
               &averaged);
    table.bind("eval.oracle_gt",
               app->add_flag("--oracle-gt", oracle_gt,
                             "Score the ground truth against itself (harness sanity)"),
               &oracle_gt);
    table.bind("eval.region_grids",
               app->add_flag("--region-grids", grids, "Dump per-region error grids"), &grids);
    table.bind("net.in_channels",
               app->add_option("--in-channels", in_channels, "Input image channels"),
               &in_channels);
    data.add(*app, table);
  }

  int run() {
    if (!config_path.empty()) table.apply_file(config_path);
    if (checkpoint.empty() && !oracle_gt)
      throw ConfigError("--checkpoint is required unless --oracle-gt is given");

    const Dataset<float> ds = data.load<float>(in_channels, table);
    const std::vector<int>& idx = split_indices(ds, split);

    EvalOptions opt;
    opt.max_game_level = game_max;
    opt.averaged_game = averaged;
    opt.include_region_grids = grids;
    opt.oracle_gt = oracle_gt;

    EvalReport rep;
    if (!checkpoint.empty()) {
      Network<float> net =
          network_from_checkpoint(load_training_checkpoint<float>(checkpoint));
      rep = evaluate(net, ds, idx, opt);
    } else {
      NetworkSpec spec;  // placeholder; oracle mode never runs the network
      spec.in_channels = in_channels;
      spec.encoder_channels = {2, 2, 4, 4, 8};
      Network<float> net(spec);
      rep = evaluate(net, ds, idx, opt);
    }

    fs::create_directories(out);
    nlohmann::ordered_json resolved = table.resolved();
    resolved["data.sigma"] = data.sigma;
    resolved.erase("data.sigma_preset");
    echo_config(out, std::move(resolved));
    rep.write((fs::path(out) / "report.json").string(), (fs::path(out) / "report.csv").string());

    std::cout << "images " << rep.images.size() << "  MAE " << rep.mae << "  MSE " << rep.mse;
    for (std::size_t s = 0; s < rep.game.size(); ++s)
      std::cout << "  GAME(" << s << ") " << rep.game[s];
    std::cout << "\nreports: " << (fs::path(out) / "report.json").string() << ", "
              << (fs::path(out) / "report.csv").string() << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictCmd {
  std::string checkpoint;
  std::string out = ".";
  std::vector<std::string> inputs;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand("predict", "Run inference on image files");
    app->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    app->add_option("--out", out, "Directory for density outputs");
    app->add_option("images", inputs, "Input PNG files")->required()->expected(-1);
  }

  int run() {
    Network<float> net = network_from_checkpoint(load_training_checkpoint<float>(checkpoint));
    fs::create_directories(out);
    int failures = 0;
    for (const std::string& input : inputs) {
      try {
        const ImageU8 img = read_png(input);
        const Tensor4<float> x = to_tensor<float>(img, net.spec().in_channels);
        const Tensor4<float> density = net.forward_padded(x);
        const double c = count(density);
        const std::string stem = fs::path(input).stem().string();
        const std::string base = (fs::path(out) / (stem + "_density")).string();
        write_density_file(base + ".gunc", density, input, c);
        write_png(base + ".png", density_preview(density));
        std::cout << input << ": count " << c << " (" << density.shape().h << "x"
                  << density.shape().w << " map)\n";
      } catch (const Error& e) {
        std::cerr << input << ": " << e.what() << "\n";
        ++failures;
      }
    }
    return failures > 0 ? 2 : 0;
  }
};

// ---------------------------------------------------------------------------
// inspect-gates
// ---------------------------------------------------------------------------

struct GatesCmd {
  std::string checkpoint;
  std::string out = ".";
  std::string config_path;
  std::string split = "train";
  ModelFlags model;
  DataFlags data;
  ConfigTable table;
  CLI::App* app = nullptr;

  void add(CLI::App& root) {
    app = root.add_subcommand(
        "inspect-gates", "Report mean skip-gate activations over a dataset split");
    app->add_option("--config", config_path, "JSON config file (flat dotted keys)");
    table.bind("gates.checkpoint",
               app->add_option("--checkpoint", checkpoint,
                               "Model checkpoint (omit for a fresh zero-initialized model)"),
               &checkpoint);
    table.bind("gates.out", app->add_option("--out", out, "Report directory"), &out);
    table.bind("gates.split",
               app->add_option("--split", split, "Dataset split to average over")
                   ->check(CLI::IsMember({"train", "val", "test"})),
               &split);
    model.add(*app, table);
    data.add(*app, table);
  }

  int run() {
    if (!config_path.empty()) table.apply_file(config_path);

    std::optional<Network<float>> net;
    if (!checkpoint.empty())
      net.emplace(network_from_checkpoint(load_training_checkpoint<float>(checkpoint)));
    else
      net.emplace(model.spec());  // untrained: all-zero parameters, gates at 0.5
    if (!net->spec().gated)
      throw ConfigError("the model is ungated; there are no skip gates to inspect");

    const Dataset<float> ds = data.load<float>(net->spec().in_channels, table);
    const std::vector<int>& idx = split_indices(ds, split);

    std::vector<double> means;
    for (int i : idx) {
      net->forward_padded(ds.images[static_cast<std::size_t>(i)].image);
      const std::vector<double> g = net->gate_activation_report();
      if (means.empty()) means.assign(g.size(), 0.0);
      for (std::size_t k = 0; k < g.size(); ++k) means[k] += g[k];
    }
    for (double& m : means) m /= static_cast<double>(idx.size());

    fs::create_directories(out);
    nlohmann::ordered_json j;
    j["num_images"] = idx.size();
    j["split"] = split;
    j["gate_means"] = means;
    write_text_file((fs::path(out) / "gates.json").string(), j.dump(2) + "\n");
    std::string csv = "skip,mean_activation\n";
    for (std::size_t k = 0; k < means.size(); ++k)
      csv += std::to_string(k) + "," + detail::fmt_g17(means[k]) + "\n";
    write_text_file((fs::path(out) / "gates.csv").string(), csv);

    for (std::size_t k = 0; k < means.size(); ++k)
      std::cout << "gate " << k << ": " << means[k] << "\n";
    return 0;
  }
};

}  // namespace cli_detail

// Runs the command-line tool on `args` (program name excluded). Returns the
// process exit code: 0 success, 1 usage/config error, 2 runtime failure.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Object counting by density-map regression"};
  app.require_subcommand(1);

  cli_detail::GenDataCmd gen;
  cli_detail::TrainCmd train_cmd;
  cli_detail::EvalCmd eval_cmd;
  cli_detail::PredictCmd predict;
  cli_detail::GatesCmd gates;
  gen.add(app);
  train_cmd.add(app);
  eval_cmd.add(app);
  predict.add(app);
  gates.add(app);

  std::vector<const char*> argv;
  argv.push_back("gunet");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit code 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the diagnostic
    return 1;
  }

  try {
    if (gen.app->parsed()) return gen.run();
    if (train_cmd.app->parsed()) return train_cmd.run();
    if (eval_cmd.app->parsed()) return eval_cmd.run();
    if (predict.app->parsed()) return predict.run();
    if (gates.app->parsed()) return gates.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;  // unreachable: a subcommand is required
}

}  // namespace gunet
