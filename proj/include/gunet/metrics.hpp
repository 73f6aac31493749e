#pragma once
// Counting metrics: count extraction from density maps, MAE, root-MSE,
// grid-partitioned GAME(s), and whole-dataset evaluation reports.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gunet/data.hpp"
#include "gunet/errors.hpp"
#include "gunet/net.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

namespace detail {

inline void check_roi_matches(int h, int w, const Mask& roi, const char* what) {
  if (roi.h != h || roi.w != w)
    throw ShapeError(std::string(what) + ": ROI is " + std::to_string(roi.h) + "x" +
                     std::to_string(roi.w) + " but the map is " + std::to_string(h) + "x" +
                     std::to_string(w));
}

// Row-major sum over the half-open pixel rectangle [y0,y1) x [x0,x1),
// restricted to the ROI when one is given. Every count in this module goes
// through here so that whole-image counts and grid-cell counts accumulate in
// the same order (this is what makes GAME(0) equal MAE bit for bit).
inline double masked_region_sum(const std::vector<double>& values, int w, int y0, int y1, int x0,
                                int x1, const Mask* roi) {
  double acc = 0.0;
  for (int y = y0; y < y1; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * static_cast<std::size_t>(w);
    for (int x = x0; x < x1; ++x)
      if (roi == nullptr || roi->at(y, x)) acc += values[row + static_cast<std::size_t>(x)];
  }
  return acc;
}

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

// Total count: the integral of the density map, restricted to the ROI when
// one is given. Negative values are summed as-is (no clamping).
inline double count(const DensityMap& map, const std::optional<Mask>& roi = std::nullopt) {
  if (roi) detail::check_roi_matches(map.h, map.w, *roi, "count");
  return detail::masked_region_sum(map.values, map.w, 0, map.h, 0, map.w, roi ? &*roi : nullptr);
}

template <typename T>
double count(const Tensor4<T>& map, const std::optional<Mask>& roi = std::nullopt) {
  const Shape4 s = map.shape();
  if (s.n != 1 || s.c != 1)
    throw ShapeError("count expects a 1x1xHxW map, got " + s.str());
  if (roi) detail::check_roi_matches(s.h, s.w, *roi, "count");
  double acc = 0.0;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      if (!roi || roi->at(y, x)) acc += static_cast<double>(map.at(0, 0, y, x));
  return acc;
}

// Reinterpret a 1x1xHxW tensor as a plain double-valued map.
template <typename T>
DensityMap density_from_tensor(const Tensor4<T>& t) {
  const Shape4 s = t.shape();
  if (s.n != 1 || s.c != 1)
    throw ShapeError("density_from_tensor expects a 1x1xHxW tensor, got " + s.str());
  DensityMap m;
  m.h = s.h;
  m.w = s.w;
  m.sigma = 0.0;
  m.values.resize(static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w));
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<double>(t[i]);
  return m;
}

namespace detail {

inline void check_count_lists(const std::vector<double>& preds, const std::vector<double>& gts,
                              const char* what) {
  if (preds.empty() || gts.empty()) throw ConfigError(std::string(what) + ": empty count list");
  if (preds.size() != gts.size())
    throw ShapeError(std::string(what) + ": " + std::to_string(preds.size()) +
                     " predictions vs " + std::to_string(gts.size()) + " ground truths");
}

}  // namespace detail

// Mean absolute error over per-image counts.
inline double mae(const std::vector<double>& preds, const std::vector<double>& gts) {
  detail::check_count_lists(preds, gts, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - gts[i]);
  return acc / static_cast<double>(preds.size());
}

// Root of the mean squared error over per-image counts.
inline double mse(const std::vector<double>& preds, const std::vector<double>& gts) {
  detail::check_count_lists(preds, gts, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - gts[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

// Per-cell absolute count errors on the 2^s x 2^s grid, row-major. Remainder
// pixels on non-divisible sides go to the last row/column of cells.
inline std::vector<double> region_error_grid(const DensityMap& pred, const DensityMap& gt, int s,
                                             const std::optional<Mask>& roi = std::nullopt) {
  if (s < 0) throw ConfigError("GAME level must be >= 0, got " + std::to_string(s));
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("GAME: prediction is " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " but ground truth is " + std::to_string(gt.h) +
                     "x" + std::to_string(gt.w));
  if (roi) detail::check_roi_matches(pred.h, pred.w, *roi, "GAME");
  const int cells = 1 << s;
  if (pred.h < cells || pred.w < cells)
    throw ConfigError("GAME level " + std::to_string(s) + " needs a map of at least " +
                      std::to_string(cells) + " pixels per side, got " + std::to_string(pred.h) +
                      "x" + std::to_string(pred.w));
  const Mask* mask = roi ? &*roi : nullptr;
  const int base_h = pred.h / cells;
  const int base_w = pred.w / cells;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(cells) * static_cast<std::size_t>(cells));
  for (int gy = 0; gy < cells; ++gy) {
    const int y0 = gy * base_h;
    const int y1 = (gy == cells - 1) ? pred.h : y0 + base_h;
    for (int gx = 0; gx < cells; ++gx) {
      const int x0 = gx * base_w;
      const int x1 = (gx == cells - 1) ? pred.w : x0 + base_w;
      const double pd = detail::masked_region_sum(pred.values, pred.w, y0, y1, x0, x1, mask);
      const double gd = detail::masked_region_sum(gt.values, gt.w, y0, y1, x0, x1, mask);
      grid.push_back(std::abs(pd - gd));
    }
  }
  return grid;
}

// Grid Average Mean absolute Error for one image pair. The default sums the
// per-cell errors; `averaged` divides by the number of cells instead.
inline double game(const DensityMap& pred, const DensityMap& gt, int s,
                   const std::optional<Mask>& roi = std::nullopt, bool averaged = false) {
  const std::vector<double> grid = region_error_grid(pred, gt, s, roi);
  double total = 0.0;
  for (double cell : grid) total += cell;
  return averaged ? total / static_cast<double>(grid.size()) : total;
}

// Mean GAME(s) over a list of image pairs.
inline double game(const std::vector<DensityMap>& preds, const std::vector<DensityMap>& gts, int s,
                   const std::optional<Mask>& roi = std::nullopt, bool averaged = false) {
  if (preds.empty() || gts.empty()) throw ConfigError("game: empty map list");
  if (preds.size() != gts.size())
    throw ShapeError("game: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(gts.size()) + " ground truths");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += game(preds[i], gts[i], s, roi, averaged);
  return acc / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Evaluation reports
// ---------------------------------------------------------------------------

struct EvalImageRow {
  std::string id;
  double predicted = 0.0;
  double ground_truth = 0.0;
  std::vector<double> game;           // levels 0..S
  std::vector<double> region_errors;  // per-cell errors at level S (optional)
};

struct EvalReport {
  double mae = 0.0;
  double mse = 0.0;
  std::vector<double> game;  // aggregate, levels 0..S
  bool averaged_game = false;
  std::optional<std::vector<double>> gate_means;  // one per skip, when gated
  std::vector<EvalImageRow> images;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["num_images"] = images.size();
    j["mae"] = mae;
    j["mse"] = mse;
    j["game"] = game;
    j["averaged_game"] = averaged_game;
    if (gate_means) j["gate_means"] = *gate_means;
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& row : images) {
      nlohmann::ordered_json r;
      r["id"] = row.id;
      r["predicted"] = row.predicted;
      r["ground_truth"] = row.ground_truth;
      r["game"] = row.game;
      if (!row.region_errors.empty()) r["region_errors"] = row.region_errors;
      j["images"].push_back(std::move(r));
    }
    return j;
  }

  std::string to_csv() const {
    std::string out = "image_id,predicted,ground_truth,abs_error";
    const std::size_t levels = images.empty() ? game.size() : images.front().game.size();
    for (std::size_t s = 0; s < levels; ++s) out += ",game" + std::to_string(s);
    out += '\n';
    for (const auto& row : images) {
      out += detail::csv_escape(row.id);
      out += ',' + detail::fmt_g17(row.predicted);
      out += ',' + detail::fmt_g17(row.ground_truth);
      out += ',' + detail::fmt_g17(std::abs(row.predicted - row.ground_truth));
      for (double g : row.game) out += ',' + detail::fmt_g17(g);
      out += '\n';
    }
    return out;
  }

  void write(const std::string& json_path, const std::string& csv_path = "") const {
    write_text_file(json_path, to_json().dump(2) + "\n");
    if (!csv_path.empty()) write_text_file(csv_path, to_csv());
  }
};

struct EvalOptions {
  int max_game_level = 3;
  bool averaged_game = false;
  bool include_region_grids = false;
  bool oracle_gt = false;  // score the ground truth against itself (harness sanity)
};

// Full-image evaluation over a dataset split: pad-and-crop inference, ROI
// applied to both prediction and ground truth, MAE/MSE/GAME aggregates, and
// mean gate activations when the network is gated.
template <typename T>
EvalReport evaluate(Network<T>& net, const Dataset<T>& ds, const std::vector<int>& split,
                    const EvalOptions& opt = {}) {
  if (split.empty()) throw ConfigError("evaluation split is empty");
  if (opt.max_game_level < 0)
    throw ConfigError("max GAME level must be >= 0, got " + std::to_string(opt.max_game_level));
  EvalReport rep;
  rep.averaged_game = opt.averaged_game;
  const int S = opt.max_game_level;
  std::vector<double> gate_acc;
  for (int idx : split) {
    const DatasetImage<T>& im = ds.images.at(static_cast<std::size_t>(idx));
    try {
      DensityMap pred;
      if (opt.oracle_gt)
        pred = im.density;
      else
        pred = density_from_tensor(net.forward_padded(im.image));
      EvalImageRow row;
      row.id = im.id;
      row.predicted = count(pred, im.roi);
      row.ground_truth = count(im.density, im.roi);
      for (int s = 0; s <= S; ++s)
        row.game.push_back(game(pred, im.density, s, im.roi, opt.averaged_game));
      if (opt.include_region_grids)
        row.region_errors = region_error_grid(pred, im.density, S, im.roi);
      if (!opt.oracle_gt && net.spec().gated) {
        const std::vector<double> g = net.gate_activation_report();
        if (gate_acc.empty()) gate_acc.assign(g.size(), 0.0);
        for (std::size_t k = 0; k < g.size(); ++k) gate_acc[k] += g[k];
      }
      rep.images.push_back(std::move(row));
    } catch (const ShapeError& e) {
      throw ShapeError("image '" + im.id + "': " + e.what());
    } catch (const IoError& e) {
      throw IoError("image '" + im.id + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("image '" + im.id + "': " + e.what());
    }
  }
  const double n = static_cast<double>(rep.images.size());
  std::vector<double> preds, gts;
  preds.reserve(rep.images.size());
  gts.reserve(rep.images.size());
  for (const auto& row : rep.images) {
    preds.push_back(row.predicted);
    gts.push_back(row.ground_truth);
  }
  rep.mae = mae(preds, gts);
  rep.mse = mse(preds, gts);
  rep.game.assign(static_cast<std::size_t>(S) + 1, 0.0);
  for (int s = 0; s <= S; ++s) {
    double acc = 0.0;
    for (const auto& row : rep.images) acc += row.game[static_cast<std::size_t>(s)];
    rep.game[static_cast<std::size_t>(s)] = acc / n;
  }
  if (!gate_acc.empty()) {
    for (double& v : gate_acc) v /= n;
    rep.gate_means = std::move(gate_acc);
  }
  return rep;
}

}  // namespace gunet
