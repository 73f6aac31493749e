#pragma once

// Dot-annotation ingestion, Gaussian density-map ground truth, patch
// sampling with augmentation, ROI handling, and a synthetic dataset
// generator for desk-scale experiments.
//
// On-disk layout: one annotation JSON per image
//   {"image": "img_0000.png", "dots": [[x, y], ...], "roi": "roi_0000.png"}
// plus a dataset manifest listing the annotation files, per-image dot
// counts, and split membership:
//   {"sigma": 4.0, "images": [{"id", "annotation", "count", "split"}, ...]}
// Paths inside a JSON file are relative to that file's directory.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gunet/errors.hpp"
#include "gunet/image.hpp"
#include "gunet/rng.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

// ---------------------------------------------------------------------------
// JSON file helpers
// ---------------------------------------------------------------------------

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": invalid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// A single annotation point: x is the column, y is the row, both real-valued.
struct Dot {
  double x = 0;
  double y = 0;
};

// Binary region-of-interest mask; nonzero means inside.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> inside;  // row-major h*w, 0 or 1

  bool at(int y, int x) const { return inside[static_cast<std::size_t>(y) * w + x] != 0; }
};

struct DotAnnotations {
  std::string image_id;
  std::vector<Dot> dots;
  std::optional<Mask> roi;
};

// Ground-truth density map. Values are kept in double regardless of the
// network scalar type so count conservation holds to tight tolerances.
struct DensityMap {
  int h = 0;
  int w = 0;
  double sigma = 0;
  std::vector<double> values;  // row-major h*w

  DensityMap() = default;
  DensityMap(int h_, int w_, double sigma_)
      : h(h_), w(w_), sigma(sigma_), values(static_cast<std::size_t>(h_) * w_, 0.0) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }

  double sum() const {
    double s = 0;
    for (double v : values) s += v;
    return s;
  }

  template <typename T>
  Tensor4<T> to_tensor() const {
    Tensor4<T> t({1, 1, h, w});
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<T>(values[i]);
    return t;
  }
};

// ---------------------------------------------------------------------------
// Density-map generation
// ---------------------------------------------------------------------------

// Sum of per-dot isotropic Gaussians. Each kernel is truncated to a square
// window of half-width 4*sigma and renormalized to unit mass after
// truncation and boundary clipping, so every in-bounds dot contributes
// exactly 1.0 to the map sum; objects near edges are not undercounted.
// Out-of-bounds dots are skipped.
inline DensityMap generate_density_map(const std::vector<Dot>& dots, int h, int w, double sigma) {
  if (sigma <= 0) throw ConfigError("density sigma must be positive, got " + std::to_string(sigma));
  if (h < 1 || w < 1)
    throw ShapeError("density map dims must be positive, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  DensityMap map(h, w, sigma);
  const double radius = 4.0 * sigma;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  for (const Dot& d : dots) {
    if (d.x < 0 || d.x > w - 1 || d.y < 0 || d.y > h - 1) continue;
    const int y0 = std::max(0, static_cast<int>(std::ceil(d.y - radius)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(d.y + radius)));
    const int x0 = std::max(0, static_cast<int>(std::ceil(d.x - radius)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(d.x + radius)));
    double mass = 0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        mass += std::exp(-((y - d.y) * (y - d.y) + (x - d.x) * (x - d.x)) * inv_two_var);
    if (mass <= 0) continue;  // cannot happen for an in-bounds dot
    const double scale = 1.0 / mass;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        map.at(y, x) +=
            scale * std::exp(-((y - d.y) * (y - d.y) + (x - d.x) * (x - d.x)) * inv_two_var);
  }
  return map;
}

// ---------------------------------------------------------------------------
// Pixel-space transforms
// ---------------------------------------------------------------------------

// Maps 8-bit pixel values into [0,1]. Real-valued tensors are detected by
// their range: anything already within [0,1] is returned unchanged, so the
// transform is idempotent.
template <typename T>
Tensor4<T> scale_pixels(const Tensor4<T>& x) {
  T mx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx = std::max(mx, x[i]);
  if (mx <= static_cast<T>(1)) return x;
  Tensor4<T> out(x.shape());
  const T k = static_cast<T>(1.0 / 255.0);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * k;
  return out;
}

// Per-pixel v -> v^gamma for v in [0,1]. Endpoints 0 and 1 are fixed points.
template <typename T>
Tensor4<T> gamma_transform(const Tensor4<T>& x, double gamma) {
  if (gamma <= 0) throw ConfigError("gamma must be positive, got " + std::to_string(gamma));
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<T>(std::pow(static_cast<double>(x[i]), gamma));
  return out;
}

// Zeroes everything outside the region of interest. Works per-channel.
template <typename T>
Tensor4<T> apply_roi(const Tensor4<T>& x, const Mask& roi) {
  const Shape4 s = x.shape();
  if (s.h != roi.h || s.w != roi.w)
    throw ShapeError("roi mask is " + std::to_string(roi.h) + "x" + std::to_string(roi.w) +
                     " but image is " + std::to_string(s.h) + "x" + std::to_string(s.w));
  Tensor4<T> out = x;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xw = 0; xw < s.w; ++xw)
          if (!roi.at(y, xw)) out.at(n, c, y, xw) = 0;
  return out;
}

inline DensityMap apply_roi(const DensityMap& m, const Mask& roi) {
  if (m.h != roi.h || m.w != roi.w)
    throw ShapeError("roi mask is " + std::to_string(roi.h) + "x" + std::to_string(roi.w) +
                     " but density map is " + std::to_string(m.h) + "x" + std::to_string(m.w));
  DensityMap out = m;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (!roi.at(y, x)) out.at(y, x) = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Resizing
// ---------------------------------------------------------------------------

// Bilinear resample with center-aligned sample positions.
template <typename T>
Tensor4<T> resize_bilinear(const Tensor4<T>& x, int out_h, int out_w) {
  const Shape4 s = x.shape();
  if (out_h < 1 || out_w < 1)
    throw ShapeError("resize target must be positive, got " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  Tensor4<T> out({s.n, s.c, out_h, out_w});
  const double fy = static_cast<double>(s.h) / out_h;
  const double fx = static_cast<double>(s.w) / out_w;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y) {
        const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(s.h - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, s.h - 1);
        const double wy = sy - y0;
        for (int xw = 0; xw < out_w; ++xw) {
          const double sx = std::clamp((xw + 0.5) * fx - 0.5, 0.0, static_cast<double>(s.w - 1));
          const int x0 = static_cast<int>(sx);
          const int x1 = std::min(x0 + 1, s.w - 1);
          const double wx = sx - x0;
          const double v = (1 - wy) * ((1 - wx) * x.at(n, c, y0, x0) + wx * x.at(n, c, y0, x1)) +
                           wy * ((1 - wx) * x.at(n, c, y1, x0) + wx * x.at(n, c, y1, x1));
          out.at(n, c, y, xw) = static_cast<T>(v);
        }
      }
  return out;
}

inline Mask resize_nearest(const Mask& m, int out_h, int out_w) {
  Mask out;
  out.h = out_h;
  out.w = out_w;
  out.inside.resize(static_cast<std::size_t>(out_h) * out_w);
  const double fy = static_cast<double>(m.h) / out_h;
  const double fx = static_cast<double>(m.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::clamp(static_cast<int>((y + 0.5) * fy), 0, m.h - 1);
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::clamp(static_cast<int>((x + 0.5) * fx), 0, m.w - 1);
      out.inside[static_cast<std::size_t>(y) * out_w + x] = m.at(sy, sx) ? 1 : 0;
    }
  }
  return out;
}

template <typename T>
struct ResizedImage {
  Tensor4<T> image;
  std::vector<Dot> dots;
  std::optional<Mask> roi;
  double scale_y = 1.0;
  double scale_x = 1.0;
};

// Shrinks the image so max(h, w) == max_side, preserving aspect ratio, and
// scales dot coordinates by the same per-axis factors. No-op when the image
// already fits. Density maps must be regenerated from the scaled dots rather
// than resampled, so mass is conserved exactly.
template <typename T>
ResizedImage<T> resize_with_dots(const Tensor4<T>& image, const std::vector<Dot>& dots,
                                 int max_side, const std::optional<Mask>& roi = std::nullopt) {
  if (max_side < 32) throw ConfigError("max-side must be at least 32, got " + std::to_string(max_side));
  const Shape4 s = image.shape();
  ResizedImage<T> out;
  if (std::max(s.h, s.w) <= max_side) {
    out.image = image;
    out.dots = dots;
    out.roi = roi;
    return out;
  }
  const double factor = static_cast<double>(max_side) / std::max(s.h, s.w);
  const int nh = std::max(1, static_cast<int>(std::lround(s.h * factor)));
  const int nw = std::max(1, static_cast<int>(std::lround(s.w * factor)));
  out.scale_y = static_cast<double>(nh) / s.h;
  out.scale_x = static_cast<double>(nw) / s.w;
  out.image = resize_bilinear(image, nh, nw);
  out.dots.reserve(dots.size());
  for (const Dot& d : dots) out.dots.push_back({d.x * out.scale_x, d.y * out.scale_y});
  if (roi) out.roi = resize_nearest(*roi, nh, nw);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

template <typename T>
struct DatasetImage {
  std::string id;
  std::string split;          // "train", "val", or "test"
  Tensor4<T> image;           // 1 x c x h x w, values in [0,1], ROI-applied
  DensityMap density;         // ROI-applied ground truth
  std::vector<Dot> dots;      // coordinates after any resize
  std::optional<Mask> roi;
};

template <typename T>
struct Dataset {
  std::vector<DatasetImage<T>> images;
  double sigma = 4.0;
  std::vector<int> train, val, test;  // indices into images by split

  const std::vector<int>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown dataset split '" + name + "' (expected train, val, or test)");
  }

  // Validation falls back to the training split when the manifest defines
  // no val images, so small fixtures can still report a validation metric.
  const std::vector<int>& val_or_train() const { return val.empty() ? train : val; }
};

struct LoadOptions {
  double sigma = 4.0;
  int channels = 3;   // network input channels; gray/RGB adapted as needed
  int max_side = 0;   // 0 = never resize
};

inline Mask load_mask(const std::string& path) {
  const ImageU8 img = read_png(path);
  Mask m;
  m.h = img.h;
  m.w = img.w;
  m.inside.resize(static_cast<std::size_t>(img.h) * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      int v = 0;
      for (int c = 0; c < img.channels; ++c) v += img.at(y, x, c);
      m.inside[static_cast<std::size_t>(y) * img.w + x] = v > 0 ? 1 : 0;
    }
  return m;
}

inline DotAnnotations parse_annotation(const nlohmann::json& j, const std::string& path) {
  DotAnnotations ann;
  if (!j.is_object() || !j.contains("image") || !j.contains("dots"))
    throw FormatError(path + ": annotation must contain \"image\" and \"dots\"");
  try {
    ann.image_id = j.at("image").get<std::string>();
    for (const auto& d : j.at("dots")) {
      if (!d.is_array() || d.size() != 2)
        throw FormatError(path + ": each dot must be a two-element [x, y] array");
      ann.dots.push_back({d[0].get<double>(), d[1].get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": malformed annotation: " + e.what());
  }
  return ann;
}

template <typename T>
Dataset<T> load_dataset(const std::string& manifest_path, const LoadOptions& opt) {
  namespace fs = std::filesystem;
  const nlohmann::json manifest = parse_json_file(manifest_path);
  if (!manifest.is_object() || !manifest.contains("images"))
    throw FormatError(manifest_path + ": manifest must contain an \"images\" array");
  const fs::path base = fs::path(manifest_path).parent_path();

  Dataset<T> ds;
  if (opt.sigma <= 0)
    throw ConfigError("density sigma must be positive, got " + std::to_string(opt.sigma));
  ds.sigma = opt.sigma;

  for (const auto& entry : manifest.at("images")) {
    if (!entry.is_object() || !entry.contains("annotation"))
      throw FormatError(manifest_path + ": manifest entry missing \"annotation\"");
    const std::string ann_rel = entry.at("annotation").get<std::string>();
    const fs::path ann_path = base / ann_rel;
    const nlohmann::json aj = parse_json_file(ann_path.string());
    DotAnnotations ann = parse_annotation(aj, ann_path.string());

    const fs::path img_path = ann_path.parent_path() / ann.image_id;
    const ImageU8 raw = read_png(img_path.string());
    Tensor4<T> image = to_tensor<T>(raw, opt.channels);

    std::optional<Mask> roi;
    if (aj.contains("roi") && !aj.at("roi").is_null()) {
      const fs::path roi_path = ann_path.parent_path() / aj.at("roi").get<std::string>();
      roi = load_mask(roi_path.string());
      if (roi->h != raw.h || roi->w != raw.w)
        throw ShapeError(roi_path.string() + ": roi is " + std::to_string(roi->h) + "x" +
                         std::to_string(roi->w) + " but image is " + std::to_string(raw.h) + "x" +
                         std::to_string(raw.w));
    }

    std::vector<Dot> dots = std::move(ann.dots);
    if (opt.max_side > 0) {
      ResizedImage<T> r = resize_with_dots(image, dots, opt.max_side, roi);
      image = std::move(r.image);
      dots = std::move(r.dots);
      roi = std::move(r.roi);
    }

    const Shape4 s = image.shape();
    DensityMap density = generate_density_map(dots, s.h, s.w, ds.sigma);
    if (roi) {
      image = apply_roi(image, *roi);
      density = apply_roi(density, *roi);
    }

    DatasetImage<T> di;
    di.id = entry.value("id", ann.image_id);
    di.split = entry.value("split", std::string("train"));
    di.image = std::move(image);
    di.density = std::move(density);
    di.dots = std::move(dots);
    di.roi = std::move(roi);

    const int index = static_cast<int>(ds.images.size());
    if (di.split == "val")
      ds.val.push_back(index);
    else if (di.split == "test")
      ds.test.push_back(index);
    else
      ds.train.push_back(index);
    ds.images.push_back(std::move(di));
  }
  if (ds.images.empty()) throw FormatError(manifest_path + ": manifest lists no images");
  return ds;
}

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

struct Provenance {
  int image_index = -1;
  int top = 0;
  int left = 0;
  bool centered = false;
  bool flipped = false;
  double gamma = 1.0;  // 1.0 when gamma augmentation is off

  bool operator==(const Provenance&) const = default;
};

template <typename T>
struct PatchBatch {
  Tensor4<T> images;   // n x c x side x side
  Tensor4<T> targets;  // n x 1 x side x side
  std::vector<Provenance> provenance;
};

struct SampleOptions {
  int n = 128;
  double centered_fraction = 0.5;
  int patch_side = 96;
  double flip_prob = 0.5;
  bool gamma_augment = false;
  double gamma_min = 0.5;
  double gamma_max = 1.5;
  // One source image per batch by default; per-patch sources are available
  // for very small datasets where batches should mix images.
  bool image_per_patch = false;
};

namespace detail {

// Crops a patch whose window may extend past the image; out-of-range
// coordinates are reflected back inside, which also handles images smaller
// than the patch.
template <typename T>
void crop_mirrored(const Tensor4<T>& src, int top, int left, int side, bool flip, int batch,
                   Tensor4<T>* dst) {
  const Shape4 s = src.shape();
  for (int c = 0; c < s.c; ++c)
    for (int y = 0; y < side; ++y) {
      const int sy = mirror_index(top + y, s.h);
      for (int x = 0; x < side; ++x) {
        const int sx = mirror_index(left + (flip ? side - 1 - x : x), s.w);
        dst->at(batch, c, y, x) = src.at(0, c, sy, sx);
      }
    }
}

template <typename T>
void crop_density_mirrored(const DensityMap& src, int top, int left, int side, bool flip, int batch,
                           Tensor4<T>* dst) {
  for (int y = 0; y < side; ++y) {
    const int sy = mirror_index(top + y, src.h);
    for (int x = 0; x < side; ++x) {
      const int sx = mirror_index(left + (flip ? side - 1 - x : x), src.w);
      dst->at(batch, 0, y, x) = static_cast<T>(src.at(sy, sx));
    }
  }
}

}  // namespace detail

// Draws a mini-batch of aligned (image, density) patches. The first
// ceil(centered_fraction * n) patches are centered on a uniformly chosen
// annotated dot (clamped so the window stays in bounds whenever the image
// is at least patch-side wide); the rest use uniform top-left offsets.
// Horizontal flips mirror image and target together. Gamma jitter touches
// only the image, never the target, so counts are unaffected.
//
// Randomness: `sampler` drives the image choice and window placement,
// `augment` drives flip and gamma decisions. Patch b reads from fixed child
// streams of each, so toggling one augmentation never shifts another's
// draws, and provenance is reproducible from (seed, iteration) alone.
template <typename T>
PatchBatch<T> sample_patch_batch(const Dataset<T>& ds, const std::vector<int>& pool,
                                 const SampleOptions& opt, RngStream sampler, RngStream augment) {
  if (pool.empty()) throw ConfigError("cannot sample patches: dataset split has zero images");
  if (opt.n < 1) throw ConfigError("batch size must be at least 1, got " + std::to_string(opt.n));
  if (opt.patch_side < 1)
    throw ConfigError("patch side must be at least 1, got " + std::to_string(opt.patch_side));
  if (opt.centered_fraction < 0 || opt.centered_fraction > 1)
    throw ConfigError("centered fraction must lie in [0,1], got " +
                      std::to_string(opt.centered_fraction));
  for (int idx : pool)
    if (idx < 0 || idx >= static_cast<int>(ds.images.size()))
      throw ConfigError("sample pool references image index " + std::to_string(idx) +
                        " outside the dataset");

  const int side = opt.patch_side;
  const int c = ds.images[pool[0]].image.shape().c;
  PatchBatch<T> batch;
  batch.images = Tensor4<T>({opt.n, c, side, side});
  batch.targets = Tensor4<T>({opt.n, 1, side, side});
  batch.provenance.resize(opt.n);

  const int centered_count = static_cast<int>(std::ceil(opt.centered_fraction * opt.n));
  int shared_image = -1;
  if (!opt.image_per_patch)
    shared_image = pool[sampler.child(0).uniform_int(pool.size())];

  for (int b = 0; b < opt.n; ++b) {
    RngStream ps = sampler.child(1 + static_cast<std::uint64_t>(b));
    const int img_idx =
        opt.image_per_patch ? pool[ps.uniform_int(pool.size())] : shared_image;
    const DatasetImage<T>& di = ds.images[img_idx];
    const Shape4 s = di.image.shape();
    const int max_top = std::max(s.h - side, 0);
    const int max_left = std::max(s.w - side, 0);

    Provenance& p = batch.provenance[b];
    p.image_index = img_idx;
    if (b < centered_count && !di.dots.empty()) {
      const Dot& d = di.dots[ps.uniform_int(di.dots.size())];
      p.top = std::clamp(static_cast<int>(std::lround(d.y)) - side / 2, 0, max_top);
      p.left = std::clamp(static_cast<int>(std::lround(d.x)) - side / 2, 0, max_left);
      p.centered = true;
    } else {
      p.top = static_cast<int>(ps.uniform_int(static_cast<std::uint64_t>(max_top) + 1));
      p.left = static_cast<int>(ps.uniform_int(static_cast<std::uint64_t>(max_left) + 1));
    }

    RngStream as = augment.child(static_cast<std::uint64_t>(b));
    p.flipped = as.child(0).bernoulli(opt.flip_prob);
    if (opt.gamma_augment) p.gamma = as.child(1).uniform(opt.gamma_min, opt.gamma_max);

    detail::crop_mirrored(di.image, p.top, p.left, side, p.flipped, b, &batch.images);
    detail::crop_density_mirrored(di.density, p.top, p.left, side, p.flipped, b, &batch.targets);
    if (p.gamma != 1.0)
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x)
            batch.images.at(b, ch, y, x) = static_cast<T>(
                std::pow(static_cast<double>(batch.images.at(b, ch, y, x)), p.gamma));
  }
  return batch;
}

// Convenience overload matching the training loop's stream layout: batches
// for iteration i use child(i) of the sampler and augment stages.
template <typename T>
PatchBatch<T> sample_patch_batch(const Dataset<T>& ds, const std::vector<int>& pool,
                                 const SampleOptions& opt, std::uint64_t seed,
                                 std::uint64_t iteration) {
  return sample_patch_batch(ds, pool, opt, seed_stream(seed, Stream::kSampler).child(iteration),
                            seed_stream(seed, Stream::kAugment).child(iteration));
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation
// ---------------------------------------------------------------------------

struct SyntheticSceneSpec {
  int canvas_h = 96;
  int canvas_w = 96;
  int count_min = 3;
  int count_max = 8;
  double radius_min = 3.0;
  double radius_max = 6.0;
  std::string background = "stripes";  // flat | stripes | noise
  std::uint64_t seed = 7;

  void validate() const {
    if (canvas_h < 16 || canvas_w < 16)
      throw ConfigError("synthetic canvas must be at least 16x16, got " +
                        std::to_string(canvas_h) + "x" + std::to_string(canvas_w));
    if (count_min < 0 || count_max < count_min)
      throw ConfigError("object count range invalid: min " + std::to_string(count_min) +
                        ", max " + std::to_string(count_max));
    if (radius_min < 1.0 || radius_max < radius_min)
      throw ConfigError("object radius range invalid: min " + std::to_string(radius_min) +
                        ", max " + std::to_string(radius_max));
    if (2 * radius_max + 4 > std::min(canvas_h, canvas_w))
      throw ConfigError("objects of radius " + std::to_string(radius_max) +
                        " do not fit fully inside a " + std::to_string(canvas_h) + "x" +
                        std::to_string(canvas_w) + " canvas (need 2*radius+4 per side)");
    if (background != "flat" && background != "stripes" && background != "noise")
      throw ConfigError("unknown background texture '" + background +
                        "' (expected flat, stripes, or noise)");
  }
};

// One rendered scene: an RGB canvas in [0,1] plus exact object centers.
struct SyntheticScene {
  Tensor4<double> image;  // 1 x 3 x h x w
  std::vector<Dot> dots;
};

// Renders anti-aliased disks on the chosen background. All randomness comes
// from fixed child streams of `rng`, so a scene is a pure function of
// (seed, image index).
inline SyntheticScene render_synthetic_scene(const SyntheticSceneSpec& spec, RngStream rng) {
  spec.validate();
  const int h = spec.canvas_h, w = spec.canvas_w;
  SyntheticScene scene;
  scene.image = Tensor4<double>({1, 3, h, w});

  // Background: child(2) supplies per-pixel noise when requested.
  if (spec.background == "flat") {
    scene.image.fill(0.25);
  } else if (spec.background == "stripes") {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = 0.22 + 0.08 * std::sin((x + y) * (2.0 * 3.14159265358979323846 / 16.0));
        for (int c = 0; c < 3; ++c) scene.image.at(0, c, y, x) = v;
      }
  } else {
    RngStream noise = rng.child(2);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = noise.uniform(0.15, 0.35);
        for (int c = 0; c < 3; ++c) scene.image.at(0, c, y, x) = v;
      }
  }

  const int count = spec.count_min +
                    static_cast<int>(rng.child(0).uniform_int(
                        static_cast<std::uint64_t>(spec.count_max - spec.count_min) + 1));
  RngStream objects = rng.child(1);
  for (int i = 0; i < count; ++i) {
    RngStream os = objects.child(static_cast<std::uint64_t>(i));
    const double r = os.uniform(spec.radius_min, spec.radius_max);
    const double cx = os.uniform(r + 1.0, w - 2.0 - r);
    const double cy = os.uniform(r + 1.0, h - 2.0 - r);
    const double col[3] = {os.uniform(0.55, 1.0), os.uniform(0.55, 1.0), os.uniform(0.55, 1.0)};
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
        const double alpha = std::clamp(r + 0.5 - d, 0.0, 1.0);  // 1px anti-aliased edge
        if (alpha <= 0) continue;
        for (int c = 0; c < 3; ++c)
          scene.image.at(0, c, y, x) =
              (1 - alpha) * scene.image.at(0, c, y, x) + alpha * col[c];
      }
    scene.dots.push_back({cx, cy});
  }
  return scene;
}

// Carve-out sizes for the synthetic manifest; the val/test images are the
// last entries of the generated sequence.
struct SyntheticSplits {
  int val = 0;
  int test = 0;
};

// Writes n_images rendered scenes, their annotation JSONs, and a manifest
// into out_dir. Byte-identical across runs for the same spec and seed.
inline void generate_synthetic_dataset(const SyntheticSceneSpec& spec, int n_images,
                                       const std::string& out_dir,
                                       const SyntheticSplits& splits = {}) {
  namespace fs = std::filesystem;
  spec.validate();
  if (n_images < 1)
    throw ConfigError("synthetic dataset needs at least 1 image, got " + std::to_string(n_images));
  if (splits.val < 0 || splits.test < 0 || splits.val + splits.test >= n_images)
    throw ConfigError("split sizes (val " + std::to_string(splits.val) + ", test " +
                      std::to_string(splits.test) + ") must leave at least one training image of " +
                      std::to_string(n_images));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  RngStream root = seed_stream(spec.seed, Stream::kSynth);
  nlohmann::ordered_json manifest;
  manifest["canvas"] = {spec.canvas_h, spec.canvas_w};
  manifest["seed"] = spec.seed;
  manifest["images"] = nlohmann::ordered_json::array();

  for (int i = 0; i < n_images; ++i) {
    const SyntheticScene scene = render_synthetic_scene(spec, root.child(static_cast<std::uint64_t>(i)));

    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d", i);
    const std::string png_name = std::string(name) + ".png";
    const std::string ann_name = std::string(name) + ".json";

    write_png((fs::path(out_dir) / png_name).string(), to_u8(scene.image));

    nlohmann::ordered_json ann;
    ann["image"] = png_name;
    ann["dots"] = nlohmann::ordered_json::array();
    for (const Dot& d : scene.dots) ann["dots"].push_back({d.x, d.y});
    write_text_file((fs::path(out_dir) / ann_name).string(), ann.dump(2) + "\n");

    std::string split = "train";
    if (i >= n_images - splits.test)
      split = "test";
    else if (i >= n_images - splits.test - splits.val)
      split = "val";
    nlohmann::ordered_json entry;
    entry["id"] = name;
    entry["annotation"] = ann_name;
    entry["count"] = static_cast<int>(scene.dots.size());
    entry["split"] = split;
    manifest["images"].push_back(entry);
  }
  write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

}  // namespace gunet
