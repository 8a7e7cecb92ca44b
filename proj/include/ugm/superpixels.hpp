#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ugm/cube.hpp"
#include "ugm/energy.hpp"
#include "ugm/error.hpp"
#include "ugm/features.hpp"
#include "ugm/io.hpp"

namespace ugm {

struct SuperpixelSegmentation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t count = 0;                  // K
  std::vector<std::uint32_t> assignment;  // H*W ids in 0..K-1

  std::size_t pixels() const { return height * width; }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(count, 0);
    for (auto a : assignment) ++s[a];
    return s;
  }
};

/// How the spatial term is weighted against the spectral one.
/// `per_area`: d_spec^2 + (regularizer / S^2) d_xy^2, as in VLFeat.
/// `per_length`: d_spec^2 + (regularizer / S)^2 d_xy^2.
enum class SlicSpatialWeight { per_area, per_length };

struct SlicParams {
  std::size_t requested_superpixels = 100;
  double regularizer = 100.0;
  std::size_t min_region_size = 9;
  std::size_t kmeans_iters = 10;
  SlicSpatialWeight spatial = SlicSpatialWeight::per_area;
};

namespace detail {

/// Relabels ids by first appearance in raster order.
inline std::size_t relabel_raster(std::vector<std::uint32_t>& ids) {
  constexpr auto none = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t max_id = 0;
  for (auto v : ids) max_id = std::max(max_id, v);
  std::vector<std::uint32_t> map(static_cast<std::size_t>(max_id) + 1, none);
  std::uint32_t next = 0;
  for (auto& v : ids) {
    if (map[v] == none) map[v] = next++;
    v = map[v];
  }
  return next;
}

/// Splits every id into its 4-connected components.
inline std::size_t split_components(std::size_t H, std::size_t W, std::vector<std::uint32_t>& ids) {
  constexpr auto none = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> comp(ids.size(), none);
  std::vector<std::size_t> stack;
  std::uint32_t next = 0;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    if (comp[s] != none) continue;
    comp[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t r = p / W, c = p % W;
      auto visit = [&](std::size_t q) {
        if (comp[q] == none && ids[q] == ids[s]) {
          comp[q] = next;
          stack.push_back(q);
        }
      };
      if (c > 0) visit(p - 1);
      if (c + 1 < W) visit(p + 1);
      if (r > 0) visit(p - W);
      if (r + 1 < H) visit(p + W);
    }
    ++next;
  }
  ids.swap(comp);
  return next;
}

/// Merges segments smaller than `min_size`, smallest (size, id) first, into
/// the largest 4-adjacent segment (lowest id on ties). Ids must be 0..K-1.
inline void merge_small(std::size_t H, std::size_t W, std::size_t K, std::size_t min_size,
                        std::vector<std::uint32_t>& ids) {
  std::vector<std::size_t> size(K, 0);
  for (auto v : ids) ++size[v];
  std::vector<std::set<std::uint32_t>> adj(K);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const auto a = ids[r * W + c];
      if (c + 1 < W && ids[r * W + c + 1] != a) {
        adj[a].insert(ids[r * W + c + 1]);
        adj[ids[r * W + c + 1]].insert(a);
      }
      if (r + 1 < H && ids[(r + 1) * W + c] != a) {
        adj[a].insert(ids[(r + 1) * W + c]);
        adj[ids[(r + 1) * W + c]].insert(a);
      }
    }
  std::vector<std::uint32_t> parent(K);
  for (std::uint32_t k = 0; k < K; ++k) parent[k] = k;
  std::set<std::pair<std::size_t, std::uint32_t>> small;
  for (std::uint32_t k = 0; k < K; ++k)
    if (size[k] < min_size) small.insert({size[k], k});
  std::size_t alive = K;
  while (!small.empty() && alive > 1) {
    const auto [sz, b] = *small.begin();
    small.erase(small.begin());
    std::uint32_t a = b;
    for (auto n : adj[b])
      if (a == b || size[n] > size[a] || (size[n] == size[a] && n < a)) a = n;
    if (a == b) continue;  // isolated; cannot happen on a connected grid
    if (size[a] < min_size) small.erase({size[a], a});
    size[a] += size[b];
    size[b] = 0;
    parent[b] = a;
    for (auto n : adj[b]) {
      if (n == a) continue;
      adj[n].erase(b);
      adj[n].insert(a);
      adj[a].insert(n);
    }
    adj[a].erase(b);
    adj[b].clear();
    --alive;
    if (size[a] < min_size) small.insert({size[a], a});
  }
  for (auto& v : ids) {
    auto r = v;
    while (parent[r] != r) r = parent[r];
    v = r;
  }
}

}  // namespace detail

/// SLIC on the band-standardized cube: grid seeds with spacing
/// S = sqrt(H*W / requested), assignment within a 2S x 2S window of each
/// center, then connectivity enforcement and small-fragment merging.
inline SuperpixelSegmentation slic(const HsiCube& cube, const SlicParams& p) {
  const std::size_t H = cube.height, W = cube.width, n = cube.pixels(), B = cube.bands;
  if (p.requested_superpixels < 1 || p.min_region_size < 1 || p.kmeans_iters < 1 || !(p.regularizer > 0.0))
    throw DataError("SLIC parameters must be positive");
  if (p.requested_superpixels > n)
    throw DataError("requested " + std::to_string(p.requested_superpixels) + " superpixels for " +
                    std::to_string(n) + " pixels");
  const HsiCube z = standardize(cube);
  const double S = std::sqrt(static_cast<double>(n) / static_cast<double>(p.requested_superpixels));
  const double weight = p.spatial == SlicSpatialWeight::per_area ? p.regularizer / (S * S)
                                                                 : (p.regularizer / S) * (p.regularizer / S);
  std::size_t nx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(W) / S)));
  std::size_t ny = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(H) / S)));
  if (p.requested_superpixels == 1) nx = ny = 1;
  nx = std::min(nx, W);
  ny = std::min(ny, H);
  const std::size_t K0 = nx * ny;

  // center: B spectral values then (x, y)
  const std::size_t D = B + 2;
  std::vector<double> centers(K0 * D);
  std::vector<std::uint32_t> assign(n);
  for (std::size_t iy = 0; iy < ny; ++iy)
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const std::size_t k = iy * nx + ix;
      const double cx = (static_cast<double>(ix) + 0.5) * static_cast<double>(W) / static_cast<double>(nx);
      const double cy = (static_cast<double>(iy) + 0.5) * static_cast<double>(H) / static_cast<double>(ny);
      const auto px = std::min(W - 1, static_cast<std::size_t>(cx)), py = std::min(H - 1, static_cast<std::size_t>(cy));
      const auto spec = z.spectrum(py * W + px);
      std::copy(spec.begin(), spec.end(), centers.begin() + static_cast<std::ptrdiff_t>(k * D));
      centers[k * D + B] = cx - 0.5;
      centers[k * D + B + 1] = cy - 0.5;
    }
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      assign[r * W + c] = static_cast<std::uint32_t>(std::min(ny - 1, r * ny / H) * nx + std::min(nx - 1, c * nx / W));

  std::vector<double> dist(n);
  std::vector<double> acc(K0 * D);
  std::vector<std::size_t> cnt(K0);
  const double reach = S;
  for (std::size_t it = 0; it < p.kmeans_iters; ++it) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < K0; ++k) {
      const double* ctr = centers.data() + k * D;
      const double cx = ctr[B], cy = ctr[B + 1];
      const auto x0 = static_cast<std::size_t>(std::max(0.0, std::ceil(cx - reach)));
      const auto y0 = static_cast<std::size_t>(std::max(0.0, std::ceil(cy - reach)));
      const auto x1 = static_cast<std::size_t>(std::min(static_cast<double>(W - 1), std::floor(cx + reach)));
      const auto y1 = static_cast<std::size_t>(std::min(static_cast<double>(H - 1), std::floor(cy + reach)));
      if (cx + reach < 0 || cy + reach < 0) continue;
      for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) {
          const std::size_t q = y * W + x;
          const double* v = z.values.data() + q * B;
          double ds = 0.0;
          for (std::size_t b = 0; b < B; ++b) ds += (v[b] - ctr[b]) * (v[b] - ctr[b]);
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double d = ds + weight * (dx * dx + dy * dy);
          if (d < dist[q]) {
            dist[q] = d;
            assign[q] = static_cast<std::uint32_t>(k);
          }
        }
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::size_t q = 0; q < n; ++q) {
      const std::size_t k = assign[q];
      double* a = acc.data() + k * D;
      const double* v = z.values.data() + q * B;
      for (std::size_t b = 0; b < B; ++b) a[b] += v[b];
      a[B] += static_cast<double>(q % W);
      a[B + 1] += static_cast<double>(q / W);
      ++cnt[k];
    }
    for (std::size_t k = 0; k < K0; ++k) {
      if (cnt[k] == 0) continue;
      for (std::size_t d = 0; d < D; ++d) centers[k * D + d] = acc[k * D + d] / static_cast<double>(cnt[k]);
    }
  }

  SuperpixelSegmentation seg;
  seg.height = H;
  seg.width = W;
  const std::size_t K1 = detail::split_components(H, W, assign);
  detail::merge_small(H, W, K1, p.min_region_size, assign);
  seg.count = detail::relabel_raster(assign);
  seg.assignment = std::move(assign);
  return seg;
}

/// Checks ids are 0..K-1 with every id present and every segment 4-connected.
inline void validate(const SuperpixelSegmentation& seg) {
  if (seg.assignment.size() != seg.pixels()) throw DataError("segmentation does not cover the image");
  for (auto a : seg.assignment)
    if (a >= seg.count) throw DataError("superpixel id out of range");
  for (auto s : seg.sizes())
    if (s == 0) throw DataError("superpixel ids are not contiguous");
  auto ids = seg.assignment;
  if (detail::split_components(seg.height, seg.width, ids) != seg.count)
    throw DataError("a superpixel is not 4-connected");
}

/// Region adjacency graph: an edge (a, b), a < b, for every pair of
/// superpixels with 4-adjacent pixels, in lexicographic order.
inline Graph adjacency(const SuperpixelSegmentation& seg) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  const std::size_t H = seg.height, W = seg.width;
  auto add = [&](std::uint32_t a, std::uint32_t b) {
    if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
  };
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      if (c + 1 < W) add(seg.assignment[r * W + c], seg.assignment[r * W + c + 1]);
      if (r + 1 < H) add(seg.assignment[r * W + c], seg.assignment[(r + 1) * W + c]);
    }
  Graph g;
  g.n_nodes = seg.count;
  for (const auto& [a, b] : pairs) g.edges.push_back({a, b});
  return g;
}

/// E_s(c) = -ln(max(mean of member P(c), eps))
inline UnaryTable aggregate_unary(const ProbabilityField& p, const SuperpixelSegmentation& seg, double eps = 1e-12) {
  if (p.height != seg.height || p.width != seg.width) throw DataError("probability field does not match segmentation");
  if (!(eps > 0.0)) throw DataError("probability floor must be positive");
  const std::size_t M = p.classes;
  std::vector<double> sum(seg.count * M, 0.0);
  std::vector<std::size_t> cnt(seg.count, 0);
  for (std::size_t q = 0; q < seg.pixels(); ++q) {
    const std::size_t s = seg.assignment[q];
    ++cnt[s];
    for (std::size_t c = 0; c < M; ++c) sum[s * M + c] += p(q, c);
  }
  UnaryTable u(seg.count, M);
  for (std::size_t s = 0; s < seg.count; ++s)
    for (std::size_t c = 0; c < M; ++c)
      u(s, c) = -std::log(std::max(sum[s * M + c] / static_cast<double>(cnt[s]), eps));
  return u;
}

/// Pixel label = 1 + label of its superpixel.
inline LabelMap project_labels(const SuperpixelSegmentation& seg, std::span<const int> sp_labels) {
  if (sp_labels.size() != seg.count) throw DataError("one label per superpixel required");
  LabelMap out(seg.height, seg.width);
  for (std::size_t q = 0; q < seg.pixels(); ++q) out.labels[q] = sp_labels[seg.assignment[q]] + 1;
  return out;
}

/// Header (kind=segmentation, height, width, bands=1, dtype=u32,
/// interleave=bsq, superpixels, data) plus raw ids.
inline void save_segmentation(const SuperpixelSegmentation& seg, const fs::path& header_path) {
  const fs::path data = sidecar_path(header_path);
  write_raw<std::uint32_t>(data, seg.assignment);
  KeyValues kv;
  kv.set("kind", std::string("segmentation"));
  kv.set("height", seg.height);
  kv.set("width", seg.width);
  kv.set("bands", std::size_t{1});
  kv.set("dtype", std::string("u32"));
  kv.set("interleave", std::string("bsq"));
  kv.set("superpixels", seg.count);
  kv.set("data", data.filename().string());
  kv.save(header_path);
}

inline SuperpixelSegmentation load_segmentation(const fs::path& header_path) {
  const CubeHeader h = read_cube_header(header_path);
  if (h.dtype != "u32" || h.bands != 1) throw FormatError(header_path.string() + ": expected a u32 single-band file");
  SuperpixelSegmentation seg;
  seg.height = h.height;
  seg.width = h.width;
  seg.assignment = read_raw<std::uint32_t>(h.data, h.height * h.width);
  seg.count = h.raw.get_size("superpixels");
  validate(seg);
  return seg;
}

}  // namespace ugm
