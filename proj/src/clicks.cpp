#include "fbrs/clicks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace fbrs {

namespace {

constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();

// Lower envelope of parabolas (q - p)^2 + f[p] over finite entries of f.
void envelope_1d(const std::int64_t* f, std::size_t stride, int n, std::int64_t* out, std::size_t out_stride,
                 std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const std::int64_t fq = f[q * stride];
    if (fq == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -std::numeric_limits<double>::infinity();
      z[1] = std::numeric_limits<double>::infinity();
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      const double fp = static_cast<double>(f[p * stride]);
      s = ((static_cast<double>(fq) + double(q) * q) - (fp + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so this stops at k == 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q * out_stride] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const std::int64_t dq = q - v[j];
    out[q * out_stride] = dq * dq + f[v[j] * stride];
  }
}

struct ComponentInfo {
  int id = 0;
  std::size_t size = 0;
};

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

// Distance (squared) from each pixel of `region` to the nearest pixel outside
// it, treating everything beyond the image border as outside.
std::vector<std::int64_t> interior_sq_distance(const BinaryMask& region) {
  const int h = region.height + 2, w = region.width + 2;
  std::vector<std::uint8_t> seeds(static_cast<std::size_t>(h) * w, 1);
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x) seeds[(y + 1) * static_cast<std::size_t>(w) + x + 1] = !region(y, x);
  const auto padded = squared_distance_transform(seeds, h, w);
  std::vector<std::int64_t> out(static_cast<std::size_t>(region.height) * region.width);
  for (int y = 0; y < region.height; ++y)
    for (int x = 0; x < region.width; ++x)
      out[static_cast<std::size_t>(y) * region.width + x] = padded[(y + 1) * static_cast<std::size_t>(w) + x + 1];
  return out;
}

// Best click pixel inside `error`; std::nullopt if every candidate is taken.
std::optional<std::pair<int, int>> farthest_in_largest_component(const BinaryMask& error, const ClickSet& existing) {
  int count = 0;
  const auto labels = label_components(error, &count);
  if (count == 0) return std::nullopt;
  std::vector<ComponentInfo> comps(count);
  for (int i = 0; i < count; ++i) comps[i].id = i + 1;
  for (int l : labels)
    if (l > 0) ++comps[l - 1].size;
  std::stable_sort(comps.begin(), comps.end(), [](const ComponentInfo& a, const ComponentInfo& b) {
    return a.size > b.size;
  });
  for (const auto& comp : comps) {
    BinaryMask region(error.height, error.width);
    for (std::size_t i = 0; i < labels.size(); ++i) region.data[i] = labels[i] == comp.id;
    const auto dist = interior_sq_distance(region);
    std::int64_t best = -1;
    std::pair<int, int> best_px{-1, -1};
    for (int y = 0; y < error.height; ++y) {
      for (int x = 0; x < error.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * error.width + x;
        if (!region.data[i] || contains_pixel(existing, y, x)) continue;
        if (dist[i] > best) {
          best = dist[i];
          best_px = {y, x};
        }
      }
    }
    if (best >= 0) return best_px;
  }
  return std::nullopt;
}

}  // namespace

void validate_clicks(const ClickSet& clicks, int height, int width) {
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto& c = clicks[i];
    if (c.u < 0 || c.u >= height || c.v < 0 || c.v >= width)
      throw ContractError("click (" + std::to_string(c.u) + "," + std::to_string(c.v) + ") outside image");
    if (i > 0 && c.index <= clicks[i - 1].index) throw ContractError("click indices must strictly increase");
    for (std::size_t j = 0; j < i; ++j) {
      if (clicks[j].u == c.u && clicks[j].v == c.v) throw ContractError("duplicate click pixel");
    }
  }
}

bool contains_pixel(const ClickSet& clicks, int u, int v) {
  return std::any_of(clicks.begin(), clicks.end(), [&](const Click& c) { return c.u == u && c.v == v; });
}

std::vector<std::int64_t> squared_distance_transform(const std::vector<std::uint8_t>& seeds, int height, int width) {
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (seeds.size() != n) throw ContractError("seed grid size mismatch");
  std::vector<std::int64_t> f(n), cols(n), out(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = seeds[i] ? 0 : kInf;
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < width; ++x) envelope_1d(f.data() + x, width, height, cols.data() + x, width, v, z);
  for (int y = 0; y < height; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * width;
    envelope_1d(cols.data() + row, 1, width, out.data() + row, 1, v, z);
  }
  return out;
}

DistanceMaps make_distance_maps(const ClickSet& clicks, int height, int width, float truncation) {
  for (const auto& c : clicks) {
    if (c.u < 0 || c.u >= height || c.v < 0 || c.v >= width) throw ContractError("click outside image");
  }
  if (!(truncation > 0)) throw ContractError("truncation must be positive");
  DistanceMaps maps{Tensor<float>(1, height, width, truncation), Tensor<float>(1, height, width, truncation),
                    truncation};
  for (int label = 0; label < 2; ++label) {
    std::vector<std::uint8_t> seeds(static_cast<std::size_t>(height) * width, 0);
    bool any = false;
    for (const auto& c : clicks) {
      if (static_cast<int>(c.label) != label) continue;
      seeds[static_cast<std::size_t>(c.u) * width + c.v] = 1;
      any = true;
    }
    if (!any) continue;
    const auto d2 = squared_distance_transform(seeds, height, width);
    auto& out = label == 1 ? maps.pos : maps.neg;
    for (std::size_t i = 0; i < d2.size(); ++i) {
      const float d = static_cast<float>(std::sqrt(static_cast<double>(d2[i])));
      out.data[i] = std::min(d, truncation);
    }
  }
  return maps;
}

ClickSet limit_clicks(const ClickSet& clicks, int n_limit) {
  if (n_limit < 1) throw ContractError("click limit must be >= 1");
  const auto n = std::min<std::size_t>(clicks.size(), static_cast<std::size_t>(n_limit));
  return ClickSet(clicks.begin(), clicks.begin() + static_cast<std::ptrdiff_t>(n));
}

std::vector<int> label_components(const BinaryMask& mask, int* count) {
  const int h = mask.height, w = mask.width;
  std::vector<int> parent(static_cast<std::size_t>(h) * w);
  std::iota(parent.begin(), parent.end(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const int i = y * w + x;
      // Already-visited 8-neighbours: W, NW, N, NE.
      const int dy[4] = {0, -1, -1, -1};
      const int dx[4] = {-1, -1, 0, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || nx < 0 || nx >= w || !mask(ny, nx)) continue;
        const int a = find_root(parent, i), b = find_root(parent, ny * w + nx);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  std::vector<int> labels(parent.size(), 0);
  std::vector<int> root_label(parent.size(), 0);
  int next = 0;
  for (int i = 0; i < h * w; ++i) {
    if (!mask.data[i]) continue;
    const int r = find_root(parent, i);
    if (root_label[r] == 0) root_label[r] = ++next;
    labels[i] = root_label[r];
  }
  if (count) *count = next;
  return labels;
}

std::optional<Click> next_click(const BinaryMask& pred, const BinaryMask& gt, const ClickSet& existing) {
  if (!pred.same_shape(gt)) throw ContractError("prediction and ground truth shapes differ");
  if (!gt.any()) throw ContractError("ground truth mask is empty");
  BinaryMask fn(gt.height, gt.width), fp(gt.height, gt.width);
  std::size_t nfn = 0, nfp = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    fn.data[i] = gt.data[i] && !pred.data[i];
    fp.data[i] = pred.data[i] && !gt.data[i];
    nfn += fn.data[i];
    nfp += fp.data[i];
  }
  if (nfn == 0 && nfp == 0) return std::nullopt;
  const bool positive = nfn >= nfp;
  const int index = existing.empty() ? 1 : existing.back().index + 1;
  auto pick = farthest_in_largest_component(positive ? fn : fp, existing);
  ClickLabel label = positive ? ClickLabel::kPositive : ClickLabel::kNegative;
  if (!pick) {
    pick = farthest_in_largest_component(positive ? fp : fn, existing);
    label = positive ? ClickLabel::kNegative : ClickLabel::kPositive;
  }
  if (!pick) return std::nullopt;
  return Click{pick->first, pick->second, label, index};
}

std::optional<ClickSet> sample_training_clicks(const BinaryMask& gt, SeededRng& rng, const BinaryMask* other_objects,
                                               const TrainingClickOptions& opts) {
  if (gt.count() < 5) return std::nullopt;
  const int h = gt.height, w = gt.width;
  const auto interior = interior_sq_distance(gt);
  std::vector<std::uint8_t> seeds(gt.data.begin(), gt.data.end());
  const auto outside = squared_distance_transform(seeds, h, w);

  std::geometric_distribution<int> extra_pos(0.4), negs(0.3);
  const int k_pos = 1 + std::min(opts.max_positive - 1, extra_pos(rng));
  const int k_neg = std::min(opts.max_negative, negs(rng));

  std::int64_t max_interior = 0;
  for (std::size_t i = 0; i < interior.size(); ++i)
    if (gt.data[i]) max_interior = std::max(max_interior, interior[i]);
  // Keep positives away from the boundary, proportionally to the object size.
  const std::int64_t pos_floor = std::max<std::int64_t>(1, max_interior / 9);
  std::vector<int> pos_pool, band_pool, other_pool;
  const std::int64_t bmin = static_cast<std::int64_t>(opts.negative_band_min) * opts.negative_band_min;
  const std::int64_t bmax = static_cast<std::int64_t>(opts.negative_band_max) * opts.negative_band_max;
  for (int i = 0; i < h * w; ++i) {
    if (gt.data[i]) {
      if (interior[i] >= pos_floor) pos_pool.push_back(i);
    } else {
      if (outside[i] >= bmin && outside[i] <= bmax) band_pool.push_back(i);
      if (other_objects && other_objects->data[i]) other_pool.push_back(i);
    }
  }
  if (pos_pool.empty()) return std::nullopt;

  ClickSet clicks;
  const std::int64_t spacing2 = static_cast<std::int64_t>(opts.min_spacing) * opts.min_spacing;
  auto far_enough = [&](int i, ClickLabel label) {
    const int y = i / w, x = i % w;
    for (const auto& c : clicks) {
      const std::int64_t dy = c.u - y, dx = c.v - x;
      if (dy == 0 && dx == 0) return false;
      if (c.label == label && dy * dy + dx * dx < spacing2) return false;
    }
    return true;
  };
  auto draw_from = [&](const std::vector<int>& pool, ClickLabel label) {
    if (pool.empty()) return false;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int i = pool[pick(rng)];
      if (!far_enough(i, label)) continue;
      clicks.push_back(Click{i / w, i % w, label, static_cast<int>(clicks.size()) + 1});
      return true;
    }
    return false;
  };
  for (int k = 0; k < k_pos; ++k) draw_from(pos_pool, ClickLabel::kPositive);
  std::bernoulli_distribution use_other(opts.other_object_prob);
  for (int k = 0; k < k_neg; ++k) {
    if (!other_pool.empty() && use_other(rng)) {
      if (draw_from(other_pool, ClickLabel::kNegative)) continue;
    }
    draw_from(band_pool, ClickLabel::kNegative);
  }
  return clicks;
}

void write_click_log(std::ostream& os, const ClickSet& clicks) {
  os << "# index u v label\n";
  for (const auto& c : clicks) os << c.index << ' ' << c.u << ' ' << c.v << ' ' << (c.positive() ? "pos" : "neg") << '\n';
}

ClickSet read_click_log(std::istream& is) {
  ClickSet clicks;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Click c;
    std::string label;
    if (!(ss >> c.index >> c.u >> c.v >> label)) throw ContractError("malformed click log line " + std::to_string(lineno));
    if (label == "pos" || label == "1" || label == "positive") {
      c.label = ClickLabel::kPositive;
    } else if (label == "neg" || label == "0" || label == "negative") {
      c.label = ClickLabel::kNegative;
    } else {
      throw ContractError("unknown click label '" + label + "' on line " + std::to_string(lineno));
    }
    clicks.push_back(c);
  }
  return clicks;
}

}  // namespace fbrs
