#include "sbcb/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

#include "sbcb/autograd.hpp"
#include "sbcb/image_io.hpp"
#include "sbcb/kernels.hpp"

SBCB_NAMESPACE_BEGIN

namespace fs = std::filesystem;

void RawSample::validate() const {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw std::invalid_argument("sample '" + id + "': image must be (1, 3, H, W)");
  if (labels.height() != s.h || labels.width() != s.w) {
    throw std::invalid_argument("sample '" + id + "': labels " + std::to_string(labels.height()) + "x" +
                                std::to_string(labels.width()) + " vs image " + s.str());
  }
  if (instances && !instances->same_extent(labels)) {
    throw std::invalid_argument("sample '" + id + "': instance map extent differs from labels");
  }
}

InMemoryDataset::InMemoryDataset(std::vector<RawSample> samples) : samples_(std::move(samples)) {
  for (const auto& s : samples_) s.validate();
}

bool InMemoryDataset::has_instances() const {
  return !samples_.empty() && std::all_of(samples_.begin(), samples_.end(),
                                          [](const RawSample& s) { return s.instances.has_value(); });
}

namespace {

std::map<std::string, fs::path> list_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto stem = e.path().stem().string();
    if (!out.emplace(stem, e.path()).second) {
      throw std::runtime_error("duplicate stem '" + stem + "' in " + dir.string());
    }
  }
  return out;
}

}  // namespace

DirectoryDataset::DirectoryDataset(const fs::path& root) : root_(root) {
  const fs::path images = root / "images", labels = root / "labels", instances = root / "instances";
  if (!fs::is_directory(images) || !fs::is_directory(labels)) {
    throw std::runtime_error(root.string() + " must contain images/ and labels/ directories");
  }
  has_instances_ = fs::is_directory(instances);
  const auto img = list_by_stem(images), lab = list_by_stem(labels);
  const auto ins = has_instances_ ? list_by_stem(instances) : std::map<std::string, fs::path>{};
  for (const auto& [stem, path] : img)
    if (!lab.count(stem)) throw std::runtime_error("image " + path.string() + " has no label file in " + labels.string());
  for (const auto& [stem, path] : lab)
    if (!img.count(stem)) throw std::runtime_error("label " + path.string() + " has no image in " + images.string());
  for (const auto& [stem, path] : img) {
    Entry e{stem, path, lab.at(stem), {}};
    if (has_instances_) {
      auto it = ins.find(stem);
      if (it == ins.end()) throw std::runtime_error("image " + path.string() + " has no instance file");
      e.instances = it->second;
    }
    entries_.push_back(e);
    // read once so shape problems surface when the dataset is opened
    get(entries_.size() - 1);
  }
  if (entries_.empty()) throw std::runtime_error("no samples under " + root.string());
}

RawSample DirectoryDataset::get(std::size_t index) const {
  const Entry& e = entries_.at(index);
  RawSample s;
  s.id = e.stem;
  s.image = read_image(e.image);
  s.labels = read_label_png(e.labels);
  if (!e.instances.empty()) s.instances = read_label_png(e.instances);
  if (s.labels.height() != s.image.h() || s.labels.width() != s.image.w()) {
    throw std::runtime_error("shape mismatch: " + e.image.string() + " is " + std::to_string(s.image.h()) + "x" +
                             std::to_string(s.image.w()) + ", " + e.labels.string() + " is " +
                             std::to_string(s.labels.height()) + "x" + std::to_string(s.labels.width()));
  }
  if (s.instances && !s.instances->same_extent(s.labels)) {
    throw std::runtime_error("shape mismatch: " + e.instances.string() + " vs " + e.labels.string());
  }
  return s;
}

std::shared_ptr<DirectoryDataset> load_directory_dataset(const fs::path& root) {
  return std::make_shared<DirectoryDataset>(root);
}

void save_directory_dataset(const Dataset& data, const fs::path& root) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const RawSample s = data.get(i);
    write_image(root / "images" / (s.id + ".png"), s.image);
    write_label_png(root / "labels" / (s.id + ".png"), s.labels);
    if (s.instances) write_label_png(root / "instances" / (s.id + ".png"), *s.instances);
  }
}

void AugmentConfig::validate() const {
  if (!(scale_lo > 0) || !(scale_lo <= scale_hi)) throw std::invalid_argument("augment: need 0 < scale_lo <= scale_hi");
  if (crop_h < 1 || crop_w < 1) throw std::invalid_argument("augment: crop must be at least 1x1");
  if (hflip_prob < 0 || hflip_prob > 1) throw std::invalid_argument("augment: hflip_prob must be in [0, 1]");
  if (brightness < 0 || contrast < 0 || contrast > 1 || saturation < 0 || saturation > 1 || hue < 0 || hue > 0.5) {
    throw std::invalid_argument("augment: photometric strengths out of range");
  }
}

AugmentConfig AugmentConfig::identity(int height, int width) {
  AugmentConfig c;
  c.scale_lo = c.scale_hi = 1.0;
  c.crop_h = height;
  c.crop_w = width;
  c.hflip_prob = 0;
  c.photometric = false;
  return c;
}

namespace {

Tensor crop_image(const Tensor& img, int y0, int x0, int h, int w) {
  Tensor out(Shape{1, img.c(), h, w}, 0);
  for (int c = 0; c < img.c(); ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = y0 + y;
      if (sy < 0 || sy >= img.h()) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x0 + x;
        if (sx >= 0 && sx < img.w()) out.at(0, c, y, x) = img.at(0, c, sy, sx);
      }
    }
  return out;
}

void photometric(Tensor& img, const AugmentConfig& cfg, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t hw = img.shape().plane();
  real* r = img.plane(0, 0);
  real* g = img.plane(0, 1);
  real* b = img.plane(0, 2);
  if (coin(rng)) {
    const real d = static_cast<real>(cfg.brightness * u(rng));
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] += d;
  }
  if (coin(rng)) {
    const real f = static_cast<real>(1 + cfg.contrast * u(rng));
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = (img[i] - real(0.5)) * f + real(0.5);
  }
  if (coin(rng)) {
    const real f = static_cast<real>(1 + cfg.saturation * u(rng));
    for (std::size_t i = 0; i < hw; ++i) {
      const real gray = real(0.299) * r[i] + real(0.587) * g[i] + real(0.114) * b[i];
      r[i] = gray + f * (r[i] - gray);
      g[i] = gray + f * (g[i] - gray);
      b[i] = gray + f * (b[i] - gray);
    }
  }
  if (coin(rng)) {
    // rotate chroma in YIQ space
    const double a = cfg.hue * u(rng) * 2 * std::numbers::pi;
    const double ca = std::cos(a), sa = std::sin(a);
    for (std::size_t i = 0; i < hw; ++i) {
      const double y = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
      const double ii = 0.596 * r[i] - 0.274 * g[i] - 0.322 * b[i];
      const double q = 0.211 * r[i] - 0.523 * g[i] + 0.312 * b[i];
      const double i2 = ca * ii - sa * q, q2 = sa * ii + ca * q;
      r[i] = static_cast<real>(y + 0.956 * i2 + 0.621 * q2);
      g[i] = static_cast<real>(y - 0.272 * i2 - 0.647 * q2);
      b[i] = static_cast<real>(y - 1.106 * i2 + 1.703 * q2);
    }
  }
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], real(0), real(1));
}

}  // namespace

RawSample augment(const RawSample& sample, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  sample.validate();
  RawSample out = sample;
  std::uniform_real_distribution<double> scale_dist(cfg.scale_lo, cfg.scale_hi);
  const double s = cfg.scale_lo == cfg.scale_hi ? cfg.scale_lo : scale_dist(rng);
  const int h = std::max(1, static_cast<int>(std::lround(sample.image.h() * s)));
  const int w = std::max(1, static_cast<int>(std::lround(sample.image.w() * s)));
  if (h != sample.image.h() || w != sample.image.w()) {
    Tensor resized(Shape{1, 3, h, w});
    kernels::resize_bilinear_forward(sample.image, resized);
    out.image = std::move(resized);
    out.labels = resize_nearest(sample.labels, h, w);
    if (sample.instances) out.instances = resize_nearest(*sample.instances, h, w);
  }
  // random crop; when the scaled image is smaller the rest is padding
  std::uniform_int_distribution<int> ys(0, std::max(0, h - cfg.crop_h)), xs(0, std::max(0, w - cfg.crop_w));
  const int y0 = ys(rng), x0 = xs(rng);
  if (y0 != 0 || x0 != 0 || h != cfg.crop_h || w != cfg.crop_w) {
    out.image = crop_image(out.image, y0, x0, cfg.crop_h, cfg.crop_w);
    out.labels = crop(out.labels, y0, x0, cfg.crop_h, cfg.crop_w, static_cast<std::int32_t>(cfg.ignore_index));
    if (out.instances) out.instances = crop(*out.instances, y0, x0, cfg.crop_h, cfg.crop_w, std::int32_t{0});
  }
  std::bernoulli_distribution flip(cfg.hflip_prob);
  if (flip(rng)) {
    out.image = flip_horizontal(out.image);
    out.labels = flip_horizontal(out.labels);
    if (out.instances) out.instances = flip_horizontal(*out.instances);
  }
  if (cfg.photometric) photometric(out.image, cfg, rng);
  return out;
}

Sample attach_targets(RawSample sample, int num_categories, const BoundaryGenConfig& cfg, bool need_binary) {
  if (cfg.instance_sensitive && !sample.instances) {
    throw std::invalid_argument("sample '" + sample.id +
                                "': instance-sensitive boundaries requested but the dataset has no instance maps");
  }
  Sample s;
  static_cast<RawSample&>(s) = std::move(sample);
  const InstanceMap* inst = cfg.instance_sensitive ? &*s.instances : nullptr;
  s.boundaries = semantic_boundaries(s.labels, num_categories, cfg, inst);
  if (need_binary) {
    SemanticBoundaryTensor b(1, s.labels.height(), s.labels.width());
    const BinaryMask u = channel_union(s.boundaries);
    std::copy(u.values().begin(), u.values().end(), b.channel(0).begin());
    s.binary_boundary = std::move(b);
  }
  return s;
}

namespace {

struct Painter {
  LabelMap& labels;
  InstanceMap& instances;
  void set(int y, int x, int c, int inst) {
    if (y < 0 || y >= labels.height() || x < 0 || x >= labels.width()) return;
    labels.at(y, x) = c;
    instances.at(y, x) = inst;
  }
};

// Fixed category colours so that train and validation splits agree.
std::array<double, 3> category_colour(int c) {
  Rng rng = make_rng(0x5eed, "palette", static_cast<std::uint64_t>(c));
  std::uniform_real_distribution<double> u(0.15, 0.85);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

InMemoryDataset synth_shapes(const SynthConfig& cfg) {
  if (cfg.num_categories < 2) throw std::invalid_argument("synth_shapes needs at least two categories");
  if (cfg.size < 8) throw std::invalid_argument("synth_shapes needs size >= 8");
  const int n = cfg.size;
  std::vector<RawSample> out;
  out.reserve(cfg.num_samples);
  for (int i = 0; i < cfg.num_samples; ++i) {
    Rng rng = make_rng(cfg.seed, "synth", static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> cat(1, cfg.num_categories - 1);
    LabelMap labels(n, n, 0);
    InstanceMap inst(n, n, 0);
    Painter paint{labels, inst};
    int next_instance = 1;

    const int blobs = 2 + static_cast<int>(u(rng) * 3);
    for (int b = 0; b < blobs; ++b) {
      const int c = cat(rng), id = next_instance++;
      const double cy = u(rng) * n, cx = u(rng) * n;
      const double ry = (0.08 + 0.17 * u(rng)) * n, rx = (0.08 + 0.17 * u(rng)) * n;
      if (u(rng) < 0.5) {
        const double th = u(rng) * std::numbers::pi, ct = std::cos(th), st = std::sin(th);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
            const double a = (ct * dx + st * dy) / rx, bb = (-st * dx + ct * dy) / ry;
            if (a * a + bb * bb <= 1) paint.set(y, x, c, id);
          }
      } else {
        // convex polygon from sorted angles
        const int k = 3 + static_cast<int>(u(rng) * 4);
        std::vector<double> ang;
        for (int v = 0; v < k; ++v) ang.push_back(u(rng) * 2 * std::numbers::pi);
        std::sort(ang.begin(), ang.end());
        std::vector<std::array<double, 2>> pts;
        for (double a : ang) pts.push_back({cy + ry * std::sin(a), cx + rx * std::cos(a)});
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            bool inside = true;
            for (int v = 0; v < k && inside; ++v) {
              const auto& p = pts[v];
              const auto& q = pts[(v + 1) % k];
              const double cross = (q[1] - p[1]) * (y + 0.5 - p[0]) - (q[0] - p[0]) * (x + 0.5 - p[1]);
              inside = cross <= 0;
            }
            if (inside) paint.set(y, x, c, id);
          }
      }
    }
    // thin bars, 1-3 px wide, drawn last so they stay visible
    const int bars = 2 + static_cast<int>(u(rng) * 3);
    for (int b = 0; b < bars; ++b) {
      const int c = cat(rng), id = next_instance++;
      const int width = 1 + static_cast<int>(u(rng) * 3);
      const double y0 = u(rng) * n, x0 = u(rng) * n;
      const double th = u(rng) * std::numbers::pi;
      const double len = (0.3 + 0.5 * u(rng)) * n;
      const double dy = std::sin(th), dx = std::cos(th);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const double py = y + 0.5 - y0, px = x + 0.5 - x0;
          const double along = py * dy + px * dx, across = -py * dx + px * dy;
          if (std::abs(along) <= len / 2 && std::abs(across) <= width / 2.0) paint.set(y, x, c, id);
        }
    }

    RawSample s;
    s.id = "synth_" + std::to_string(i);
    s.labels = labels;
    s.instances = inst;
    s.image = Tensor(Shape{1, 3, n, n});
    std::normal_distribution<double> noise(0.0, cfg.noise);
    std::map<int, std::array<double, 3>> tint;
    const double gy = 0.1 * (u(rng) - 0.5), gx = 0.1 * (u(rng) - 0.5);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const int c = labels.at(y, x), id = inst.at(y, x);
        auto it = tint.find(id);
        if (it == tint.end()) it = tint.emplace(id, std::array<double, 3>{0.1 * (u(rng) - 0.5), 0.1 * (u(rng) - 0.5),
                                                                           0.1 * (u(rng) - 0.5)}).first;
        const auto base = category_colour(c);
        for (int ch = 0; ch < 3; ++ch) {
          const double v = base[ch] + it->second[ch] + gy * (y - n / 2.0) / n + gx * (x - n / 2.0) / n + noise(rng);
          s.image.at(0, ch, y, x) = static_cast<real>(std::clamp(v, 0.0, 1.0));
        }
      }
    out.push_back(std::move(s));
  }
  return InMemoryDataset(std::move(out));
}

InMemoryDataset synth_shapes(int num_samples, int size, int num_categories, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_samples = num_samples;
  cfg.size = size;
  cfg.num_categories = num_categories;
  cfg.seed = seed;
  return synth_shapes(cfg);
}

Tensor normalize_images(const Tensor& images) {
  Tensor out = images;
  for (auto& v : out.values()) v = (v - real(0.5)) / real(0.25);
  return out;
}

Batch collate(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("collate: empty batch");
  const int h = samples[0].image.h(), w = samples[0].image.w();
  Batch b;
  b.images = Tensor(Shape{static_cast<int>(samples.size()), 3, h, w});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.image.h() != h || s.image.w() != w) throw std::invalid_argument("collate: samples differ in extent");
    std::copy(s.image.data(), s.image.data() + s.image.numel(), b.images.plane(static_cast<int>(i), 0));
    b.labels.push_back(s.labels);
    b.semantic.push_back(s.boundaries);
    if (s.binary_boundary) b.binary.push_back(*s.binary_boundary);
    b.ids.push_back(s.id);
  }
  if (!b.binary.empty() && b.binary.size() != samples.size()) {
    throw std::invalid_argument("collate: binary targets missing for some samples");
  }
  b.images = normalize_images(b.images);
  return b;
}

SBCB_NAMESPACE_END
