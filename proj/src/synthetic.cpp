#include "rfa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <system_error>

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"

namespace rfa::eval {

using features::RawImage;

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726F74;
constexpr std::uint64_t kFrameStream = 0x6672616D;

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

struct Colour {
  double r, g, b;
};

Colour random_colour(Rng& rng) {
  Colour c{};
  hsv_to_rgb(rng.uniform01(), rng.uniform(0.35, 1.0), rng.uniform(0.25, 0.95), c.r, c.g, c.b);
  return c;
}

// A second colour for textured bands: visibly different brightness, nearby hue.
Colour partner_colour(Rng& rng) {
  Colour c{};
  const double v = rng.uniform01() < 0.5 ? rng.uniform(0.05, 0.3) : rng.uniform(0.75, 1.0);
  hsv_to_rgb(rng.uniform01(), rng.uniform(0.0, 0.6), v, c.r, c.g, c.b);
  return c;
}

std::string frame_name(char camera, int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c_%03d.ppm", camera, t);
  return buf;
}

std::string person_dir(std::uint32_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%04u", id);
  return buf;
}

}  // namespace

bool CameraShift::is_identity() const {
  return gain == std::array<double, 3>{1.0, 1.0, 1.0} && offset == std::array<double, 3>{0.0, 0.0, 0.0};
}

void SyntheticConfig::validate() const {
  if (num_persons < 2) throw ConfigError("synthetic dataset needs at least 2 persons");
  if (frames_per_camera < 1) throw ConfigError("synthetic frames per camera must be >= 1");
  if (width < 3 || height < 3) throw ConfigError("synthetic images must be at least 3x3");
  if (!(jitter >= 0.0)) throw ConfigError("synthetic jitter must be >= 0");
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(shift.gain[c]) || !std::isfinite(shift.offset[c])) {
      throw ConfigError("camera shift must be finite");
    }
  }
  if (static_cast<std::uint64_t>(first_id) + static_cast<std::uint64_t>(num_persons) > UINT32_MAX) {
    throw ConfigError("synthetic person ids overflow 32 bits");
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double h6 = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

RawImage make_prototype(int width, int height, Rng& rng) {
  RawImage img(width, height);
  const int bands = std::min(height, 3 + static_cast<int>(rng.uniform_index(3)));
  std::vector<int> rows(static_cast<std::size_t>(height - 1));
  for (int y = 1; y < height; ++y) rows[static_cast<std::size_t>(y - 1)] = y;
  rng.shuffle(std::span<int>(rows));
  std::vector<int> cuts(rows.begin(), rows.begin() + (bands - 1));
  cuts.push_back(0);
  cuts.push_back(height);
  std::sort(cuts.begin(), cuts.end());

  for (int band = 0; band < bands; ++band) {
    const Colour c1 = random_colour(rng);
    const Colour c2 = partner_colour(rng);
    const auto texture = rng.uniform_index(3);  // 0 flat, 1 vertical stripes, 2 checkerboard
    const int period = 1 + static_cast<int>(rng.uniform_index(3));
    for (int y = cuts[band]; y < cuts[band + 1]; ++y) {
      for (int x = 0; x < width; ++x) {
        bool alt = false;
        if (texture == 1) alt = (x / period) % 2 == 1;
        if (texture == 2) alt = ((x / period) + (y / period)) % 2 == 1;
        const Colour& c = alt ? c2 : c1;
        auto* px = img.at(x, y);
        px[0] = to_byte(255.0 * c.r);
        px[1] = to_byte(255.0 * c.g);
        px[2] = to_byte(255.0 * c.b);
      }
    }
  }
  return img;
}

RawImage apply_camera_shift(const RawImage& img, const CameraShift& shift) {
  if (shift.is_identity()) return img;
  RawImage out = img;
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    const auto hsv = features::rgb_to_hsv(out.pixels[i] / 255.0, out.pixels[i + 1] / 255.0, out.pixels[i + 2] / 255.0);
    // Hue wraps around the colour circle; saturation and value clamp.
    double h = shift.gain[0] * hsv.h + shift.offset[0];
    h -= std::floor(h);
    const double s = std::clamp(shift.gain[1] * hsv.s + shift.offset[1], 0.0, 1.0);
    const double v = std::clamp(shift.gain[2] * hsv.v + shift.offset[2], 0.0, 1.0);
    double r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    out.pixels[i] = to_byte(255.0 * r);
    out.pixels[i + 1] = to_byte(255.0 * g);
    out.pixels[i + 2] = to_byte(255.0 * b);
  }
  return out;
}

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  SyntheticDataset data;
  const double sigma = cfg.jitter * 255.0;
  for (int p = 0; p < cfg.num_persons; ++p) {
    SyntheticPerson person;
    person.id = cfg.first_id + static_cast<std::uint32_t>(p);
    Rng proto_rng(derive_seed(cfg.seed, {kPrototypeStream, static_cast<std::uint64_t>(p)}));
    person.prototype = make_prototype(cfg.width, cfg.height, proto_rng);

    for (int camera = 0; camera < 2; ++camera) {
      Rng rng(derive_seed(cfg.seed, {kFrameStream, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(camera)}));
      auto& frames = camera == 0 ? person.camera_a : person.camera_b;
      for (int t = 0; t < cfg.frames_per_camera; ++t) {
        RawImage f = person.prototype;
        if (sigma > 0.0) {
          for (auto& px : f.pixels) px = to_byte(px + sigma * rng.normal());
        }
        frames.push_back(camera == 1 ? apply_camera_shift(f, cfg.shift) : std::move(f));
      }
    }
    data.persons.push_back(std::move(person));
  }
  return data;
}

DatasetManifest synthetic_manifest(const SyntheticDataset& data) {
  DatasetManifest m;
  for (const auto& p : data.persons) {
    PersonEntry e;
    e.id = p.id;
    const std::filesystem::path dir = person_dir(p.id);
    for (std::size_t t = 0; t < p.camera_a.size(); ++t) e.camera_a.push_back(dir / frame_name('a', static_cast<int>(t)));
    for (std::size_t t = 0; t < p.camera_b.size(); ++t) e.camera_b.push_back(dir / frame_name('b', static_cast<int>(t)));
    m.persons.push_back(std::move(e));
  }
  return m;
}

FeatureDataset featurize(const SyntheticDataset& data, const features::FeaturePipeline& pipeline) {
  pipeline.validate();
  FeatureDataset out;
  for (const auto& p : data.persons) {
    out.persons.push_back({p.id, features::featurize_sequence(p.camera_a, pipeline),
                           features::featurize_sequence(p.camera_b, pipeline)});
  }
  return out;
}

features::FeatureMatrix featurize_pool(const SyntheticDataset& data, const features::FeaturePipeline& pipeline) {
  std::vector<RawImage> all;
  for (const auto& p : data.persons) {
    all.insert(all.end(), p.camera_a.begin(), p.camera_a.end());
    all.insert(all.end(), p.camera_b.begin(), p.camera_b.end());
  }
  return features::featurize_sequence(all, pipeline);
}

std::filesystem::path write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir) {
  const auto manifest = synthetic_manifest(data);
  for (std::size_t k = 0; k < data.persons.size(); ++k) {
    const auto& p = data.persons[k];
    const auto& entry = manifest.persons[k];
    const auto person_path = dir / person_dir(p.id);
    std::error_code ec;
    std::filesystem::create_directories(person_path, ec);
    if (ec) throw IoError("cannot create directory " + person_path.string() + ": " + ec.message());
    for (std::size_t t = 0; t < p.camera_a.size(); ++t) {
      io::write_file_atomic(dir / entry.camera_a[t], features::encode_ppm(p.camera_a[t]));
    }
    for (std::size_t t = 0; t < p.camera_b.size(); ++t) {
      io::write_file_atomic(dir / entry.camera_b[t], features::encode_ppm(p.camera_b[t]));
    }
  }
  const auto path = dir / "manifest.json";
  io::write_text_atomic(path, manifest_to_json(manifest));
  return path;
}

}  // namespace rfa::eval
