#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rfa/eval.hpp"
#include "rfa/features.hpp"
#include "rfa/random.hpp"

namespace rfa::eval {

/// Per-channel gain/offset in HSV space applied to camera-b frames: c' = clamp(gain * c + offset).
struct CameraShift {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> offset{0.0, 0.0, 0.0};

  bool is_identity() const;
};

struct SyntheticConfig {
  int num_persons = 20;
  int frames_per_camera = 30;
  int width = 16;
  int height = 32;
  std::uint64_t seed = 1;
  CameraShift shift;
  /// Std-dev of per-pixel Gaussian noise, as a fraction of the 0..255 range.
  double jitter = 0.02;
  std::uint32_t first_id = 1;

  void validate() const;
};

struct SyntheticPerson {
  std::uint32_t id = 0;
  features::RawImage prototype;
  std::vector<features::RawImage> camera_a;
  std::vector<features::RawImage> camera_b;
};

struct SyntheticDataset {
  std::vector<SyntheticPerson> persons;
};

/// Horizontal bands of flat colour, stripes or checkerboard, with random boundaries.
features::RawImage make_prototype(int width, int height, Rng& rng);

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

features::RawImage apply_camera_shift(const features::RawImage& img, const CameraShift& shift);

/// Deterministic in cfg.seed; frames are prototype + seeded jitter, camera b additionally shifted.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Relative paths "p0001/a_000.ppm" etc. used when materialized on disk.
DatasetManifest synthetic_manifest(const SyntheticDataset& data);

FeatureDataset featurize(const SyntheticDataset& data, const features::FeaturePipeline& pipeline);

/// Every frame of every person, both cameras.
features::FeatureMatrix featurize_pool(const SyntheticDataset& data, const features::FeaturePipeline& pipeline);

/// Writes images plus manifest.json under `dir`; returns the manifest path.
std::filesystem::path write_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

}  // namespace rfa::eval
