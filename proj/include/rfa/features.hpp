#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace rfa::features {

/// 8-bit RGB image, row-major, three bytes per pixel.
struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(int w, int h);
  RawImage(int w, int h, std::vector<std::uint8_t> rgb);

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

enum class ImageFormat { Pgm, Ppm, Raw };

/// Decodes binary PGM (P5), PPM (P6) or the RFAIMG1 raw container. Gray input is
/// replicated to all three channels. Throws FormatError naming the failing offset.
RawImage decode_image(std::span<const std::uint8_t> bytes, ImageFormat format);

/// Sniffs the format from the leading magic bytes.
ImageFormat detect_format(std::span<const std::uint8_t> bytes);

RawImage read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_ppm(const RawImage& img);
std::vector<std::uint8_t> encode_raw(const RawImage& img);

/// Bilinear resampling with half-pixel centres, channels independent, rounded to nearest.
RawImage resize_bilinear(const RawImage& img, int out_w, int out_h);

enum class Plane : int { Gray = 0, H, S, V, L, A, B };
inline constexpr int kNumPlanes = 7;

/// A frame as seven scalar planes in [0, 1]: gray, H, S, V, L*, a*, b*.
struct FrameTensor {
  int width = 0;
  int height = 0;
  std::array<std::vector<double>, kNumPlanes> planes;

  const std::vector<double>& plane(Plane p) const { return planes[static_cast<int>(p)]; }
  double at(Plane p, int x, int y) const { return plane(p)[static_cast<std::size_t>(y) * width + x]; }
};

struct Hsv {
  double h, s, v;  // h in [0,1), s and v in [0,1]
};

struct Lab {
  double l, a, b;  // CIELAB, unscaled: L* in [0,100], a*/b* roughly [-128,127]
};

/// Hexcone model; channel inputs in [0, 1].
Hsv rgb_to_hsv(double r, double g, double b);

/// sRGB (8-bit) -> linear -> XYZ (D65) -> CIELAB.
Lab srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);

FrameTensor to_frame_tensor(const RawImage& img);

/// Overlapping patch layout. The grid must tile the frame exactly.
struct PatchGridSpec {
  static constexpr int kLbpBins = 256;
  static constexpr int kColorMeans = 6;
  static constexpr int kBlockDim = kLbpBins + kColorMeans;

  int patch_h = 16;
  int patch_w = 8;
  int stride_v = 8;
  int stride_h = 4;

  /// Throws ConfigError when the grid does not fit the frame or has no interior pixels.
  void validate(int frame_w, int frame_h) const;

  int rows(int frame_h) const { return (frame_h - patch_h) / stride_v + 1; }
  int cols(int frame_w) const { return (frame_w - patch_w) / stride_h + 1; }
  int num_patches(int frame_w, int frame_h) const { return rows(frame_h) * cols(frame_w); }
  std::size_t feature_dim(int frame_w, int frame_h) const {
    return static_cast<std::size_t>(num_patches(frame_w, frame_h)) * kBlockDim;
  }
};

/// Concatenated per-patch descriptors: for each patch a normalized 256-bin LBP histogram
/// followed by the H, S, V, L, a, b means.
struct FrameFeature {
  std::vector<double> values;
};

/// 8-bit LBP code at (x, y). Neighbours are visited clockwise from the top-left, which
/// lands in the most significant bit; a bit is set when neighbour >= centre.
/// Throws ContractError when the 3x3 neighbourhood leaves the plane.
int lbp_code(std::span<const double> plane, int width, int height, int x, int y);

FrameFeature extract_frame_feature(const FrameTensor& frame, const PatchGridSpec& grid);

/// Resize target plus patch grid: everything needed to turn a decoded image into a feature.
struct FeaturePipeline {
  int frame_w = 64;
  int frame_h = 128;
  PatchGridSpec grid;

  void validate() const { grid.validate(frame_w, frame_h); }
  std::size_t feature_dim() const { return grid.feature_dim(frame_w, frame_h); }
};

FrameFeature featurize(const RawImage& img, const FeaturePipeline& pipeline);

/// Frames of one sequence stored as 32-bit rows (T x D).
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

FeatureMatrix featurize_sequence(std::span<const RawImage> frames, const FeaturePipeline& pipeline);

/// RFAFEAT1 feature cache: u32 dim, u32 count, count x dim f32.
std::vector<std::uint8_t> encode_feature_cache(const FeatureMatrix& features);
FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> bytes);

}  // namespace rfa::features
