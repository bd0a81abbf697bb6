#include "rfa/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"

namespace rfa::features {

namespace {

constexpr std::string_view kRawMagic = "RFAIMG1\n";
constexpr std::string_view kFeatureMagic = "RFAFEAT1";

// Netpbm header tokenizer: whitespace separated decimal fields, '#' comments to end of line.
class PnmHeader {
 public:
  explicit PnmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw FormatError(std::string("header field ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("malformed header: expected ") + field, start);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError("malformed header: missing whitespace before raster", pos_);
    }
    ++pos_;
  }

  std::size_t pos_ = 0;

 private:
  std::span<const std::uint8_t> bytes_;
};

RawImage decode_pnm(std::span<const std::uint8_t> bytes, bool color) {
  const char expected = color ? '6' : '5';
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(expected)) {
    throw FormatError(std::string("malformed header: expected magic P") + expected, 0);
  }
  PnmHeader hdr(bytes);
  hdr.pos_ = 2;
  const long w = hdr.number("width");
  const long h = hdr.number("height");
  hdr.skip_space_and_comments();
  const std::size_t maxval_at = hdr.pos_;
  const long maxval = hdr.number("maxval");
  if (w < 1 || h < 1) throw FormatError("image dimensions must be positive", maxval_at);
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval) + " (need 255)", maxval_at);
  hdr.single_space();

  const std::size_t channels = color ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
  if (bytes.size() - hdr.pos_ < need) {
    throw FormatError("truncated pixel payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - hdr.pos_),
                      bytes.size());
  }
  RawImage img(static_cast<int>(w), static_cast<int>(h));
  const auto* src = bytes.data() + hdr.pos_;
  if (color) {
    std::memcpy(img.pixels.data(), src, need);
  } else {
    for (std::size_t i = 0; i < need; ++i) {
      img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = src[i];
    }
  }
  return img;
}

RawImage decode_raw(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kRawMagic, "RAW image");
  const auto w = in.get<std::uint32_t>("width");
  const auto h = in.get<std::uint32_t>("height");
  const std::size_t ch_at = in.offset();
  const auto channels = in.get<std::uint8_t>("channels");
  if (w < 1 || h < 1 || w > 1'000'000 || h > 1'000'000) throw FormatError("image dimensions out of range", 8);
  if (channels != 1 && channels != 3) {
    throw FormatError("channel count must be 1 or 3, got " + std::to_string(channels), ch_at);
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const auto payload = in.take(n * channels, "pixel payload");
  RawImage img(static_cast<int>(w), static_cast<int>(h));
  if (channels == 3) {
    std::memcpy(img.pixels.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = payload[i];
  }
  return img;
}

std::uint8_t round_to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

RawImage::RawImage(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw ContractError("image dimensions must be >= 1");
  pixels.assign(static_cast<std::size_t>(w) * h * 3, 0);
}

RawImage::RawImage(int w, int h, std::vector<std::uint8_t> rgb) : width(w), height(h), pixels(std::move(rgb)) {
  if (w < 1 || h < 1) throw ContractError("image dimensions must be >= 1");
  if (pixels.size() != static_cast<std::size_t>(w) * h * 3) {
    throw ContractError("pixel buffer length must be width*height*3");
  }
}

ImageFormat detect_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return ImageFormat::Pgm;
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ImageFormat::Ppm;
  if (bytes.size() >= kRawMagic.size() && std::memcmp(bytes.data(), kRawMagic.data(), kRawMagic.size()) == 0) {
    return ImageFormat::Raw;
  }
  throw FormatError("unrecognized image magic", 0);
}

RawImage decode_image(std::span<const std::uint8_t> bytes, ImageFormat format) {
  switch (format) {
    case ImageFormat::Pgm:
      return decode_pnm(bytes, false);
    case ImageFormat::Ppm:
      return decode_pnm(bytes, true);
    case ImageFormat::Raw:
      return decode_raw(bytes);
  }
  throw ContractError("unknown image format");
}

RawImage read_image(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_image(bytes, detect_format(bytes));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::vector<std::uint8_t> encode_ppm(const RawImage& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_raw(const RawImage& img) {
  io::ByteWriter w;
  w.magic(kRawMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.height));
  w.put<std::uint8_t>(3);
  w.raw(img.pixels);
  return w.take();
}

RawImage resize_bilinear(const RawImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw ContractError("resize target must be at least 1x1");
  if (out_w == img.width && out_h == img.height) return img;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int out, int in) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      const double src = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - lo};
    }
    return t;
  };
  const auto tx = taps(out_w, img.width);
  const auto ty = taps(out_h, img.height);

  RawImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto* p00 = img.at(tx[x].lo, ty[y].lo);
      const auto* p01 = img.at(tx[x].hi, ty[y].lo);
      const auto* p10 = img.at(tx[x].lo, ty[y].hi);
      const auto* p11 = img.at(tx[x].hi, ty[y].hi);
      const double fx = tx[x].frac;
      const double fy = ty[y].frac;
      auto* dst = out.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double top = p00[c] * (1.0 - fx) + p01[c] * fx;
        const double bottom = p10[c] * (1.0 - fx) + p11[c] * fx;
        dst[c] = round_to_byte(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  Hsv out{0.0, mx > 0.0 ? delta / mx : 0.0, mx};
  if (delta > 0.0) {
    double h;
    if (mx == r) {
      h = (g - b) / delta;
      if (h < 0.0) h += 6.0;
    } else if (mx == g) {
      h = (b - r) / delta + 2.0;
    } else {
      h = (r - g) / delta + 4.0;
    }
    out.h = h / 6.0;
    if (out.h >= 1.0) out.h = 0.0;
  }
  return out;
}

Lab srgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = srgb_to_linear(r8 / 255.0);
  const double g = srgb_to_linear(g8 / 255.0);
  const double b = srgb_to_linear(b8 / 255.0);
  // D65 reference white
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.00000;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x);
  const double fy = lab_f(y);
  const double fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

FrameTensor to_frame_tensor(const RawImage& img) {
  if (img.width < 1 || img.height < 1 || img.pixels.empty()) throw ContractError("empty image");
  FrameTensor t;
  t.width = img.width;
  t.height = img.height;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (auto& p : t.planes) p.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t r8 = img.pixels[3 * i];
    const std::uint8_t g8 = img.pixels[3 * i + 1];
    const std::uint8_t b8 = img.pixels[3 * i + 2];
    const double r = r8 / 255.0;
    const double g = g8 / 255.0;
    const double b = b8 / 255.0;
    const Hsv hsv = rgb_to_hsv(r, g, b);
    const Lab lab = srgb_to_lab(r8, g8, b8);
    t.planes[0][i] = clamp01((0.299 * r8 + 0.587 * g8 + 0.114 * b8) / 255.0);
    t.planes[1][i] = hsv.h;
    t.planes[2][i] = hsv.s;
    t.planes[3][i] = hsv.v;
    t.planes[4][i] = clamp01(lab.l / 100.0);
    t.planes[5][i] = clamp01((lab.a + 128.0) / 255.0);
    t.planes[6][i] = clamp01((lab.b + 128.0) / 255.0);
  }
  return t;
}

void PatchGridSpec::validate(int frame_w, int frame_h) const {
  if (frame_w < 1 || frame_h < 1) throw ConfigError("frame dimensions must be positive");
  if (stride_v < 1 || stride_h < 1) throw ConfigError("patch strides must be >= 1");
  if (patch_h < 3 || patch_w < 3) {
    throw ConfigError("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                      " has no interior pixel for LBP (need at least 3x3)");
  }
  if (patch_h > frame_h || patch_w > frame_w) throw ConfigError("patch larger than frame");
  if ((frame_h - patch_h) % stride_v != 0 || (frame_w - patch_w) % stride_h != 0) {
    throw ConfigError("patch grid does not tile the " + std::to_string(frame_h) + "x" + std::to_string(frame_w) +
                      " frame exactly");
  }
}

int lbp_code(std::span<const double> plane, int width, int height, int x, int y) {
  if (x < 1 || y < 1 || x > width - 2 || y > height - 2) {
    throw ContractError("lbp_code: (" + std::to_string(x) + "," + std::to_string(y) +
                        ") lacks a full 3x3 neighbourhood");
  }
  if (plane.size() != static_cast<std::size_t>(width) * height) throw ContractError("lbp_code: plane size mismatch");
  // Clockwise from top-left; the first neighbour is the most significant bit.
  static constexpr int kDx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  static constexpr int kDy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  const double centre = plane[static_cast<std::size_t>(y) * width + x];
  int code = 0;
  for (int k = 0; k < 8; ++k) {
    const double v = plane[static_cast<std::size_t>(y + kDy[k]) * width + (x + kDx[k])];
    code = (code << 1) | (v >= centre ? 1 : 0);
  }
  return code;
}

FrameFeature extract_frame_feature(const FrameTensor& frame, const PatchGridSpec& grid) {
  grid.validate(frame.width, frame.height);
  const int w = frame.width;
  const int h = frame.height;

  // An interior pixel's neighbourhood lies inside its patch, so the frame-level code equals
  // the per-patch code. Compute each code once.
  const auto& gray = frame.plane(Plane::Gray);
  std::vector<std::uint8_t> codes(static_cast<std::size_t>(w) * h, 0);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      codes[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(lbp_code(gray, w, h, x, y));
    }
  }

  const int rows = grid.rows(h);
  const int cols = grid.cols(w);
  FrameFeature out;
  out.values.assign(grid.feature_dim(w, h), 0.0);
  const double interior = static_cast<double>((grid.patch_h - 2) * (grid.patch_w - 2));
  const double area = static_cast<double>(grid.patch_h * grid.patch_w);

  std::size_t offset = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c, offset += PatchGridSpec::kBlockDim) {
      const int y0 = r * grid.stride_v;
      const int x0 = c * grid.stride_h;
      double* block = out.values.data() + offset;

      std::array<int, PatchGridSpec::kLbpBins> counts{};
      for (int y = y0 + 1; y < y0 + grid.patch_h - 1; ++y) {
        for (int x = x0 + 1; x < x0 + grid.patch_w - 1; ++x) ++counts[codes[static_cast<std::size_t>(y) * w + x]];
      }
      for (int b = 0; b < PatchGridSpec::kLbpBins; ++b) block[b] = counts[b] / interior;

      for (int p = 1; p < kNumPlanes; ++p) {
        const auto& plane = frame.planes[p];
        double sum = 0.0;
        for (int y = y0; y < y0 + grid.patch_h; ++y) {
          for (int x = x0; x < x0 + grid.patch_w; ++x) sum += plane[static_cast<std::size_t>(y) * w + x];
        }
        block[PatchGridSpec::kLbpBins + p - 1] = std::clamp(sum / area, 0.0, 1.0);
      }
    }
  }
  return out;
}

FrameFeature featurize(const RawImage& img, const FeaturePipeline& pipeline) {
  return extract_frame_feature(to_frame_tensor(resize_bilinear(img, pipeline.frame_w, pipeline.frame_h)),
                               pipeline.grid);
}

FeatureMatrix featurize_sequence(std::span<const RawImage> frames, const FeaturePipeline& pipeline) {
  pipeline.validate();
  FeatureMatrix out(static_cast<Eigen::Index>(frames.size()), static_cast<Eigen::Index>(pipeline.feature_dim()));
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto f = featurize(frames[t], pipeline);
    for (std::size_t d = 0; d < f.values.size(); ++d) out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = static_cast<float>(f.values[d]);
  }
  return out;
}

std::vector<std::uint8_t> encode_feature_cache(const FeatureMatrix& features) {
  io::ByteWriter w;
  w.magic(kFeatureMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.cols()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) w.put<float>(features(r, c));
  }
  return w.take();
}

FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kFeatureMagic, "feature cache");
  const auto dim = in.get<std::uint32_t>("dim");
  const auto count = in.get<std::uint32_t>("count");
  in.require(static_cast<std::size_t>(dim) * count * sizeof(float), "feature values");
  FeatureMatrix out(count, dim);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = in.get<float>("feature value");
  }
  in.expect_end();
  return out;
}

}  // namespace rfa::features
