#include "rgbmark/noise/distortion.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/core/error.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/core/rng.hpp"

namespace rgbmark {

namespace F = torch::nn::functional;
using nlohmann::json;

namespace {

constexpr std::array<DistortionKind, 18> kDistortions = {
    DistortionKind::kJpeg,       DistortionKind::kGaussianNoise, DistortionKind::kGaussianFilter,
    DistortionKind::kDropout,    DistortionKind::kMedianFilter,  DistortionKind::kColor,
    DistortionKind::kBright,     DistortionKind::kSaturation,    DistortionKind::kHue,
    DistortionKind::kContrast,   DistortionKind::kResize,        DistortionKind::kCrop,
    DistortionKind::kPip,        DistortionKind::kPadding,       DistortionKind::kOcclusion,
    DistortionKind::kRotate,     DistortionKind::kShear,         DistortionKind::kAffine};

constexpr std::array<DistortionKind, 19> kTrainKinds = {
    DistortionKind::kIdentity,   DistortionKind::kJpeg,          DistortionKind::kGaussianNoise,
    DistortionKind::kGaussianFilter, DistortionKind::kDropout,   DistortionKind::kMedianFilter,
    DistortionKind::kColor,      DistortionKind::kBright,        DistortionKind::kSaturation,
    DistortionKind::kHue,        DistortionKind::kContrast,      DistortionKind::kResize,
    DistortionKind::kCrop,       DistortionKind::kPip,           DistortionKind::kPadding,
    DistortionKind::kOcclusion,  DistortionKind::kRotate,        DistortionKind::kShear,
    DistortionKind::kAffine};

constexpr std::array<std::pair<DistortionKind, std::string_view>, 19> kNames = {{
    {DistortionKind::kIdentity, "Identity"},     {DistortionKind::kJpeg, "JPEG"},
    {DistortionKind::kGaussianNoise, "GN"},      {DistortionKind::kGaussianFilter, "GF"},
    {DistortionKind::kDropout, "Dropout"},       {DistortionKind::kMedianFilter, "MF"},
    {DistortionKind::kColor, "Color"},           {DistortionKind::kBright, "Bright"},
    {DistortionKind::kSaturation, "Saturation"}, {DistortionKind::kHue, "Hue"},
    {DistortionKind::kContrast, "Contrast"},     {DistortionKind::kResize, "Resize"},
    {DistortionKind::kCrop, "Crop"},             {DistortionKind::kPip, "PIP"},
    {DistortionKind::kPadding, "Padding"},       {DistortionKind::kOcclusion, "Occlusion"},
    {DistortionKind::kRotate, "Rotate"},         {DistortionKind::kShear, "Shear"},
    {DistortionKind::kAffine, "Affine"},
}};

constexpr double kLuma[3] = {0.299, 0.587, 0.114};

/// 2*floor(v/2)+1: the odd kernel size a filter parameter denotes.
std::int64_t odd_kernel(double v) {
  return 2 * static_cast<std::int64_t>(std::floor(std::max(0.0, v) / 2.0)) + 1;
}

torch::Tensor gray(const torch::Tensor& x) {
  return x.select(1, 0).unsqueeze(1) * kLuma[0] + x.select(1, 1).unsqueeze(1) * kLuma[1] +
         x.select(1, 2).unsqueeze(1) * kLuma[2];
}

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor gaussian_blur(const torch::Tensor& x, std::int64_t k) {
  if (k <= 1) return x;
  const double sigma = static_cast<double>(k) / 6.0;
  auto g = torch::arange(k, x.options()) - static_cast<double>(k / 2);
  g = torch::exp(-(g * g) / (2.0 * sigma * sigma));
  g = g / g.sum();
  const auto r = k / 2;
  auto y = F::pad(x, F::PadFuncOptions({r, r, r, r}).mode(torch::kReplicate));
  y = F::conv2d(y, g.view({1, 1, 1, k}).repeat({3, 1, 1, 1}), F::Conv2dFuncOptions().groups(3));
  return F::conv2d(y, g.view({1, 1, k, 1}).repeat({3, 1, 1, 1}), F::Conv2dFuncOptions().groups(3));
}

// The median's backward routes the gradient to the selected element, which
// is the straight-through choice for this piecewise-linear map.
torch::Tensor median_filter(const torch::Tensor& x, std::int64_t k) {
  if (k <= 1) return x;
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const auto r = k / 2;
  auto padded = F::pad(x, F::PadFuncOptions({r, r, r, r}).mode(torch::kReplicate));
  auto cols = F::unfold(padded, F::UnfoldFuncOptions({k, k}));  // (B, C*k*k, H*W)
  cols = cols.view({b, c, k * k, h * w});
  return std::get<0>(cols.median(2)).view({b, c, h, w});
}

/// Samples the input at A * p for every output pixel p (pixel coordinates
/// relative to the image center). Vacated pixels are black.
torch::Tensor warp(const torch::Tensor& x, double a00, double a01, double a10, double a11) {
  const auto b = x.size(0);
  const double h = static_cast<double>(x.size(2));
  const double w = static_cast<double>(x.size(3));
  auto theta = torch::tensor({a00, a01 * h / w, 0.0, a10 * w / h, a11, 0.0},
                             torch::TensorOptions().dtype(torch::kFloat64))
                   .to(x.dtype())
                   .view({1, 2, 3})
                   .expand({b, 2, 3});
  auto grid = F::affine_grid(theta, {b, x.size(1), x.size(2), x.size(3)}, false);
  return F::grid_sample(x, grid, F::GridSampleFuncOptions()
                                     .mode(torch::kBilinear)
                                     .padding_mode(torch::kZeros)
                                     .align_corners(false));
}

torch::Tensor rotate(const torch::Tensor& x, double degrees, double shear_degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double s = std::tan(shear_degrees * std::numbers::pi / 180.0);
  const double c = std::cos(t), si = std::sin(t);
  // R * [[1, s], [0, 1]]
  return warp(x, c, c * s - si, si, si * s + c);
}

struct Rect {
  std::int64_t y, x, h, w;
};

/// Random placement of a sqrt(area)-scaled rectangle, per batch item.
std::vector<Rect> place_rects(std::int64_t batch, std::int64_t h, std::int64_t w, double area, Rng& rng) {
  const double side = std::sqrt(std::clamp(area, 0.0, 1.0));
  const auto rh = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(h)), 0, h);
  const auto rw = std::clamp<std::int64_t>(std::llround(side * static_cast<double>(w)), 0, w);
  std::vector<Rect> out;
  for (std::int64_t i = 0; i < batch; ++i) {
    const auto y = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
    const auto x = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
    out.push_back({y, x, rh, rw});
  }
  return out;
}

torch::Tensor rect_mask(const torch::Tensor& like, const std::vector<Rect>& rects) {
  auto mask = torch::zeros({like.size(0), 1, like.size(2), like.size(3)}, like.options());
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    mask[static_cast<std::int64_t>(i)].slice(1, r.y, r.y + r.h).slice(2, r.x, r.x + r.w).fill_(1.0);
  }
  return mask;
}

torch::Tensor hue_matrix(double turns_half, const torch::TensorOptions& opts) {
  // Rotation of the chroma plane of YIQ by p * 180 degrees.
  auto to_yiq = torch::tensor({0.299, 0.587, 0.114, 0.595716, -0.274453, -0.321263, 0.211456, -0.522591, 0.311135},
                              torch::kFloat64)
                    .view({3, 3});
  const double t = turns_half * std::numbers::pi;
  auto rot = torch::tensor({1.0, 0.0, 0.0, 0.0, std::cos(t), -std::sin(t), 0.0, std::sin(t), std::cos(t)},
                           torch::kFloat64)
                 .view({3, 3});
  return torch::linalg_inv(to_yiq).matmul(rot).matmul(to_yiq).to(opts.dtype());
}

void check_train_ranges(const DistortionSpec& spec) {
  for (const auto& r : train_ranges(spec.kind)) {
    const double v = spec.param(r.name);
    const double tol = 1e-9 * std::max(1.0, std::abs(r.hi - r.lo));
    if (v < r.lo - tol || v > r.hi + tol) {
      std::ostringstream os;
      os << kind_name(spec.kind) << " parameter " << r.name << "=" << v << " outside training range [" << r.lo
         << ", " << r.hi << "]";
      throw ArgumentError(os.str());
    }
  }
}

// JPEG helpers -------------------------------------------------------------

constexpr int kLumaTable[64] = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr int kChromaTable[64] = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                  24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

torch::Tensor dct_matrix(const torch::TensorOptions& opts) {
  auto d = torch::empty({8, 8}, torch::kFloat64);
  auto acc = d.accessor<double, 2>();
  for (int k = 0; k < 8; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int n = 0; n < 8; ++n) acc[k][n] = scale * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
  }
  return d.to(opts.dtype());
}

}  // namespace

std::string_view kind_name(DistortionKind kind) {
  for (const auto& [k, n] : kNames) {
    if (k == kind) return n;
  }
  return "Identity";
}

DistortionKind kind_from_name(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ArgumentError("unknown distortion kind: " + std::string(name));
}

std::span<const DistortionKind> distortion_kinds() { return kDistortions; }
std::span<const DistortionKind> train_kinds() { return kTrainKinds; }

std::vector<ParamRange> train_ranges(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::kIdentity:
      return {};
    case DistortionKind::kJpeg:
      return {{"q", 40, 100}};
    case DistortionKind::kGaussianNoise:
      return {{"sigma", 3, 10}};
    case DistortionKind::kGaussianFilter:
      return {{"sigma", 3, 8}};
    case DistortionKind::kDropout:
      return {{"p", 0.7, 1}};
    case DistortionKind::kMedianFilter:
      return {{"sigma", 0, 7}};
    case DistortionKind::kColor:
      return {{"p0", -0.5, 0.5}, {"p1", -0.5, 0.5}, {"p2", -0.5, 0.5}};
    case DistortionKind::kBright:
      return {{"p", 0, 0.5}};
    case DistortionKind::kSaturation:
      return {{"p", -0.8, 0.8}};
    case DistortionKind::kHue:
      return {{"p", -0.7, 0.7}};
    case DistortionKind::kContrast:
      return {{"p", -0.8, 0.8}};
    case DistortionKind::kResize:
      return {{"p", -0.5, 0.5}};
    case DistortionKind::kCrop:
      return {{"p", 0.7, 1}};
    case DistortionKind::kPip:
      return {{"p", 0.25, 1}};
    case DistortionKind::kPadding:
      return {{"p", 0, 50}};
    case DistortionKind::kOcclusion:
      return {{"p", 0.0625, 0.25}};
    case DistortionKind::kRotate:
      return {{"r", 0, 360}};
    case DistortionKind::kShear:
      return {{"s", 0, 30}};
    case DistortionKind::kAffine:
      return {{"r", 0, 360}, {"s", 0, 30}};
  }
  return {};
}

double DistortionSpec::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) {
    throw ArgumentError(std::string(kind_name(kind)) + " spec is missing parameter '" + name + "'");
  }
  return it->second;
}

std::vector<DistortionSpec> DistortionSpec::sign_variants() const {
  if (!both_signs) return {*this};
  DistortionSpec pos = *this, neg = *this;
  pos.both_signs = neg.both_signs = false;
  for (auto& [_, v] : neg.params) v = -v;
  return {pos, neg};
}

bool DistortionSpec::extrapolated() const {
  for (const auto& r : train_ranges(kind)) {
    auto it = params.find(r.name);
    if (it == params.end()) continue;
    for (double v : both_signs ? std::vector<double>{it->second, -it->second} : std::vector<double>{it->second}) {
      if (v < r.lo - 1e-12 || v > r.hi + 1e-12) return true;
    }
  }
  return false;
}

std::string DistortionSpec::label() const {
  std::ostringstream os;
  os << kind_name(kind);
  if (!params.empty()) {
    os << "(";
    bool first = true;
    for (const auto& [k, v] : params) {
      if (!first) os << ",";
      first = false;
      os << k << "=" << (both_signs ? "+-" : "") << v;
    }
    os << ")";
  }
  return os.str();
}

torch::Tensor jpeg_quant_table(bool chroma, double quality) {
  const double q = std::clamp(quality, 1.0, 100.0);
  const double scale = q < 50.0 ? 5000.0 / q : 200.0 - 2.0 * q;
  auto t = torch::empty({8, 8}, torch::kFloat64);
  auto* p = t.data_ptr<double>();
  const int* base = chroma ? kChromaTable : kLumaTable;
  for (int i = 0; i < 64; ++i) p[i] = std::clamp(std::floor((base[i] * scale + 50.0) / 100.0), 1.0, 255.0);
  return t;
}

torch::Tensor jpeg_surrogate(const torch::Tensor& batch, double quality) {
  check_batch(batch, "jpeg_surrogate");
  const auto opts = batch.options();
  const auto b = batch.size(0), h = batch.size(2), w = batch.size(3);
  auto x = batch * 255.0;
  auto r = x.select(1, 0), g = x.select(1, 1), bl = x.select(1, 2);
  // JFIF YCbCr, level-shifted so every channel is centered on zero.
  auto y = r * 0.299 + g * 0.587 + bl * 0.114 - 128.0;
  auto cb = r * -0.168736 + g * -0.331264 + bl * 0.5;
  auto cr = r * 0.5 + g * -0.418688 + bl * -0.081312;
  auto ycc = torch::stack({y, cb, cr}, 1);

  const auto ph = (8 - h % 8) % 8, pw = (8 - w % 8) % 8;
  if (ph > 0 || pw > 0) ycc = F::pad(ycc, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  const auto hh = h + ph, ww = w + pw;
  auto blocks = ycc.view({b, 3, hh / 8, 8, ww / 8, 8}).permute({0, 1, 2, 4, 3, 5});
  const auto d = dct_matrix(opts);
  auto coef = d.matmul(blocks).matmul(d.t());

  auto table = torch::stack({jpeg_quant_table(false, quality), jpeg_quant_table(true, quality),
                             jpeg_quant_table(true, quality)})
                   .to(opts.dtype())
                   .view({1, 3, 1, 1, 8, 8});
  auto scaled = coef / table;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  auto rounded = scaled - torch::sin(scaled * kTwoPi) / kTwoPi;
  auto restored = d.t().matmul(rounded * table).matmul(d);

  ycc = restored.permute({0, 1, 2, 4, 3, 5}).reshape({b, 3, hh, ww}).slice(2, 0, h).slice(3, 0, w);
  auto yy = ycc.select(1, 0) + 128.0, cbb = ycc.select(1, 1), crr = ycc.select(1, 2);
  auto out = torch::stack({yy + crr * 1.402, yy - cbb * 0.344136 - crr * 0.714136, yy + cbb * 1.772}, 1);
  return out / 255.0;
}

torch::Tensor jpeg_codec(const torch::Tensor& batch, int quality);

torch::Tensor apply_distortion(const DistortionSpec& spec, const torch::Tensor& watermarked,
                               const torch::Tensor& cover, std::uint64_t seed) {
  check_batch(watermarked, "distortion input");
  check_batch(cover, "distortion cover");
  if (watermarked.sizes() != cover.sizes()) throw ArgumentError("watermarked and cover batches differ in shape");
  if (spec.both_signs) throw ArgumentError("expand sign-symmetric specs with sign_variants() before applying");
  if (spec.mode == NoiseMode::kTrain) check_train_ranges(spec);

  const auto& x = watermarked;
  const auto b = x.size(0), h = x.size(2), w = x.size(3);
  Rng rng(derive_seed(seed, {0x6e6f6973}));
  torch::Tensor out;
  switch (spec.kind) {
    case DistortionKind::kIdentity:
      out = x;
      break;
    case DistortionKind::kJpeg: {
      const double q = spec.param("q");
      if (q < 1 || q > 100) throw ArgumentError("JPEG quality must be in [1, 100]");
      out = spec.mode == NoiseMode::kTrain ? jpeg_surrogate(x, q) : jpeg_codec(x, static_cast<int>(std::lround(q)));
      break;
    }
    case DistortionKind::kGaussianNoise: {
      auto gen = make_generator(rng.next());
      out = x + torch::randn(x.sizes(), gen, x.options()) * (spec.param("sigma") / 255.0);
      break;
    }
    case DistortionKind::kGaussianFilter:
      out = gaussian_blur(x, odd_kernel(spec.param("sigma")));
      break;
    case DistortionKind::kDropout: {
      auto gen = make_generator(rng.next());
      auto keep = (torch::rand({b, 1, h, w}, gen, x.options()) < spec.param("p")).to(x.dtype());
      out = keep * x + (1.0 - keep) * cover;
      break;
    }
    case DistortionKind::kMedianFilter:
      out = median_filter(x, odd_kernel(spec.param("sigma")));
      break;
    case DistortionKind::kColor: {
      auto gains = torch::tensor({1.0 + spec.param("p0"), 1.0 + spec.param("p1"), 1.0 + spec.param("p2")},
                                 torch::kFloat64)
                       .to(x.dtype())
                       .view({1, 3, 1, 1});
      out = x * gains;
      break;
    }
    case DistortionKind::kBright:
      out = x * (1.0 + spec.param("p"));
      break;
    case DistortionKind::kSaturation: {
      auto g = gray(x);
      out = g + (x - g) * (1.0 + spec.param("p"));
      break;
    }
    case DistortionKind::kHue: {
      auto m = hue_matrix(spec.param("p"), x.options());
      out = torch::einsum("ij,bjhw->bihw", {m, x});
      break;
    }
    case DistortionKind::kContrast: {
      auto mean = gray(x).mean({1, 2, 3}, true);
      out = mean + (x - mean) * (1.0 + spec.param("p"));
      break;
    }
    case DistortionKind::kResize: {
      const double f = 1.0 + spec.param("p");
      if (f <= 0) throw ArgumentError("Resize factor must be > -1");
      const auto nh = std::max<std::int64_t>(1, std::llround(f * static_cast<double>(h)));
      const auto nw = std::max<std::int64_t>(1, std::llround(f * static_cast<double>(w)));
      out = (nh == h && nw == w) ? x : resize_bilinear(resize_bilinear(x, nh, nw), h, w);
      break;
    }
    case DistortionKind::kCrop: {
      const double p = spec.param("p");
      if (p <= 0 || p > 1) throw ArgumentError("Crop area fraction must be in (0, 1]");
      out = x * rect_mask(x, place_rects(b, h, w, p, rng));
      break;
    }
    case DistortionKind::kOcclusion: {
      const double p = spec.param("p");
      if (p < 0 || p > 1) throw ArgumentError("Occlusion area fraction must be in [0, 1]");
      out = x * (1.0 - rect_mask(x, place_rects(b, h, w, p, rng)));
      break;
    }
    case DistortionKind::kPip: {
      const double p = spec.param("p");
      if (p <= 0 || p > 1) throw ArgumentError("PIP area fraction must be in (0, 1]");
      // Canvas: another cover of the batch (a mirrored cover for B = 1).
      auto canvas = b > 1 ? torch::roll(cover, 1, 0) : cover.flip({3});
      const auto rects = place_rects(b, h, w, p, rng);
      const auto rh = std::max<std::int64_t>(1, rects.front().h), rw = std::max<std::int64_t>(1, rects.front().w);
      auto small = (rh == h && rw == w) ? x : resize_bilinear(x, rh, rw);
      out = canvas.detach().clone();
      for (std::int64_t i = 0; i < b; ++i) {
        const auto& r = rects[static_cast<std::size_t>(i)];
        out[i].slice(1, r.y, r.y + rh).slice(2, r.x, r.x + rw).copy_(small[i]);
      }
      break;
    }
    case DistortionKind::kPadding: {
      const auto pad = std::llround(spec.param("p"));
      if (pad < 0) throw ArgumentError("Padding must be non-negative");
      out = pad == 0 ? x : resize_bilinear(F::pad(x, F::PadFuncOptions({pad, pad, pad, pad})), h, w);
      break;
    }
    case DistortionKind::kRotate:
      out = rotate(x, spec.param("r"), 0.0);
      break;
    case DistortionKind::kShear:
      out = rotate(x, 0.0, spec.param("s"));
      break;
    case DistortionKind::kAffine:
      out = rotate(x, spec.param("r"), spec.param("s"));
      break;
  }
  return out.clamp(0.0, 1.0);
}

DistortionSpec sample_train_spec(std::uint64_t seed, std::span<const DistortionKind> kinds) {
  if (kinds.empty()) throw ArgumentError("no distortion kinds to sample from");
  Rng rng(mix64(seed));
  DistortionSpec spec;
  spec.mode = NoiseMode::kTrain;
  spec.kind = kinds[rng.below(kinds.size())];
  for (const auto& r : train_ranges(spec.kind)) spec.params[r.name] = rng.uniform(r.lo, r.hi);
  return spec;
}

std::vector<DistortionSpec> test_suite() {
  auto make = [](DistortionKind k, std::map<std::string, double> params, bool both = false) {
    return DistortionSpec{k, std::move(params), NoiseMode::kTest, both};
  };
  return {
      make(DistortionKind::kJpeg, {{"q", 50}}),
      make(DistortionKind::kGaussianNoise, {{"sigma", 10}}),
      make(DistortionKind::kGaussianFilter, {{"sigma", 8}}),
      make(DistortionKind::kDropout, {{"p", 0.7}}),
      make(DistortionKind::kMedianFilter, {{"sigma", 11}}),
      make(DistortionKind::kColor, {{"p0", 0.9}, {"p1", 0.9}, {"p2", 0.9}}, true),
      make(DistortionKind::kBright, {{"p", 0.5}}),
      make(DistortionKind::kSaturation, {{"p", 0.9}}, true),
      make(DistortionKind::kHue, {{"p", 0.6}}, true),
      make(DistortionKind::kContrast, {{"p", 0.8}}, true),
      make(DistortionKind::kResize, {{"p", 0.5}}, true),
      make(DistortionKind::kCrop, {{"p", 0.7}}),
      make(DistortionKind::kPip, {{"p", 0.25}}),
      make(DistortionKind::kPadding, {{"p", 50}}),
      make(DistortionKind::kOcclusion, {{"p", 0.25}}),
      make(DistortionKind::kRotate, {{"r", 180}}),
      make(DistortionKind::kShear, {{"s", 30}}),
      make(DistortionKind::kAffine, {{"r", 180}, {"s", 30}}),
  };
}

DistortionSpec spec_at_level(DistortionKind kind, double level) {
  for (const auto& s : test_suite()) {
    if (s.kind != kind) continue;
    DistortionSpec out = s;
    if (kind == DistortionKind::kColor) {
      out.params = {{"p0", level}, {"p1", level}, {"p2", level}};
    } else if (kind == DistortionKind::kAffine) {
      out.params["r"] = level;
    } else {
      out.params.begin()->second = level;
    }
    return out;
  }
  return DistortionSpec{DistortionKind::kIdentity, {}, NoiseMode::kTest, false};
}

json to_json(const DistortionSpec& spec) {
  return json{{"kind", std::string(kind_name(spec.kind))},
              {"mode", spec.mode == NoiseMode::kTrain ? "train" : "test"},
              {"params", spec.params},
              {"both_signs", spec.both_signs}};
}

DistortionSpec spec_from_json(const json& j) {
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "kind" && key != "mode" && key != "params" && key != "both_signs") {
        throw ArgumentError("unknown key in distortion spec: " + key);
      }
    }
    DistortionSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    const auto mode = j.value("mode", std::string("test"));
    if (mode != "train" && mode != "test") throw ArgumentError("distortion mode must be train or test");
    s.mode = mode == "train" ? NoiseMode::kTrain : NoiseMode::kTest;
    s.params = j.value("params", std::map<std::string, double>{});
    s.both_signs = j.value("both_signs", false);
    for (const auto& r : train_ranges(s.kind)) {
      if (!s.params.contains(r.name)) {
        throw ArgumentError(std::string(kind_name(s.kind)) + " spec is missing parameter '" + r.name + "'");
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("malformed distortion spec: ") + e.what());
  }
}

json suite_to_json(const std::vector<DistortionSpec>& suite) {
  json arr = json::array();
  for (const auto& s : suite) arr.push_back(to_json(s));
  return arr;
}

std::vector<DistortionSpec> suite_from_json(const json& j) {
  if (!j.is_array()) throw ArgumentError("distortion suite must be a JSON array");
  std::vector<DistortionSpec> out;
  for (const auto& e : j) out.push_back(spec_from_json(e));
  return out;
}

void save_suite(const std::vector<DistortionSpec>& suite, const std::filesystem::path& path) {
  write_file_atomic(path, suite_to_json(suite).dump(2) + "\n");
}

std::vector<DistortionSpec> load_suite(const std::filesystem::path& path) {
  try {
    return suite_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ArgumentError("cannot parse suite file " + path.string() + ": " + e.what());
  }
}

}  // namespace rgbmark
