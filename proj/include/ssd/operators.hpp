// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ssd/errors.hpp"
#include "ssd/random.hpp"
#include "ssd/tensor.hpp"

namespace ssd {

// ---------------------------------------------------------------------------
// Degradation specs
// ---------------------------------------------------------------------------

struct IdentityDegradation {};
struct SrBicubic {
  int scale = 4;
};
struct SrAverage {
  int scale = 4;
};
struct Colorization {};
struct GaussianBlur {
  double sigma = 15.0;
  int ksize = 9;
};
struct InpaintRandom {
  double drop_prob = 0.5;
  std::uint64_t seed = 0;
};
struct InpaintBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
};

/// Additive Gaussian noise on the measurement, with std drawn from U[0, sigma_max].
struct NoiseAugmentation {
  double sigma_max = 0.2;
};

struct DegradationSpec {
  using Kind = std::variant<IdentityDegradation, SrBicubic, SrAverage, Colorization, GaussianBlur, InpaintRandom,
                            InpaintBox>;
  Kind kind;
  std::optional<NoiseAugmentation> noise;

  std::string label() const {
    struct Visitor {
      std::string operator()(const IdentityDegradation&) const { return "identity"; }
      std::string operator()(const SrBicubic& s) const { return "sr_bicubic_x" + std::to_string(s.scale); }
      std::string operator()(const SrAverage& s) const { return "sr_average_x" + std::to_string(s.scale); }
      std::string operator()(const Colorization&) const { return "colorization"; }
      std::string operator()(const GaussianBlur& b) const {
        return "gaussian_blur_k" + std::to_string(b.ksize);
      }
      std::string operator()(const InpaintRandom&) const { return "inpaint_random"; }
      std::string operator()(const InpaintBox&) const { return "inpaint_box"; }
    };
    return std::visit(Visitor{}, kind);
  }

  /// Throws ConfigError when the spec cannot act on images of `image_shape` (H, W, C).
  void validate(const Shape& image_shape) const {
    if (image_shape.size() != 3) throw ConfigError("operators act on (height, width, channels) images");
    const auto height = image_shape[0];
    const auto width = image_shape[1];
    const auto channels = image_shape[2];
    if (channels != 1 && channels != 3) throw ConfigError("images must have 1 or 3 channels");
    auto check_scale = [&](int scale) {
      if (scale < 2) throw ConfigError("super-resolution scale must be at least 2");
      const auto s = static_cast<std::size_t>(scale);
      if (height % s != 0 || width % s != 0) {
        throw ConfigError("scale " + std::to_string(scale) + " does not divide image size " +
                          shape_string(image_shape));
      }
    };
    if (const auto* sr = std::get_if<SrBicubic>(&kind)) check_scale(sr->scale);
    if (const auto* sr = std::get_if<SrAverage>(&kind)) check_scale(sr->scale);
    if (std::holds_alternative<Colorization>(kind) && channels != 3) {
      throw ConfigError("colorization needs 3-channel images");
    }
    if (const auto* b = std::get_if<GaussianBlur>(&kind)) {
      if (b->ksize < 1 || b->ksize % 2 == 0) throw ConfigError("blur kernel size must be odd and positive");
      if (!(b->sigma > 0.0)) throw ConfigError("blur sigma must be positive");
    }
    if (const auto* r = std::get_if<InpaintRandom>(&kind)) {
      if (!(r->drop_prob >= 0.0 && r->drop_prob <= 1.0)) throw ConfigError("drop_prob must lie in [0, 1]");
    }
    if (const auto* box = std::get_if<InpaintBox>(&kind)) {
      if (box->x < 0 || box->y < 0 || box->w < 1 || box->h < 1 ||
          static_cast<std::size_t>(box->x + box->w) > width || static_cast<std::size_t>(box->y + box->h) > height) {
        throw ConfigError("inpainting box lies outside the image");
      }
    }
    if (noise && !(noise->sigma_max >= 0.0)) throw ConfigError("noise sigma_max must be nonnegative");
  }

  nlohmann::json to_json() const {
    struct Visitor {
      nlohmann::json operator()(const IdentityDegradation&) const { return {{"type", "identity"}}; }
      nlohmann::json operator()(const SrBicubic& s) const { return {{"type", "sr_bicubic"}, {"scale", s.scale}}; }
      nlohmann::json operator()(const SrAverage& s) const { return {{"type", "sr_average"}, {"scale", s.scale}}; }
      nlohmann::json operator()(const Colorization&) const { return {{"type", "colorization"}}; }
      nlohmann::json operator()(const GaussianBlur& b) const {
        return {{"type", "gaussian_blur"}, {"sigma", b.sigma}, {"ksize", b.ksize}};
      }
      nlohmann::json operator()(const InpaintRandom& r) const {
        return {{"type", "inpaint_random"}, {"drop_prob", r.drop_prob}, {"seed", r.seed}};
      }
      nlohmann::json operator()(const InpaintBox& b) const {
        return {{"type", "inpaint_box"}, {"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
      }
    };
    nlohmann::json j = std::visit(Visitor{}, kind);
    if (noise) j["noise"] = {{"sigma_max", noise->sigma_max}};
    return j;
  }

  /// Parses {"type": ..., params..., "noise": {"sigma_max": ...}}; unknown keys are errors.
  static DegradationSpec from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("operator spec must be a JSON object");
    DegradationSpec spec;
    std::vector<std::string> allowed{"type", "noise"};
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "identity") {
        spec.kind = IdentityDegradation{};
      } else if (type == "sr_bicubic" || type == "sr_average") {
        const int scale = j.value("scale", 4);
        if (type == "sr_bicubic") {
          spec.kind = SrBicubic{scale};
        } else {
          spec.kind = SrAverage{scale};
        }
        allowed.push_back("scale");
      } else if (type == "colorization") {
        spec.kind = Colorization{};
      } else if (type == "gaussian_blur") {
        spec.kind = GaussianBlur{j.value("sigma", 15.0), j.value("ksize", 9)};
        allowed.insert(allowed.end(), {"sigma", "ksize"});
      } else if (type == "inpaint_random") {
        spec.kind = InpaintRandom{j.value("drop_prob", 0.5), j.value("seed", std::uint64_t{0})};
        allowed.insert(allowed.end(), {"drop_prob", "seed"});
      } else if (type == "inpaint_box") {
        spec.kind = InpaintBox{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
        allowed.insert(allowed.end(), {"x", "y", "w", "h"});
      } else {
        throw ConfigError("unknown operator type '" + type + "'");
      }
      if (j.contains("noise")) {
        const auto& n = j.at("noise");
        for (auto it = n.begin(); it != n.end(); ++it) {
          if (it.key() != "sigma_max") throw ConfigError("unknown operator.noise key '" + it.key() + "'");
        }
        spec.noise = NoiseAugmentation{n.at("sigma_max").get<double>()};
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed operator spec: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
        throw ConfigError("unknown operator key '" + it.key() + "'");
      }
    }
    return spec;
  }
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Linear degradation H with its Moore-Penrose pseudo-inverse.
class LinearOperator {
 public:
  LinearOperator(Shape in_shape, Shape out_shape) : in_shape_(std::move(in_shape)), out_shape_(std::move(out_shape)) {}
  virtual ~LinearOperator() = default;

  const Shape& in_shape() const noexcept { return in_shape_; }
  const Shape& out_shape() const noexcept { return out_shape_; }

  /// y = H x
  Tensor apply(const Tensor& x) const {
    if (x.shape() != in_shape_) {
      throw ShapeError("apply: expected " + shape_string(in_shape_) + ", got " + shape_string(x.shape()));
    }
    return do_apply(x);
  }

  /// x = H^+ y, the minimum-norm least-squares preimage.
  Tensor pinv_apply(const Tensor& y) const {
    if (y.shape() != out_shape_) {
      throw ShapeError("pinv_apply: expected " + shape_string(out_shape_) + ", got " + shape_string(y.shape()));
    }
    return do_pinv(y);
  }

  /// Turns a loaded measurement image into an element of the output space.
  virtual Tensor measurement_from_image(const Tensor& image) const {
    if (image.size() != shape_size(out_shape_)) {
      throw ShapeError("measurement of shape " + shape_string(image.shape()) + " does not fit operator output " +
                       shape_string(out_shape_));
    }
    return image.reshaped(out_shape_);
  }

 protected:
  virtual Tensor do_apply(const Tensor& x) const = 0;
  virtual Tensor do_pinv(const Tensor& y) const = 0;

 private:
  Shape in_shape_;
  Shape out_shape_;
};

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(const Shape& shape) : LinearOperator(shape, shape) {}

 protected:
  Tensor do_apply(const Tensor& x) const override { return x; }
  Tensor do_pinv(const Tensor& y) const override { return y; }
};

/// Per-pixel channel mix: y = w . (r, g, b). The pseudo-inverse is w^T / |w|^2.
class ChannelMixOperator final : public LinearOperator {
 public:
  ChannelMixOperator(const Shape& image_shape, std::vector<double> weights)
      : LinearOperator(image_shape, Shape{image_shape[0], image_shape[1], 1}), weights_(std::move(weights)) {
    if (weights_.size() != image_shape[2]) throw ShapeError("channel weights do not match the channel count");
    for (double w : weights_) norm2_ += w * w;
    if (!(norm2_ > 0.0)) throw NumericError("channel mix with all-zero weights has no pseudo-inverse");
  }

 protected:
  Tensor do_apply(const Tensor& x) const override {
    Tensor y(out_shape());
    const std::size_t c = weights_.size();
    for (std::size_t p = 0; p < y.size(); ++p) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += weights_[k] * x[p * c + k];
      y[p] = acc;
    }
    return y;
  }

  Tensor do_pinv(const Tensor& y) const override {
    Tensor x(in_shape());
    const std::size_t c = weights_.size();
    for (std::size_t p = 0; p < y.size(); ++p) {
      for (std::size_t k = 0; k < c; ++k) x[p * c + k] = weights_[k] / norm2_ * y[p];
    }
    return x;
  }

 private:
  std::vector<double> weights_;
  double norm2_ = 0.0;
};

/// Keeps a subset of pixels (all channels). Output is the kept pixels in raster order,
/// shape (n_kept, channels); the pseudo-inverse scatters them back with zeros elsewhere.
class MaskOperator final : public LinearOperator {
 public:
  MaskOperator(const Shape& image_shape, const std::vector<bool>& keep)
      : LinearOperator(image_shape, Shape{count_kept(image_shape, keep), image_shape[2]}) {
    for (std::size_t p = 0; p < keep.size(); ++p) {
      if (keep[p]) kept_.push_back(p);
    }
  }

  const std::vector<std::size_t>& kept_pixels() const noexcept { return kept_; }

  Tensor measurement_from_image(const Tensor& image) const override {
    if (image.shape() == in_shape()) return apply(image);
    return LinearOperator::measurement_from_image(image);
  }

 protected:
  Tensor do_apply(const Tensor& x) const override {
    const std::size_t c = in_shape()[2];
    Tensor y(out_shape());
    for (std::size_t i = 0; i < kept_.size(); ++i) {
      for (std::size_t k = 0; k < c; ++k) y[i * c + k] = x[kept_[i] * c + k];
    }
    return y;
  }

  Tensor do_pinv(const Tensor& y) const override {
    const std::size_t c = in_shape()[2];
    Tensor x(in_shape());
    for (std::size_t i = 0; i < kept_.size(); ++i) {
      for (std::size_t k = 0; k < c; ++k) x[kept_[i] * c + k] = y[i * c + k];
    }
    return x;
  }

 private:
  static std::size_t count_kept(const Shape& image_shape, const std::vector<bool>& keep) {
    if (image_shape.size() != 3 || keep.size() != image_shape[0] * image_shape[1]) {
      throw ShapeError("mask does not match the image");
    }
    const auto n = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
    if (n == 0) throw ConfigError("mask drops every pixel; nothing is measured");
    return n;
  }

  std::vector<std::size_t> kept_;
};

/// Thin SVD A = U diag(s) V^T of a small dense matrix.
struct SvdFactors {
  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  Eigen::MatrixXd v;

  static SvdFactors of(const Eigen::MatrixXd& a) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
  }

  Eigen::MatrixXd reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

/// H = R (x) C acting on each channel X as R X C^T, stored as 1-D SVD factors.
///
/// The 2-D singular values are the products s_R[i] s_C[j]; values below
/// cutoff * max are treated as zero in the pseudo-inverse.
class SeparableOperator final : public LinearOperator {
 public:
  SeparableOperator(const Eigen::MatrixXd& rows, const Eigen::MatrixXd& cols, std::size_t channels,
                    double cutoff = 1e-10)
      : LinearOperator(Shape{static_cast<std::size_t>(rows.cols()), static_cast<std::size_t>(cols.cols()), channels},
                       Shape{static_cast<std::size_t>(rows.rows()), static_cast<std::size_t>(cols.rows()), channels}),
        row_(SvdFactors::of(rows)),
        col_(SvdFactors::of(cols)) {
    spectrum_ = row_.s * col_.s.transpose();
    const double top = spectrum_.maxCoeff();
    if (!(top > 0.0)) throw NumericError("separable operator has no nonzero singular values");
    inverse_spectrum_ = spectrum_.unaryExpr([&](double v) { return v < cutoff * top ? 0.0 : 1.0 / v; });
  }

  const SvdFactors& row_factors() const noexcept { return row_; }
  const SvdFactors& col_factors() const noexcept { return col_; }

 protected:
  Tensor do_apply(const Tensor& x) const override {
    return transform(x, out_shape(), [&](const Eigen::MatrixXd& img) {
      Eigen::MatrixXd spec = row_.v.transpose() * img * col_.v;
      spec.array() *= spectrum_.array();
      return Eigen::MatrixXd(row_.u * spec * col_.u.transpose());
    });
  }

  Tensor do_pinv(const Tensor& y) const override {
    return transform(y, in_shape(), [&](const Eigen::MatrixXd& img) {
      Eigen::MatrixXd spec = row_.u.transpose() * img * col_.u;
      spec.array() *= inverse_spectrum_.array();
      return Eigen::MatrixXd(row_.v * spec * col_.v.transpose());
    });
  }

 private:
  template <class F>
  static Tensor transform(const Tensor& src, const Shape& dst_shape, F&& per_channel) {
    const auto& s = src.shape();
    const std::size_t channels = s[2];
    Tensor dst(dst_shape);
    Eigen::MatrixXd plane(static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1]));
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < s[0]; ++i) {
        for (std::size_t j = 0; j < s[1]; ++j) {
          plane(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src[(i * s[1] + j) * channels + c];
        }
      }
      const Eigen::MatrixXd out = per_channel(plane);
      for (std::size_t i = 0; i < dst_shape[0]; ++i) {
        for (std::size_t j = 0; j < dst_shape[1]; ++j) {
          dst[(i * dst_shape[1] + j) * channels + c] = out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
      }
    }
    return dst;
  }

  SvdFactors row_;
  SvdFactors col_;
  Eigen::MatrixXd spectrum_;
  Eigen::MatrixXd inverse_spectrum_;
};

// ---------------------------------------------------------------------------
// 1-D kernels
// ---------------------------------------------------------------------------

/// Cubic B-spline kernel, support [-2, 2], w(0) = 2/3.
inline double bicubic_weight(double t) {
  const double a = std::abs(t);
  if (a <= 1.0) return ((2.0 - a) * (2.0 - a) * (2.0 - a) - 4.0 * (1.0 - a) * (1.0 - a) * (1.0 - a)) / 6.0;
  if (a < 2.0) return (2.0 - a) * (2.0 - a) * (2.0 - a) / 6.0;
  return 0.0;
}

/// Block averaging n -> n / scale.
inline Eigen::MatrixXd average_matrix(std::size_t n, int scale) {
  const auto s = static_cast<std::size_t>(scale);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n / s), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n / s; ++i) {
    for (std::size_t k = 0; k < s; ++k) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i * s + k)) = 1.0 / scale;
  }
  return a;
}

/// B-spline antialiased downsampling n -> n / scale with periodic boundaries.
/// Output sample i is centred at input coordinate (i + 0.5) * scale - 0.5; rows sum to 1.
inline Eigen::MatrixXd bicubic_matrix(std::size_t n, int scale) {
  const auto m = n / static_cast<std::size_t>(scale);
  const auto nn = static_cast<long>(n);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), nn);
  for (std::size_t i = 0; i < m; ++i) {
    const double centre = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const auto lo = static_cast<long>(std::floor(centre - 2.0 * scale));
    const auto hi = static_cast<long>(std::ceil(centre + 2.0 * scale));
    for (long j = lo; j <= hi; ++j) {
      const double w = bicubic_weight((static_cast<double>(j) - centre) / scale);
      if (w == 0.0) continue;
      a(static_cast<Eigen::Index>(i), ((j % nn) + nn) % nn) += w;
    }
    a.row(static_cast<Eigen::Index>(i)) /= a.row(static_cast<Eigen::Index>(i)).sum();
  }
  return a;
}

/// Unit-sum truncated Gaussian convolution with periodic boundaries.
inline Eigen::MatrixXd circular_blur_matrix(std::size_t n, double sigma, int ksize) {
  const int r = ksize / 2;
  std::vector<double> taps(static_cast<std::size_t>(ksize));
  double total = 0.0;
  for (int k = -r; k <= r; ++k) {
    taps[static_cast<std::size_t>(k + r)] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += taps[static_cast<std::size_t>(k + r)];
  }
  const auto nn = static_cast<long>(n);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nn, nn);
  for (long i = 0; i < nn; ++i) {
    for (int k = -r; k <= r; ++k) a(i, ((i + k) % nn + nn) % nn) += taps[static_cast<std::size_t>(k + r)] / total;
  }
  return a;
}

// ---------------------------------------------------------------------------
// Construction and use
// ---------------------------------------------------------------------------

using OperatorPtr = std::shared_ptr<const LinearOperator>;

inline OperatorPtr build_operator(const DegradationSpec& spec, const Shape& image_shape) {
  spec.validate(image_shape);
  const std::size_t height = image_shape[0];
  const std::size_t width = image_shape[1];
  const std::size_t channels = image_shape[2];

  struct Builder {
    const Shape& shape;
    std::size_t height, width, channels;

    OperatorPtr operator()(const IdentityDegradation&) const { return std::make_shared<IdentityOperator>(shape); }
    OperatorPtr operator()(const SrBicubic& s) const {
      return std::make_shared<SeparableOperator>(bicubic_matrix(height, s.scale), bicubic_matrix(width, s.scale),
                                                 channels);
    }
    OperatorPtr operator()(const SrAverage& s) const {
      return std::make_shared<SeparableOperator>(average_matrix(height, s.scale), average_matrix(width, s.scale),
                                                 channels);
    }
    OperatorPtr operator()(const Colorization&) const {
      return std::make_shared<ChannelMixOperator>(shape, std::vector<double>(3, 1.0 / 3.0));
    }
    OperatorPtr operator()(const GaussianBlur& b) const {
      return std::make_shared<SeparableOperator>(circular_blur_matrix(height, b.sigma, b.ksize),
                                                 circular_blur_matrix(width, b.sigma, b.ksize), channels);
    }
    OperatorPtr operator()(const InpaintRandom& r) const {
      Rng rng(r.seed);
      std::vector<bool> keep(height * width);
      for (std::size_t p = 0; p < keep.size(); ++p) keep[p] = !(rng.uniform() < r.drop_prob);
      return std::make_shared<MaskOperator>(shape, keep);
    }
    OperatorPtr operator()(const InpaintBox& b) const {
      std::vector<bool> keep(height * width, true);
      for (int i = b.y; i < b.y + b.h; ++i) {
        for (int j = b.x; j < b.x + b.w; ++j) keep[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(j)] = false;
      }
      return std::make_shared<MaskOperator>(shape, keep);
    }
  };
  return std::visit(Builder{image_shape, height, width, channels}, spec.kind);
}

/// x' = (I - H^+ H) x + H^+ y, evaluated as x + H^+ (y - H x). Then H x' = y.
inline Tensor back_project(const LinearOperator& op, const Tensor& x, const Tensor& y) {
  return x + op.pinv_apply(y - op.apply(x));
}

struct Measurement {
  Tensor y;
  double noise_sigma = 0.0;
};

/// y = H x plus the spec's optional noise augmentation.
inline Measurement degrade(const LinearOperator& op, const DegradationSpec& spec, const Tensor& x, Rng& rng) {
  Measurement m{op.apply(x), 0.0};
  if (spec.noise && spec.noise->sigma_max > 0.0) {
    m.noise_sigma = rng.uniform(0.0, spec.noise->sigma_max);
    for (auto& v : m.y.values()) v += m.noise_sigma * rng.normal();
  }
  return m;
}

}  // namespace ssd
