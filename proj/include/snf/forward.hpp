#ifndef SNF_FORWARD_HPP
#define SNF_FORWARD_HPP

// Direct-loop reference evaluator. Slow by construction; it exists to check
// that slicing a network preserves its function.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "snf/error.hpp"
#include "snf/network.hpp"

namespace snf {

/// Channel-major activation volume.
template <typename Scalar = double>
struct FeatureMap {
  Shape3 shape;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> data;

  FeatureMap() = default;
  explicit FeatureMap(Shape3 s) : shape(s), data(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(s.channels * s.height * s.width)) {}

  Scalar& operator()(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data((c * shape.height + y) * shape.width + x);
  }
  Scalar operator()(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data((c * shape.height + y) * shape.width + x);
  }
};

inline constexpr double kBatchNormEps = 1e-5;

namespace detail {

template <typename Scalar>
Scalar tensor_at(const TensorRecord& t, std::int64_t flat) {
  return static_cast<Scalar>(t.data[static_cast<std::size_t>(flat)]);
}

template <typename Scalar>
FeatureMap<Scalar> conv2d(const LayerSpec& l, const Shape3& out_shape, const FeatureMap<Scalar>& x,
                          const WeightArchive& archive) {
  const auto& w = archive.at(*l.binding(kWeight));
  const TensorRecord* bias = l.binding(kBias) ? &archive.at(*l.binding(kBias)) : nullptr;
  const auto [kh, kw] = l.kernel_hw;
  const auto [sh, sw] = l.stride_hw;
  const auto [ph, pw] = l.padding_hw;
  const auto cin = x.shape.channels;
  FeatureMap<Scalar> y(out_shape);
  for (std::int64_t o = 0; o < out_shape.channels; ++o)
    for (std::int64_t oy = 0; oy < out_shape.height; ++oy)
      for (std::int64_t ox = 0; ox < out_shape.width; ++ox) {
        Scalar acc = bias ? tensor_at<Scalar>(*bias, o) : Scalar(0);
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const auto iy = oy * sh - ph + ky;
            if (iy < 0 || iy >= x.shape.height) continue;
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const auto ix = ox * sw - pw + kx;
              if (ix < 0 || ix >= x.shape.width) continue;
              acc += tensor_at<Scalar>(w, ((o * cin + c) * kh + ky) * kw + kx) * x(c, iy, ix);
            }
          }
        y(o, oy, ox) = acc;
      }
  return y;
}

// The input volume is global-average-pooled to a channel vector first.
template <typename Scalar>
FeatureMap<Scalar> linear(const LayerSpec& l, const FeatureMap<Scalar>& x, const WeightArchive& archive) {
  const auto& w = archive.at(*l.binding(kWeight));
  const TensorRecord* bias = l.binding(kBias) ? &archive.at(*l.binding(kBias)) : nullptr;
  const auto cin = x.shape.channels;
  const auto area = x.shape.height * x.shape.width;
  std::vector<Scalar> pooled(static_cast<std::size_t>(cin), Scalar(0));
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t p = 0; p < area; ++p) pooled[c] += x.data(c * area + p);
    pooled[c] /= static_cast<Scalar>(area);
  }
  FeatureMap<Scalar> y(Shape3{l.out_channels, 1, 1});
  for (std::int64_t o = 0; o < l.out_channels; ++o) {
    Scalar acc = bias ? tensor_at<Scalar>(*bias, o) : Scalar(0);
    for (std::int64_t c = 0; c < cin; ++c) acc += tensor_at<Scalar>(w, o * cin + c) * pooled[c];
    y.data(o) = acc;
  }
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> batchnorm(const LayerSpec& l, FeatureMap<Scalar> x, const WeightArchive& archive) {
  const auto& scale = archive.at(*l.binding(kBnScale));
  const auto& shift = archive.at(*l.binding(kBnShift));
  const auto& mean = archive.at(*l.binding(kBnMean));
  const auto& var = archive.at(*l.binding(kBnVar));
  const auto area = x.shape.height * x.shape.width;
  for (std::int64_t c = 0; c < x.shape.channels; ++c) {
    const Scalar inv = Scalar(1) / std::sqrt(tensor_at<Scalar>(var, c) + Scalar(kBatchNormEps));
    const Scalar s = tensor_at<Scalar>(scale, c), b = tensor_at<Scalar>(shift, c), mu = tensor_at<Scalar>(mean, c);
    for (std::int64_t p = 0; p < area; ++p) {
      auto& v = x.data(c * area + p);
      v = (v - mu) * inv * s + b;
    }
  }
  return x;
}

}  // namespace detail

/// Evaluates the network on one input volume and returns the output layer's activations.
template <typename Scalar = double>
FeatureMap<Scalar> forward_eval(const Network& net, const WeightArchive& archive, const FeatureMap<Scalar>& input) {
  if (input.shape != net.spec().input_shape ||
      input.data.size() != input.shape.channels * input.shape.height * input.shape.width)
    throw ValidationError("forward_eval: input shape does not match the network input");
  std::vector<FeatureMap<Scalar>> acts(net.size());
  auto fetch = [&](const std::optional<std::size_t>& p) -> const FeatureMap<Scalar>& {
    return p ? acts[*p] : input;
  };
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layer(i);
    const auto& producers = net.producers(i);
    const auto& x = fetch(producers.front());
    if (x.shape != net.input_shape(i))
      throw ValidationError("forward_eval: activation shape mismatch at '" + l.name + "'");
    switch (l.kind) {
      case LayerKind::conv2d:
        acts[i] = detail::conv2d(l, net.output_shape(i), x, archive);
        break;
      case LayerKind::linear:
        acts[i] = detail::linear(l, x, archive);
        break;
      case LayerKind::batchnorm:
        acts[i] = detail::batchnorm(l, x, archive);
        break;
      case LayerKind::relu:
        acts[i] = x;
        acts[i].data = acts[i].data.cwiseMax(Scalar(0));
        break;
      case LayerKind::add:
        acts[i] = x;
        for (std::size_t k = 1; k < producers.size(); ++k) {
          const auto& other = fetch(producers[k]);
          if (other.shape != x.shape) throw ValidationError("forward_eval: add input mismatch at '" + l.name + "'");
          acts[i].data += other.data;
        }
        break;
    }
  }
  return acts[net.index_of(net.spec().output)];
}

}  // namespace snf

#endif  // SNF_FORWARD_HPP
