#include "snf/scaffold.hpp"

#include <cmath>
#include <numbers>

#include "snf/error.hpp"
#include "snf/random.hpp"

namespace snf {

namespace {

class Builder {
 public:
  Builder(Shape3 input, std::uint64_t seed) : rng_(seed) { model_.spec.input_shape = input; }

  std::string conv(const std::string& name, const std::string& input, std::int64_t in, std::int64_t out,
                   std::int64_t kernel, std::int64_t stride, bool prunable,
                   std::optional<std::string> group = std::nullopt, bool bias = false) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::conv2d;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel_hw = {kernel, kernel};
    l.stride_hw = {stride, stride};
    l.padding_hw = {kernel / 2, kernel / 2};
    l.prunable = prunable;
    l.coupling_group = std::move(group);
    l.inputs = {input};
    l.bindings[kWeight] = name + ".weight";
    add_normal(name + ".weight", {out, in, kernel, kernel}, std::sqrt(2.0 / static_cast<double>(in * kernel * kernel)));
    if (bias) {
      l.bindings[kBias] = name + ".bias";
      add_uniform(name + ".bias", {out}, -0.1, 0.1);
    }
    push(std::move(l));
    return name;
  }

  std::string bn(const std::string& name, const std::string& input, std::int64_t channels) {
    LayerSpec l = passthrough(name, LayerKind::batchnorm, {input}, channels);
    l.bindings = {{kBnScale, name + ".weight"},
                  {kBnShift, name + ".bias"},
                  {kBnMean, name + ".running_mean"},
                  {kBnVar, name + ".running_var"}};
    add_uniform(name + ".weight", {channels}, 0.5, 1.5);
    add_uniform(name + ".bias", {channels}, -0.1, 0.1);
    add_uniform(name + ".running_mean", {channels}, -0.1, 0.1);
    add_uniform(name + ".running_var", {channels}, 0.5, 1.5);
    push(std::move(l));
    return name;
  }

  std::string relu(const std::string& name, const std::string& input, std::int64_t channels) {
    push(passthrough(name, LayerKind::relu, {input}, channels));
    return name;
  }

  std::string add(const std::string& name, std::vector<std::string> inputs, std::int64_t channels) {
    push(passthrough(name, LayerKind::add, std::move(inputs), channels));
    return name;
  }

  std::string linear(const std::string& name, const std::string& input, std::int64_t in, std::int64_t out) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::linear;
    l.in_channels = in;
    l.out_channels = out;
    l.inputs = {input};
    l.bindings = {{kWeight, name + ".weight"}, {kBias, name + ".bias"}};
    add_normal(name + ".weight", {out, in}, std::sqrt(1.0 / static_cast<double>(in)));
    add_uniform(name + ".bias", {out}, -0.1, 0.1);
    push(std::move(l));
    return name;
  }

  Model finish(const std::string& output) {
    model_.spec.output = output;
    return std::move(model_);
  }

 private:
  static LayerSpec passthrough(const std::string& name, LayerKind kind, std::vector<std::string> inputs,
                               std::int64_t channels) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.in_channels = l.out_channels = channels;
    l.inputs = std::move(inputs);
    return l;
  }

  void push(LayerSpec l) { model_.spec.layers.push_back(std::move(l)); }

  void add_normal(const std::string& name, std::vector<std::int64_t> shape, double stddev) {
    TensorRecord t(name, std::move(shape), {});
    t.data.resize(static_cast<std::size_t>(t.numel()));
    for (auto& v : t.data) v = static_cast<float>(stddev * gaussian());
    model_.archive.add(std::move(t));
  }

  void add_uniform(const std::string& name, std::vector<std::int64_t> shape, double lo, double hi) {
    TensorRecord t(name, std::move(shape), {});
    t.data.resize(static_cast<std::size_t>(t.numel()));
    for (auto& v : t.data) v = static_cast<float>(lo + (hi - lo) * rng_.unit());
    model_.archive.add(std::move(t));
  }

  // Box-Muller, one value per pair of draws.
  double gaussian() {
    const double u1 = rng_.unit(), u2 = rng_.unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  SplitMix64 rng_;
  Model model_;
};

Model toy_plain(std::uint64_t seed) {
  Builder b({3, 8, 8}, seed);
  auto x = b.conv("conv1", kNetworkInput, 3, 8, 3, 1, true, std::nullopt, true);
  x = b.relu("relu1", b.bn("bn1", x, 8), 8);
  x = b.conv("conv2", x, 8, 16, 3, 2, true, std::nullopt, true);
  x = b.relu("relu2", b.bn("bn2", x, 16), 16);
  x = b.conv("conv3", x, 16, 16, 3, 1, true, std::nullopt, true);
  x = b.relu("relu3", b.bn("bn3", x, 16), 16);
  return b.finish(b.linear("fc", x, 16, 10));
}

Model toy_residual(std::uint64_t seed) {
  Builder b({3, 8, 8}, seed);
  const std::string group = "res";
  auto x = b.conv("stem", kNetworkInput, 3, 8, 3, 1, true, group);
  x = b.relu("stem_relu", b.bn("stem_bn", x, 8), 8);
  for (int blk = 1; blk <= 2; ++blk) {
    const auto p = "block" + std::to_string(blk);
    auto y = b.conv(p + ".conv1", x, 8, 8, 3, 1, true);
    y = b.relu(p + ".relu1", b.bn(p + ".bn1", y, 8), 8);
    y = b.conv(p + ".conv2", y, 8, 8, 3, 1, true, group);
    y = b.bn(p + ".bn2", y, 8);
    x = b.relu(p + ".relu2", b.add(p + ".add", {y, x}, 8), 8);
  }
  return b.finish(b.linear("fc", x, 8, 10));
}

Model resnet56_shape(std::uint64_t seed) {
  Builder b({3, 32, 32}, seed);
  constexpr int kBlocksPerStage = 9;
  const std::int64_t widths[] = {16, 32, 64};

  auto x = b.conv("conv1", kNetworkInput, 3, 16, 3, 1, false, "stage1");
  x = b.relu("relu", b.bn("bn1", x, 16), 16);
  std::int64_t in = 16;
  for (int s = 0; s < 3; ++s) {
    const auto c = widths[s];
    const auto group = "stage" + std::to_string(s + 1);
    for (int blk = 0; blk < kBlocksPerStage; ++blk) {
      const auto p = "layer" + std::to_string(s + 1) + "." + std::to_string(blk);
      const std::int64_t stride = (s > 0 && blk == 0) ? 2 : 1;
      auto y = b.conv(p + ".conv1", x, in, c, 3, stride, true);
      y = b.relu(p + ".relu1", b.bn(p + ".bn1", y, c), c);
      y = b.conv(p + ".conv2", y, c, c, 3, 1, false, group);
      y = b.bn(p + ".bn2", y, c);
      std::string shortcut = x;
      if (stride != 1 || in != c) {
        shortcut = b.conv(p + ".downsample.0", x, in, c, 1, stride, false, group);
        shortcut = b.bn(p + ".downsample.1", shortcut, c);
      }
      x = b.relu(p + ".relu2", b.add(p + ".add", {y, shortcut}, c), c);
      in = c;
    }
  }
  return b.finish(b.linear("fc", x, 64, 10));
}

}  // namespace

std::vector<std::string> scaffold_templates() { return {"toy-plain", "toy-residual", "resnet56-shape"}; }

Model scaffold(const std::string& template_name, std::uint64_t seed) {
  if (template_name == "toy-plain") return toy_plain(seed);
  if (template_name == "toy-residual") return toy_residual(seed);
  if (template_name == "resnet56-shape") return resnet56_shape(seed);
  throw DomainError("unknown template '" + template_name + "'");
}

}  // namespace snf
