#ifndef SNF_NETWORK_HPP
#define SNF_NETWORK_HPP

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snf/tensor_io.hpp"

namespace snf {

enum class LayerKind { conv2d, batchnorm, linear, relu, add };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& text);

/// Name that layer inputs use to refer to the network input.
inline constexpr const char* kNetworkInput = "input";

// Binding roles.
inline constexpr const char* kWeight = "weight";
inline constexpr const char* kBias = "bias";
inline constexpr const char* kBnScale = "scale";
inline constexpr const char* kBnShift = "shift";
inline constexpr const char* kBnMean = "running_mean";
inline constexpr const char* kBnVar = "running_var";

using Pair = std::array<std::int64_t, 2>;

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv2d;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  Pair kernel_hw{1, 1};
  Pair stride_hw{1, 1};
  Pair padding_hw{0, 0};
  bool prunable = false;
  std::optional<std::string> coupling_group;
  std::map<std::string, std::string> bindings;  // role -> archive tensor name
  std::vector<std::string> inputs;

  bool has_filters() const { return kind == LayerKind::conv2d || kind == LayerKind::linear; }
  std::optional<std::string> binding(const std::string& role) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Shape3 {
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct NetworkSpec {
  Shape3 input_shape;
  std::vector<LayerSpec> layers;
  std::string output;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_from_json(const nlohmann::json& doc);
NetworkSpec load_network(const std::filesystem::path& path);
std::string dump_network(const NetworkSpec& spec);

/// Spatial size after a convolution: floor((in + 2*pad - kernel) / stride) + 1.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t pad);

/// A structurally checked network: topological order, shapes and channel
/// provenance are resolved once and shared by flops, slicing and evaluation.
class Network {
 public:
  /// Structural checks only (no archive).
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerSpec>& layers() const { return spec_.layers; }
  const LayerSpec& layer(std::size_t i) const { return spec_.layers[i]; }
  std::size_t size() const { return spec_.layers.size(); }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  const Shape3& output_shape(std::size_t i) const { return out_shapes_[i]; }
  const Shape3& input_shape(std::size_t i) const { return in_shapes_[i]; }

  /// Index of the conv/linear layer whose output channels layer i's output
  /// carries, or nullopt when they trace back to the network input.
  std::optional<std::size_t> channel_source(std::size_t i) const { return channel_source_[i]; }

  /// Indices of layers i's inputs, nullopt entries referring to the network input.
  const std::vector<std::optional<std::size_t>>& producers(std::size_t i) const { return producers_[i]; }

  /// Prunable conv/linear layers in topological order.
  std::vector<std::size_t> prunable_layers() const;

  /// Coupling group label -> member layer indices (filter layers only).
  const std::map<std::string, std::vector<std::size_t>>& coupling_groups() const { return groups_; }

  /// A layer may change its filter count when it is prunable and every member
  /// of its coupling group is prunable as well.
  bool is_free(std::size_t i) const;

 private:
  NetworkSpec spec_;
  std::map<std::string, std::size_t> index_;
  std::vector<Shape3> out_shapes_;
  std::vector<Shape3> in_shapes_;
  std::vector<std::optional<std::size_t>> channel_source_;
  std::vector<std::vector<std::optional<std::size_t>>> producers_;
  std::map<std::string, std::vector<std::size_t>> groups_;
};

/// Structural checks plus every binding resolved against the archive with
/// consistent shapes.
Network validate_network(const NetworkSpec& spec, const WeightArchive& archive);

struct Allocation;

struct FlopsReport {
  std::map<std::string, std::int64_t> per_layer;  // multiply-accumulates
  std::int64_t total = 0;
};

/// Multiply-accumulate count. Conv: out_h*out_w*out_c*in_c*kh*kw; linear:
/// in*out; batchnorm/relu/add: 0. With an allocation, effective channel counts
/// follow the overridden filter counts through every consumer.
FlopsReport flops(const Network& net);
FlopsReport flops(const Network& net, const Allocation& override_counts);

/// 1 - pruned.total / original.total.
double achieved_reduction(const FlopsReport& original, const FlopsReport& pruned);

}  // namespace snf

#endif  // SNF_NETWORK_HPP
