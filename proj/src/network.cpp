#include "snf/network.hpp"

#include <fstream>
#include <set>

#include "snf/allocator.hpp"
#include "snf/error.hpp"

namespace snf {

using json = nlohmann::json;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::add: return "add";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& text) {
  if (text == "conv2d") return LayerKind::conv2d;
  if (text == "batchnorm") return LayerKind::batchnorm;
  if (text == "linear") return LayerKind::linear;
  if (text == "relu") return LayerKind::relu;
  if (text == "add") return LayerKind::add;
  throw FormatError("unknown layer kind '" + text + "'");
}

std::optional<std::string> LayerSpec::binding(const std::string& role) const {
  auto it = bindings.find(role);
  if (it == bindings.end()) return std::nullopt;
  return it->second;
}

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

// ---------------------------------------------------------------------------
// serialization

json to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json j;
    j["name"] = l.name;
    j["kind"] = to_string(l.kind);
    j["in_channels"] = l.in_channels;
    j["out_channels"] = l.out_channels;
    if (l.kind == LayerKind::conv2d) {
      j["kernel_hw"] = l.kernel_hw;
      j["stride_hw"] = l.stride_hw;
      j["padding_hw"] = l.padding_hw;
    }
    j["prunable"] = l.prunable;
    j["coupling_group"] = l.coupling_group ? json(*l.coupling_group) : json(nullptr);
    j["bindings"] = l.bindings;
    j["inputs"] = l.inputs;
    layers.push_back(std::move(j));
  }
  return json{{"input_shape", {spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width}},
              {"layers", std::move(layers)},
              {"output", spec.output}};
}

namespace {

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + key + "': " + e.what());
  }
}

}  // namespace

NetworkSpec network_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("network document must be an object");
  NetworkSpec spec;
  auto shape = field<std::vector<std::int64_t>>(doc, "input_shape", "network");
  if (shape.size() != 3) throw FormatError("network: input_shape must be [channels, height, width]");
  spec.input_shape = {shape[0], shape[1], shape[2]};
  spec.output = field<std::string>(doc, "output", "network");
  if (!doc.contains("layers") || !doc.at("layers").is_array()) throw FormatError("network: missing layers list");
  for (const auto& j : doc.at("layers")) {
    LayerSpec l;
    l.name = field<std::string>(j, "name", "layer");
    const std::string where = "layer '" + l.name + "'";
    l.kind = layer_kind_from_string(field<std::string>(j, "kind", where));
    l.in_channels = field<std::int64_t>(j, "in_channels", where);
    l.out_channels = field<std::int64_t>(j, "out_channels", where);
    if (l.kind == LayerKind::conv2d) {
      l.kernel_hw = field<Pair>(j, "kernel_hw", where);
      l.stride_hw = field<Pair>(j, "stride_hw", where);
      l.padding_hw = field<Pair>(j, "padding_hw", where);
    }
    l.prunable = j.value("prunable", false);
    if (j.contains("coupling_group") && !j.at("coupling_group").is_null())
      l.coupling_group = field<std::string>(j, "coupling_group", where);
    if (j.contains("bindings")) l.bindings = field<std::map<std::string, std::string>>(j, "bindings", where);
    l.inputs = field<std::vector<std::string>>(j, "inputs", where);
    spec.layers.push_back(std::move(l));
  }
  return spec;
}

NetworkSpec load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  return network_from_json(doc);
}

std::string dump_network(const NetworkSpec& spec) { return to_json(spec).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// structure

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  const auto& in = spec_.input_shape;
  if (in.channels < 1 || in.height < 1 || in.width < 1) throw ValidationError("input_shape must be positive");
  if (spec_.layers.empty()) throw ValidationError("network has no layers");

  std::set<std::string> all_names;
  for (const auto& l : spec_.layers) all_names.insert(l.name);

  const auto n = spec_.layers.size();
  out_shapes_.resize(n);
  in_shapes_.resize(n);
  channel_source_.resize(n);
  producers_.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec_.layers[i];
    const std::string where = "layer '" + l.name + "'";
    if (l.name.empty() || l.name == kNetworkInput) throw ValidationError(where + ": reserved or empty name");
    if (index_.count(l.name)) throw ValidationError(where + ": duplicate layer name");
    if (l.inputs.empty()) throw ValidationError(where + ": no inputs");

    std::vector<Shape3> shapes;
    std::vector<std::optional<std::size_t>> sources;
    for (const auto& ref : l.inputs) {
      if (ref == kNetworkInput) {
        producers_[i].push_back(std::nullopt);
        shapes.push_back(in);
        sources.push_back(std::nullopt);
        continue;
      }
      auto it = index_.find(ref);
      if (it == index_.end()) {
        if (all_names.count(ref)) throw ValidationError(where + ": input '" + ref + "' creates a cycle");
        throw ValidationError(where + ": unknown input '" + ref + "'");
      }
      producers_[i].push_back(it->second);
      shapes.push_back(out_shapes_[it->second]);
      sources.push_back(channel_source_[it->second]);
    }
    const Shape3 x = shapes.front();
    in_shapes_[i] = x;

    auto single_input = [&] {
      if (l.inputs.size() != 1) throw ValidationError(where + ": expects exactly one input");
    };
    auto channels_match = [&] {
      if (l.in_channels != x.channels)
        throw ValidationError(where + ": in_channels " + std::to_string(l.in_channels) + " but producer carries " +
                              std::to_string(x.channels));
    };

    switch (l.kind) {
      case LayerKind::conv2d: {
        single_input();
        channels_match();
        if (l.out_channels < 1) throw ValidationError(where + ": out_channels must be positive");
        for (int a = 0; a < 2; ++a)
          if (l.kernel_hw[a] < 1 || l.stride_hw[a] < 1 || l.padding_hw[a] < 0)
            throw ValidationError(where + ": invalid kernel/stride/padding");
        const auto oh = conv_out_extent(x.height, l.kernel_hw[0], l.stride_hw[0], l.padding_hw[0]);
        const auto ow = conv_out_extent(x.width, l.kernel_hw[1], l.stride_hw[1], l.padding_hw[1]);
        if (oh < 1 || ow < 1) throw ValidationError(where + ": kernel larger than padded input");
        out_shapes_[i] = {l.out_channels, oh, ow};
        channel_source_[i] = i;
        break;
      }
      case LayerKind::linear:
        single_input();
        channels_match();
        if (l.out_channels < 1) throw ValidationError(where + ": out_channels must be positive");
        out_shapes_[i] = {l.out_channels, 1, 1};
        channel_source_[i] = i;
        break;
      case LayerKind::batchnorm:
      case LayerKind::relu:
        single_input();
        channels_match();
        if (l.out_channels != l.in_channels) throw ValidationError(where + ": out_channels must equal in_channels");
        out_shapes_[i] = x;
        channel_source_[i] = sources.front();
        break;
      case LayerKind::add: {
        if (l.inputs.size() < 2) throw ValidationError(where + ": add needs at least two inputs");
        for (const auto& s : shapes)
          if (s != x) throw ValidationError(where + ": channel or spatial mismatch between add inputs");
        channels_match();
        if (l.out_channels != l.in_channels) throw ValidationError(where + ": out_channels must equal in_channels");
        out_shapes_[i] = x;
        channel_source_[i] = sources.front();
        break;
      }
    }
    if (l.prunable && !l.has_filters()) throw ValidationError(where + ": only conv2d/linear layers can be prunable");
    if (l.coupling_group && !l.has_filters())
      throw ValidationError(where + ": only conv2d/linear layers can join a coupling group");
    if (l.coupling_group) groups_[*l.coupling_group].push_back(i);
    index_.emplace(l.name, i);
  }

  if (!index_.count(spec_.output)) throw ValidationError("output '" + spec_.output + "' is not a layer");

  for (const auto& [label, members] : groups_)
    for (auto m : members)
      if (spec_.layers[m].out_channels != spec_.layers[members.front()].out_channels)
        throw ValidationError("coupling group '" + label + "' mixes filter counts");

  // Add joins whose producers carry different channel sets must be coupled.
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = spec_.layers[i];
    if (l.kind != LayerKind::add) continue;
    std::set<std::optional<std::size_t>> sources;
    for (auto p : producers_[i]) sources.insert(p ? channel_source_[*p] : std::nullopt);
    if (sources.size() < 2) continue;
    std::optional<std::string> shared;
    bool coupled = true;
    for (const auto& s : sources) {
      const auto* group = s ? &spec_.layers[*s].coupling_group : nullptr;
      if (!group || !*group || (shared && **group != *shared)) {
        coupled = false;
        break;
      }
      shared = **group;
    }
    if (coupled) continue;
    for (const auto& s : sources)
      if (s && is_free(*s))
        throw ValidationError("layer '" + l.name + "': add joins prunable producer '" + spec_.layers[*s].name +
                              "' that is not coupled with the other inputs");
  }
}

std::optional<std::size_t> Network::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Network::index_of(const std::string& name) const {
  auto i = find(name);
  if (!i) throw ValidationError("unknown layer '" + name + "'");
  return *i;
}

bool Network::is_free(std::size_t i) const {
  const auto& l = spec_.layers[i];
  if (!l.prunable || !l.has_filters()) return false;
  if (!l.coupling_group) return true;
  for (auto m : groups_.at(*l.coupling_group))
    if (!spec_.layers[m].prunable) return false;
  return true;
}

std::vector<std::size_t> Network::prunable_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (spec_.layers[i].prunable && spec_.layers[i].has_filters()) out.push_back(i);
  return out;
}

namespace {

void expect_shape(const WeightArchive& archive, const LayerSpec& l, const std::string& role,
                  const std::vector<std::int64_t>& shape) {
  const auto name = l.binding(role);
  if (!name) throw ValidationError("layer '" + l.name + "': missing binding '" + role + "'");
  if (!archive.contains(*name)) throw ValidationError("layer '" + l.name + "': missing tensor '" + *name + "'");
  const auto& t = archive.at(*name);
  if (t.shape != shape) {
    std::string want, got;
    for (auto d : shape) want += std::to_string(d) + " ";
    for (auto d : t.shape) got += std::to_string(d) + " ";
    throw ValidationError("layer '" + l.name + "': tensor '" + *name + "' has shape [ " + got + "], expected [ " +
                          want + "]");
  }
}

}  // namespace

Network validate_network(const NetworkSpec& spec, const WeightArchive& archive) {
  Network net(spec);
  for (const auto& l : net.layers()) {
    switch (l.kind) {
      case LayerKind::conv2d:
        expect_shape(archive, l, kWeight, {l.out_channels, l.in_channels, l.kernel_hw[0], l.kernel_hw[1]});
        if (l.binding(kBias)) expect_shape(archive, l, kBias, {l.out_channels});
        break;
      case LayerKind::linear:
        expect_shape(archive, l, kWeight, {l.out_channels, l.in_channels});
        if (l.binding(kBias)) expect_shape(archive, l, kBias, {l.out_channels});
        break;
      case LayerKind::batchnorm:
        for (const char* role : {kBnScale, kBnShift, kBnMean, kBnVar}) expect_shape(archive, l, role, {l.out_channels});
        break;
      case LayerKind::relu:
      case LayerKind::add:
        break;
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// FLOPs

namespace {

FlopsReport count_macs(const Network& net, const std::map<std::string, std::int64_t>* counts) {
  std::vector<std::int64_t> effective_out(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) effective_out[i] = net.layer(i).out_channels;
  if (counts) {
    for (const auto& [name, d] : *counts) {
      const auto i = net.find(name);
      if (!i || !net.layer(*i).has_filters())
        throw ValidationError("channel override references unknown filter layer '" + name + "'");
      if (d < 1 || d > net.layer(*i).out_channels)
        throw ValidationError("channel override for '" + name + "' outside [1, " +
                              std::to_string(net.layer(*i).out_channels) + "]");
      effective_out[*i] = d;
    }
  }
  auto carried = [&](std::size_t i) {
    const auto src = net.channel_source(i);
    return src ? effective_out[*src] : net.spec().input_shape.channels;
  };
  auto input_channels = [&](std::size_t i) {
    const auto p = net.producers(i).front();
    return p ? carried(*p) : net.spec().input_shape.channels;
  };

  FlopsReport report;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& l = net.layer(i);
    std::int64_t macs = 0;
    if (l.kind == LayerKind::conv2d) {
      const auto& o = net.output_shape(i);
      macs = o.height * o.width * effective_out[i] * input_channels(i) * l.kernel_hw[0] * l.kernel_hw[1];
    } else if (l.kind == LayerKind::linear) {
      macs = effective_out[i] * input_channels(i);
    }
    report.per_layer[l.name] = macs;
    report.total += macs;
  }
  return report;
}

}  // namespace

FlopsReport flops(const Network& net) { return count_macs(net, nullptr); }

FlopsReport flops(const Network& net, const Allocation& override_counts) {
  return count_macs(net, &override_counts.per_layer);
}

double achieved_reduction(const FlopsReport& original, const FlopsReport& pruned) {
  if (original.total <= 0) throw DomainError("original FLOPs total is zero");
  return 1.0 - static_cast<double>(pruned.total) / static_cast<double>(original.total);
}

}  // namespace snf
