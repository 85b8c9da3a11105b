#ifndef SNF_SCAFFOLD_HPP
#define SNF_SCAFFOLD_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "snf/network.hpp"
#include "snf/tensor_io.hpp"

namespace snf {

struct Model {
  NetworkSpec spec;
  WeightArchive archive;
};

/// Deterministic random-weight networks:
///   toy-plain      3x8x8 input, three conv/BN/ReLU stages, all convs prunable
///   toy-residual   3x8x8 input, two residual blocks, block outputs coupled with the stem
///   resnet56-shape CIFAR ResNet-56 (16/32/64 stages, 3x3 kernels, 1x1 projection
///                  shortcuts); only the first conv of each block is prunable,
///                  block-output convs carry their stage's coupling group
Model scaffold(const std::string& template_name, std::uint64_t seed);

std::vector<std::string> scaffold_templates();

}  // namespace snf

#endif  // SNF_SCAFFOLD_HPP
