#pragma once

#include <string>
#include <vector>

#include "cumulus/graph.hpp"

namespace cumulus {

/// The four baseline cloud-detection networks.
///
///   pixel_net: 12-band spectrum as a 12x1x1 map; two 3x1 same convs
///              (128, 64 filters) each followed by 2x1 stride-1 valid pools;
///              dense 64/32 with 20% dropout after the first; sigmoid unit.
///   patch_net: same layer stack on 5x5x12 patches, 50% dropout.
///   scene_net: 256x256x12 tiles; five 3x3 same convs (16..256) each with a
///              3x3 stride-2 valid pool; dense 1024/512/256 with 50% dropout
///              between; sigmoid unit.
///   u_net:     256x256x12 tiles; four encoder blocks of two 3x3 same convs
///              (16..128) with 2x2 pools, 256-filter bottleneck, stride-2 2x2
///              transposed-conv decoder with concat skips, 1x1 sigmoid conv.
///
/// Throws ArchError for unknown ids.
Graph build_architecture(const std::string& arch);

const std::vector<std::string>& architecture_names();

/// Same layer stack with a different nominal input edge (e.g. scene_net at
/// 512x512); used for capacity experiments.
Graph build_architecture(const std::string& arch, int input_hw);

}  // namespace cumulus
