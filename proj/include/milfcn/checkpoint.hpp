#pragma once

#include <filesystem>

#include "milfcn/net.hpp"
#include "milfcn/optim.hpp"

namespace milfcn {

struct Checkpoint {
    Network net;
    OptimState state;
};

// Binary little-endian checkpoint: magic "MILFCN1\0", version u32 (=1),
// config block (num_fg_classes, stage count, stage widths, kernel size,
// downsample; u32 each), then the parameter tensors and the optimizer
// velocity tensors, each framed as count u32 + per tensor (name length u32,
// UTF-8 name, rank u32, dims u32 each, values f64 each), then the iteration
// counter u64.
void save_checkpoint(const Network& net, const OptimState& state, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// byte size the format implies for a given network, for accounting
std::size_t checkpoint_byte_size(const Network& net);

}  // namespace milfcn
