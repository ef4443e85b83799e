#pragma once
#include <string>

#include "dipair/optimizer.hpp"

namespace dipair {

// Binary weight checkpoints, little-endian:
//   magic "DPWT", version u32, parameter count u32,
//   per parameter: name length u32, UTF-8 name, rank u32, dims u32 each,
//   float32 payload. Round-trips bit-exactly.
void save_checkpoint(const ParameterStore& params, const std::string& path);

// Loads values into an existing store; every name and shape must match.
void load_checkpoint(ParameterStore& params, const std::string& path);

}  // namespace dipair
