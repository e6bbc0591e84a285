#pragma once

#include <string>

#include "once/param.h"

namespace once {

// Binary parameter snapshot. Little-endian: magic "ONCE", version u32,
// parameter count u32, then per parameter {name length u32, name, rank u32,
// dims u32..., raw f32 data}. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ParamRefsT<float>& params);

// Fills every parameter in `params` by name; shapes must match. A file entry
// without a matching parameter, or a parameter missing from the file, is an
// error.
void load_checkpoint(const std::string& path, ParamRefsT<float>& params);

}  // namespace once
