#pragma once

#include <map>
#include <string>

#include "diffrec/params.hpp"

namespace diffrec {

// Named-tensor container: magic "DRT1", a length-prefixed JSON header listing
// a format-version field and tensor names/shapes, then the raw tensor payloads
// as little-endian 64-bit floats in header order. Param values are stored as
// "p:<name>" and Adam moments as "m:<name>" / "v:<name>"; the optimizer step
// counter and caller metadata (e.g. the resolved training config) travel in
// the header's meta object as key=value strings.
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const std::map<std::string, std::string>& meta);

struct Checkpoint {
  ParamStore store;
  std::map<std::string, std::string> meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace diffrec
