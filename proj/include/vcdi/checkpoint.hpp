#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vcdi/mat.hpp"
#include "vcdi/param_store.hpp"

namespace vcdi {

// Versioned container of named float32 arrays plus run metadata. On disk:
// fixed magic, little-endian integers, entries sorted by name, values stored
// as raw little-endian float32 — byte-identical for identical contents.
struct Checkpoint {
  std::uint32_t format_version = 1;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Mat> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Copies every registered parameter value into ck.arrays.
void store_to_checkpoint(const ParamStore& store, Checkpoint& ck);

// Writes array values into the registered parameters; every registered name
// must be present with a matching shape (extra arrays are ignored).
void load_into_store(const Checkpoint& ck, ParamStore& store);

// FNV-1a digest of the serialized bytes, used as the checkpoint id in run
// manifests.
std::uint64_t checkpoint_digest(const std::string& path);

}  // namespace vcdi
