#pragma once

// Flat binary parameter checkpoints.
//
// Layout (all integers little-endian):
//   char[8]  magic "IECLCKPT"
//   u32      format version (1)
//   u32      entry count
//   per entry:
//     u32    name length, then the UTF-8 name bytes (no terminator)
//     u32    rank, then rank x u64 extents
//     f64    numel values, little-endian IEEE-754, row-major
// Entries keep the order they were written in.

#include "iecl/nn.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace iecl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<nn::Param>& entries);
std::vector<nn::Param> load_checkpoint(const std::filesystem::path& path);

// Writes every entry of `dst` from the same-named entry of `src`; missing
// names or shape mismatches throw.
void restore(const std::vector<nn::Param>& src, const std::vector<nn::Param>& dst);

}  // namespace iecl
