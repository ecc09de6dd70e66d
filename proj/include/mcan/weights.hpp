#pragma once

#include "mcan/arch.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mcan {

// Binary weight container:
//   magic "MCNW" | version u16 LE | entry count u32 LE
//   per entry: name length u16 LE | name bytes | ndim u8 | dims u32 LE each
//              | payload: 32-bit LE floats, prod(dims) of them
//   CRC-32 (IEEE) of all preceding bytes, u32 LE
// Entries whose name starts with "adam." form the optimizer-state section;
// model loading ignores them.
inline constexpr uint16_t kWeightFileVersion = 1;
inline constexpr const char* kOptimizerPrefix = "adam.";

struct WeightEntry {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;
};

void write_weight_file(const std::string& path, const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> read_weight_file(const std::string& path);

// Model weights in build order; biases are stored as 1-D entries.
void save_weights(const Model& m, const std::string& path);

// Strict load: every model weight must be present with matching dims;
// unknown non-optimizer entries are rejected, naming the offender.
void load_weights(const std::string& path, Model& m);

std::string inspect_weights(const std::string& path);

}  // namespace mcan
