#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfb/answers.hpp"
#include "mfb/dataset.hpp"
#include "mfb/model.hpp"

namespace mfb {

// Everything needed to run a trained model on raw samples.
struct ModelBundle {
  VqaModel model;
  TokenVocab tokens;
  AnswerVocab answers;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "MFBCKPT\0" | u32 version | u64 n + n bytes of JSON header (model config
//   and both vocabularies) | u64 tensor count | per tensor: u32 name length,
//   name, u32 rank, rank x u64 dims, numel x f64 | u64 FNV-1a of all
//   preceding bytes.
std::vector<std::uint8_t> encode_checkpoint(ModelBundle& bundle);
ModelBundle decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

}  // namespace mfb
