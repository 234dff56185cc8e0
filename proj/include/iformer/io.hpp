// Weight container (IFW1), JSON model configs, and PPM image ingestion.
//
// IFW1 layout, little-endian throughout:
//   "IFW1" | u32 entry count | entries | u32 CRC32 of all preceding bytes
// entry: u16 name length | name bytes | u8 rank | rank x u32 extents |
//        raw IEEE-754 f32 payload.
#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "iformer/model.hpp"

namespace iformer {

struct WeightEntry {
  std::string name;
  Tensor tensor;
};

class WeightStore {
 public:
  void add(std::string name, Tensor t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;  // missing name -> IoError
  const std::vector<WeightEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<WeightEntry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

void save_weights(const WeightStore& store, const std::string& path);
WeightStore load_weights(const std::string& path);

// In-memory encode/decode of the same byte layout (save/load are thin file
// wrappers around these).
std::vector<unsigned char> encode_weights(const WeightStore& store);
WeightStore decode_weights(const std::vector<unsigned char>& bytes);

// Snapshot every tensor of a model, parameters and BN statistics alike,
// under the documented names.
WeightStore collect_weights(const Model& m);

// Rebuilds a model with weights taken from the store; every expected name
// must be present with the right shape. A store without BN tensors is
// recognized as a fused snapshot and produces a fused model.
Model build_model(const ModelConfig& cfg, const WeightStore& store);

// ModelConfig <-> JSON text (schema version "v": 1). Unknown or missing
// keys raise ConfigError naming the JSON path.
std::string save_config(const ModelConfig& cfg);
ModelConfig load_config(const std::string& json_text);
void save_config_file(const ModelConfig& cfg, const std::string& path);
ModelConfig load_config_file(const std::string& path);

// Binary P6 PPM with maxval 255 -> [1,3,H,W], per channel (x/255 - mean)/std.
inline constexpr std::array<float, 3> kImageMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd{0.229f, 0.224f, 0.225f};
Tensor load_image_ppm(const std::string& path, const std::array<float, 3>& mean = kImageMean,
                      const std::array<float, 3>& stddev = kImageStd);

uint32_t crc32(const unsigned char* data, size_t len);

}  // namespace iformer
