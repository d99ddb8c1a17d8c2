#pragma once

#include "maskgen/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace maskgen {

// "NTC1" named-tensor container.
//
// Layout:
//   bytes 0..3    magic "NTC1"
//   bytes 4..11   little-endian u64 header length H
//   bytes 12..12+H  UTF-8 JSON header: tensor name -> {dtype, shape,
//                   data_offsets: [begin, end)}, plus "__meta__" -> free-form
//                   string map. Offsets are relative to the data section.
//   then          concatenated raw row-major little-endian f32 tensor data
//
// Tensors are laid out in lexicographic name order with contiguous offsets;
// load() validates magic, offset order, and that the data section ends at
// EOF. save(load(f)) is byte-identical.

struct Container {
    TensorMap tensors;
    std::map<std::string, std::string> meta;
};

std::vector<uint8_t> serialize_container(const Container& c);
Container deserialize_container(const std::vector<uint8_t>& bytes);

void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

// FNV-1a over the serialized bytes, hex-encoded. Used to pin adapter
// checkpoints to the exact generator checkpoint they were tuned against.
std::string container_digest(const Container& c);
std::string file_digest(const std::filesystem::path& path);

std::string hex64(uint64_t v);

} // namespace maskgen
