// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vivit/tensor.hpp"

namespace vivit {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ManifestEntry {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape shape;
    std::uint64_t byte_offset = 0;
    std::uint64_t byte_length = 0;
};

// Named-tensor manifest plus one raw little-endian blob. On disk this is a
// pair of files: <base>.manifest holds one record per line,
//   name<TAB>dtype<TAB>dim0,dim1,...<TAB>offset<TAB>length
// and <base>.blob holds the row-major IEEE-754 scalars.
struct Checkpoint {
    std::vector<ManifestEntry> manifest;
    std::vector<std::byte> blob;

    const ManifestEntry* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }
    Tensor tensor(const std::string& name) const;

    void add(const std::string& name, const Tensor& t);
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& base_path);

// Validates names, bounds, overlap and dimension/byte agreement; throws
// CheckpointError naming the offending entry.
Checkpoint load_checkpoint(const std::string& base_path);

}  // namespace vivit
