// SPDX-License-Identifier: Apache-2.0
#include "vivit/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vivit {

namespace {

Dtype parse_dtype(const std::string& s, const std::string& entry) {
    if (s == "f32") return Dtype::F32;
    if (s == "f64") return Dtype::F64;
    throw CheckpointError("manifest entry '" + entry + "': unknown dtype '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, const std::string& entry, const char* field) {
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw CheckpointError("manifest entry '" + entry + "': bad " + field + " '" + s + "'");
    }
}

}  // namespace

const ManifestEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& e : manifest) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const ManifestEntry* e = find(name);
    if (!e) throw CheckpointError("checkpoint has no tensor named '" + name + "'");
    Tensor t = Tensor::zeros(e->shape, e->dtype);
    if (e->dtype == Dtype::F32) {
        std::memcpy(t.mutable_data<float>().data(), blob.data() + e->byte_offset, e->byte_length);
    } else {
        std::memcpy(t.mutable_data<double>().data(), blob.data() + e->byte_offset, e->byte_length);
    }
    return t;
}

void Checkpoint::add(const std::string& name, const Tensor& t) {
    if (contains(name)) throw CheckpointError("duplicate tensor name '" + name + "'");
    ManifestEntry e;
    e.name = name;
    e.dtype = t.dtype();
    e.shape = t.shape();
    e.byte_offset = blob.size();
    e.byte_length = static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype());
    blob.resize(blob.size() + e.byte_length);
    if (t.dtype() == Dtype::F32) {
        std::memcpy(blob.data() + e.byte_offset, t.data<float>().data(), e.byte_length);
    } else {
        std::memcpy(blob.data() + e.byte_offset, t.data<double>().data(), e.byte_length);
    }
    manifest.push_back(std::move(e));
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& base_path) {
    std::ofstream mf(base_path + ".manifest");
    if (!mf) throw CheckpointError("cannot write " + base_path + ".manifest");
    for (const auto& e : ckpt.manifest) {
        mf << e.name << '\t' << dtype_name(e.dtype) << '\t';
        for (std::size_t i = 0; i < e.shape.size(); ++i) {
            if (i) mf << ',';
            mf << e.shape[i];
        }
        mf << '\t' << e.byte_offset << '\t' << e.byte_length << '\n';
    }
    mf.close();

    std::ofstream bf(base_path + ".blob", std::ios::binary);
    if (!bf) throw CheckpointError("cannot write " + base_path + ".blob");
    bf.write(reinterpret_cast<const char*>(ckpt.blob.data()),
             static_cast<std::streamsize>(ckpt.blob.size()));
}

Checkpoint load_checkpoint(const std::string& base_path) {
    std::ifstream mf(base_path + ".manifest");
    if (!mf) throw CheckpointError("cannot read " + base_path + ".manifest");
    std::ifstream bf(base_path + ".blob", std::ios::binary);
    if (!bf) throw CheckpointError("cannot read " + base_path + ".blob");

    Checkpoint ckpt;
    {
        std::vector<char> raw((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
        ckpt.blob.resize(raw.size());
        std::memcpy(ckpt.blob.data(), raw.data(), raw.size());
    }

    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 5) {
            throw CheckpointError("malformed manifest line: '" + line + "'");
        }
        ManifestEntry e;
        e.name = fields[0];
        if (e.name.empty()) throw CheckpointError("manifest line with empty name");
        e.dtype = parse_dtype(fields[1], e.name);

        std::stringstream dims(fields[2]);
        std::string dim;
        while (std::getline(dims, dim, ',')) {
            const std::uint64_t v = parse_u64(dim, e.name, "dimension");
            if (v == 0) throw CheckpointError("manifest entry '" + e.name + "': zero dimension");
            e.shape.push_back(static_cast<std::int64_t>(v));
        }
        if (e.shape.empty()) throw CheckpointError("manifest entry '" + e.name + "': no dimensions");

        e.byte_offset = parse_u64(fields[3], e.name, "offset");
        e.byte_length = parse_u64(fields[4], e.name, "length");

        const std::uint64_t expected =
            static_cast<std::uint64_t>(shape_numel(e.shape)) * dtype_size(e.dtype);
        if (expected != e.byte_length) {
            throw CheckpointError("manifest entry '" + e.name + "': shape " + shape_str(e.shape) +
                                  " implies " + std::to_string(expected) + " bytes, manifest says " +
                                  std::to_string(e.byte_length));
        }
        if (e.byte_offset + e.byte_length > ckpt.blob.size()) {
            throw CheckpointError("manifest entry '" + e.name + "' ends at byte " +
                                  std::to_string(e.byte_offset + e.byte_length) +
                                  " but the blob holds only " + std::to_string(ckpt.blob.size()));
        }
        for (const auto& other : ckpt.manifest) {
            if (other.name == e.name) {
                throw CheckpointError("duplicate tensor name '" + e.name + "'");
            }
            const bool disjoint = e.byte_offset + e.byte_length <= other.byte_offset ||
                                  other.byte_offset + other.byte_length <= e.byte_offset;
            if (!disjoint) {
                throw CheckpointError("manifest entries '" + other.name + "' and '" + e.name +
                                      "' overlap in the blob");
            }
        }
        ckpt.manifest.push_back(std::move(e));
    }
    return ckpt;
}

}  // namespace vivit
