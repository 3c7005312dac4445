#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pal/error.hpp"
#include "pal/tensor.hpp"

// Named-tensor checkpoint file. Tensors are stored as 32-bit floats in
// little-endian row-major order regardless of the in-memory precision;
// metadata is a JSON object (keys serialized sorted, so save -> load -> save
// is byte-identical).

namespace pal {

struct TensorRecord {
    std::vector<int64_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, TensorRecord>> tensors;  // insertion-ordered

    const TensorRecord* find(const std::string& name) const {
        for (const auto& [n, rec] : tensors) {
            if (n == name) return &rec;
        }
        return nullptr;
    }

    void add(const std::string& name, TensorRecord rec) {
        if (find(name)) throw CheckpointError("checkpoint: duplicate tensor name " + name);
        tensors.emplace_back(name, std::move(rec));
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
TensorRecord to_record(const Tensor<T>& t) {
    TensorRecord rec;
    rec.shape = t.shape();
    rec.data.resize(t.numel());
    for (int64_t i = 0; i < t.numel(); ++i) rec.data[i] = static_cast<float>(t.data()[i]);
    return rec;
}

// Copies record values into an existing tensor; shapes must match exactly.
template <typename T>
void install_record(const TensorRecord& rec, Tensor<T>& t, const std::string& name) {
    if (rec.shape != t.shape()) {
        throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_str(rec.shape) +
                              ", model expects " + shape_str(t.shape()));
    }
    for (size_t i = 0; i < rec.data.size(); ++i) t.data()[i] = static_cast<T>(rec.data[i]);
}

}  // namespace pal
