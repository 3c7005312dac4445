#include "pal/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

namespace pal {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'L', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::FILE* f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

uint32_t get_u32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw CheckpointError("checkpoint: truncated file " + path);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    static_assert(std::endian::native == std::endian::little, "writer assumes little-endian host");
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw CheckpointError("checkpoint: cannot write " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    std::fwrite(kMagic, 1, 8, f);
    put_u32(f, 1);
    const std::string meta = ckpt.meta.dump();  // keys sorted: stable bytes
    put_u32(f, static_cast<uint32_t>(meta.size()));
    std::fwrite(meta.data(), 1, meta.size(), f);

    for (const auto& [name, rec] : ckpt.tensors) {
        put_u32(f, static_cast<uint32_t>(name.size()));
        std::fwrite(name.data(), 1, name.size(), f);
        put_u32(f, static_cast<uint32_t>(rec.shape.size()));
        int64_t numel = 1;
        for (int64_t e : rec.shape) {
            put_u32(f, static_cast<uint32_t>(e));
            numel *= e;
        }
        if (numel != static_cast<int64_t>(rec.data.size())) {
            throw CheckpointError("checkpoint: tensor " + name + " data/shape mismatch");
        }
        std::fwrite(rec.data.data(), sizeof(float), rec.data.size(), f);
    }
    if (std::ferror(f)) throw CheckpointError("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    static_assert(std::endian::native == std::endian::little, "reader assumes little-endian host");
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw CheckpointError("checkpoint: cannot open " + path);
    struct Closer {
        std::FILE* f;
        ~Closer() { std::fclose(f); }
    } closer{f};

    char magic[8];
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        throw CheckpointError("checkpoint: bad magic in " + path);
    }
    const uint32_t version = get_u32(f, path);
    if (version != 1) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }

    Checkpoint ckpt;
    const uint32_t meta_len = get_u32(f, path);
    std::string meta(meta_len, '\0');
    if (std::fread(meta.data(), 1, meta_len, f) != meta_len) {
        throw CheckpointError("checkpoint: truncated metadata in " + path);
    }
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint: invalid metadata JSON in " + path + ": " + e.what());
    }

    // Tensor records run to end of file.
    while (true) {
        unsigned char probe[4];
        const size_t got = std::fread(probe, 1, 4, f);
        if (got == 0) break;
        if (got != 4) throw CheckpointError("checkpoint: truncated tensor header in " + path);
        const uint32_t name_len = probe[0] | (probe[1] << 8) | (probe[2] << 16) |
                                  (uint32_t(probe[3]) << 24);
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f) != name_len) {
            throw CheckpointError("checkpoint: truncated tensor name in " + path);
        }
        TensorRecord rec;
        const uint32_t rank = get_u32(f, path);
        int64_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint32_t e = get_u32(f, path);
            rec.shape.push_back(e);
            numel *= e;
        }
        rec.data.resize(numel);
        if (std::fread(rec.data.data(), sizeof(float), rec.data.size(), f) != rec.data.size()) {
            throw CheckpointError("checkpoint: truncated tensor data in " + path);
        }
        ckpt.add(name, std::move(rec));
    }
    return ckpt;
}

}  // namespace pal
