#pragma once

#include <array>
#include <cstring>
#include <fstream>

#include "ogrg/nn.hpp"
#include "ogrg/optim.hpp"

namespace ogrg {

// Checkpoint container: magic "OGRG", u32 version, u32 entry count, then per
// entry u32 name length, UTF-8 name, u32 ndim, u32 dims, little-endian f32
// payload; a CRC32 over everything before it closes the file. Optimizer
// moments and scalar metadata travel as extra named tensors, so save/load
// round-trips are byte-identical.

// Running CRC32 (zlib polynomial), not finalized between calls.
inline std::uint32_t crc32_continue(std::uint32_t crc, const void* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

class CheckpointWriter {
  public:
    void add(const std::string& name, const Shape& shape, const std::vector<float>& data) {
        if (shape_numel(shape) != data.size()) throw DimensionError("checkpoint: entry size mismatch: " + name);
        entries_.push_back({name, shape, data});
    }

    void add_scalar(const std::string& name, float v) { add(name, Shape{1}, {v}); }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InputError("checkpoint: cannot write " + path);
        std::uint32_t crc = 0;
        auto put = [&](const void* p, std::size_t n) {
            out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
            crc = crc32_continue(crc, p, n);
        };
        put("OGRG", 4);
        const std::uint32_t version = 1;
        put(&version, 4);
        const std::uint32_t count = static_cast<std::uint32_t>(entries_.size());
        put(&count, 4);
        for (const auto& e : entries_) {
            const std::uint32_t nlen = static_cast<std::uint32_t>(e.name.size());
            put(&nlen, 4);
            put(e.name.data(), e.name.size());
            const std::uint32_t ndim = static_cast<std::uint32_t>(e.shape.size());
            put(&ndim, 4);
            for (int d : e.shape) {
                const std::uint32_t ud = static_cast<std::uint32_t>(d);
                put(&ud, 4);
            }
            put(e.data.data(), e.data.size() * 4);
        }
        out.write(reinterpret_cast<const char*>(&crc), 4);
        if (!out) throw InputError("checkpoint: short write to " + path);
    }

  private:
    std::vector<CheckpointEntry> entries_;
};

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("checkpoint: cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw InputError("checkpoint: truncated file " + path);

    const std::size_t body = bytes.size() - 4;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + body, 4);
    const std::uint32_t crc = crc32_continue(0, bytes.data(), body);
    if (crc != stored_crc) throw InputError("checkpoint: CRC mismatch in " + path);

    std::size_t pos = 0;
    auto take = [&](void* dst, std::size_t n) {
        if (pos + n > body) throw InputError("checkpoint: truncated payload in " + path);
        std::memcpy(dst, bytes.data() + pos, n);
        pos += n;
    };
    char magic[4];
    take(magic, 4);
    if (std::memcmp(magic, "OGRG", 4) != 0) throw InputError("checkpoint: bad magic in " + path);
    std::uint32_t version, count;
    take(&version, 4);
    if (version != 1) throw InputError("checkpoint: unsupported version " + std::to_string(version));
    take(&count, 4);

    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen;
        take(&nlen, 4);
        std::string name(nlen, '\0');
        take(name.data(), nlen);
        std::uint32_t ndim;
        take(&ndim, 4);
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            std::uint32_t ud;
            take(&ud, 4);
            shape.push_back(static_cast<int>(ud));
            numel *= ud;
        }
        std::vector<float> data(numel);
        take(data.data(), numel * 4);
        entries.push_back({std::move(name), std::move(shape), std::move(data)});
    }
    return entries;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint plumbing

inline void save_checkpoint(const std::string& path, const ParamStore<float>& store, AdamW<float>* opt,
                            long step, std::uint64_t config_hash) {
    CheckpointWriter w;
    for (const auto& e : store.entries()) w.add(e.name, e.tensor.shape(), e.tensor.values());
    if (opt) {
        const auto& params = opt->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            // moments are keyed by the trainable entry order
            w.add("opt/m/" + std::to_string(i), params[i].shape(), opt->moments_m()[i]);
            w.add("opt/v/" + std::to_string(i), params[i].shape(), opt->moments_v()[i]);
        }
        w.add_scalar("meta/adamw_t", static_cast<float>(opt->step_count()));
    }
    w.add_scalar("meta/step", static_cast<float>(step));
    std::vector<float> hash_bytes(8);
    for (int i = 0; i < 8; ++i) hash_bytes[static_cast<std::size_t>(i)] = static_cast<float>((config_hash >> (8 * i)) & 0xffu);
    w.add("meta/config_hash", Shape{8}, hash_bytes);
    w.write(path);
}

struct LoadedCheckpoint {
    long step = 0;
    std::uint64_t config_hash = 0;
    bool has_optimizer = false;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path, ParamStore<float>& store,
                                        AdamW<float>* opt = nullptr) {
    const auto entries = read_checkpoint(path);
    auto find = [&](const std::string& name) -> const CheckpointEntry* {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    };
    for (const auto& se : store.entries()) {
        const CheckpointEntry* e = find(se.name);
        if (!e) throw InputError("checkpoint: missing entry " + se.name);
        if (e->shape != se.tensor.shape())
            throw InputError("checkpoint: shape mismatch for " + se.name + ": file " + shape_str(e->shape) +
                             " vs model " + shape_str(se.tensor.shape()));
        Tensor<float> t = se.tensor;
        t.values() = e->data;
    }
    LoadedCheckpoint out;
    if (opt) {
        const auto& params = opt->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const CheckpointEntry* m = find("opt/m/" + std::to_string(i));
            const CheckpointEntry* v = find("opt/v/" + std::to_string(i));
            if (m && v) {
                opt->moments_m()[i] = m->data;
                opt->moments_v()[i] = v->data;
                out.has_optimizer = true;
            }
        }
        if (const CheckpointEntry* t = find("meta/adamw_t"))
            opt->set_step_count(static_cast<long>(t->data[0]));
    }
    if (const CheckpointEntry* s = find("meta/step")) out.step = static_cast<long>(s->data[0]);
    if (const CheckpointEntry* h = find("meta/config_hash")) {
        std::uint64_t acc = 0;
        for (int i = 0; i < 8; ++i)
            acc |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(h->data[static_cast<std::size_t>(i)]))
                   << (8 * i);
        out.config_hash = acc;
    }
    return out;
}

}  // namespace ogrg
