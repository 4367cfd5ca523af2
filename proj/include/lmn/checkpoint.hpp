#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "lmn/param_store.hpp"

namespace lmn {

// Checkpoint container: magic "LMN1", then a fixed header (mode, V, d_e, d),
// then named parameter blocks. Each block is name-length, name bytes, rows,
// cols, element count, then count little-endian 64-bit floats. Round-trips
// are bit-exact. Writers go through a temp file plus rename so an existing
// checkpoint is never left partially overwritten.

struct CheckpointHeader {
    uint8_t mode = 0;  // 0 = stateful, 1 = stateless
    uint32_t vocab = 0;
    uint32_t embed_dim = 0;  // input feature dim in stateless mode
    uint32_t hidden_dim = 0;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    put_bytes(os, b, 8);
}

inline void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}
    size_t offset() const { return off_; }

    void bytes(void* p, size_t n, const char* what) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(is_.gcount()) != n)
            throw ParseError(std::string("checkpoint truncated while reading ") + what, off_);
        off_ += n;
    }
    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(b, 4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    uint64_t u64(const char* what) {
        unsigned char b[8];
        bytes(b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        uint64_t v = u64(what);
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

private:
    std::istream& is_;
    size_t off_ = 0;
};

}  // namespace detail

inline void checkpoint_save(const std::filesystem::path& path, const CheckpointHeader& hdr,
                            const ParamStore& ps) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open for write: " + tmp.string());
        detail::put_bytes(os, "LMN1", 4);
        detail::put_bytes(os, &hdr.mode, 1);
        detail::put_u32(os, hdr.vocab);
        detail::put_u32(os, hdr.embed_dim);
        detail::put_u32(os, hdr.hidden_dim);
        for (size_t e = 0; e < ps.count(); ++e) {
            const auto& entry = ps.entry(static_cast<int>(e));
            detail::put_u32(os, static_cast<uint32_t>(entry.name.size()));
            detail::put_bytes(os, entry.name.data(), entry.name.size());
            detail::put_u32(os, static_cast<uint32_t>(entry.value.rows));
            detail::put_u32(os, static_cast<uint32_t>(entry.value.cols));
            detail::put_u64(os, entry.value.size());
            for (double d : entry.value.a) detail::put_f64(os, d);
        }
        if (!os) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

struct CheckpointBlock {
    Matrix value;
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<std::pair<std::string, Matrix>> blocks;  // in file order

    const Matrix* find(const std::string& name) const {
        for (const auto& [n, m] : blocks)
            if (n == name) return &m;
        return nullptr;
    }
};

inline Checkpoint checkpoint_load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    detail::Reader rd(is);
    char magic[4];
    rd.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "LMN1", 4) != 0) throw ParseError("bad checkpoint magic", 0);
    Checkpoint cp;
    rd.bytes(&cp.header.mode, 1, "mode");
    if (cp.header.mode > 1) throw ParseError("bad checkpoint mode", rd.offset() - 1);
    cp.header.vocab = rd.u32("vocab");
    cp.header.embed_dim = rd.u32("embed_dim");
    cp.header.hidden_dim = rd.u32("hidden_dim");
    while (!rd.at_eof()) {
        uint32_t nlen = rd.u32("block name length");
        if (nlen > 4096) throw ParseError("unreasonable block name length", rd.offset() - 4);
        std::string name(nlen, '\0');
        rd.bytes(name.data(), nlen, "block name");
        uint32_t rows = rd.u32("block rows");
        uint32_t cols = rd.u32("block cols");
        uint64_t count = rd.u64("block count");
        if (count != static_cast<uint64_t>(rows) * cols)
            throw ParseError("block shape mismatch in '" + name + "'", rd.offset() - 8);
        Matrix m(static_cast<int>(rows), static_cast<int>(cols));
        for (uint64_t i = 0; i < count; ++i) m.a[i] = rd.f64("block data");
        cp.blocks.emplace_back(std::move(name), std::move(m));
    }
    return cp;
}

}  // namespace lmn
