#include "e2r/blobfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "blob payloads are little-endian f64; big-endian hosts are unsupported");

namespace e2r {

const NamedArray& Blob::find(const std::string& name) const {
    const NamedArray* p = find_opt(name);
    if (p == nullptr) throw DataError("blob: missing array '" + name + "'");
    return *p;
}

const NamedArray* Blob::find_opt(const std::string& name) const {
    for (const NamedArray& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

void write_blob(const std::string& path, const std::string& magic, uint32_t version,
                const nlohmann::json& meta, const std::vector<NamedArray>& arrays) {
    if (magic.size() != 4) throw DataError("blob: magic must be 4 bytes");
    nlohmann::json header = meta;
    nlohmann::json entries = nlohmann::json::array();
    for (const NamedArray& a : arrays) {
        int64_t n = 1;
        for (int d : a.shape) n *= d;
        if (n != static_cast<int64_t>(a.data.size()))
            throw DataError("blob: array '" + a.name + "' shape/data mismatch");
        entries.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    header["entries"] = std::move(entries);
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("blob: cannot write " + path);
    f.write(magic.data(), 4);
    uint32_t v = version;
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    uint64_t hl = hs.size();
    f.write(reinterpret_cast<const char*>(&hl), sizeof(hl));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const NamedArray& a : arrays)
        f.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!f) throw DataError("blob: write failed for " + path);
}

namespace {

void read_exact(std::ifstream& f, void* dst, size_t n, const std::string& path, uint64_t offset) {
    f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
        throw DataError("blob: corrupt file " + path + ", short read at byte offset " +
                        std::to_string(offset + static_cast<uint64_t>(f.gcount())));
}

}  // namespace

Blob read_blob(const std::string& path, const std::string& magic, uint32_t expected_version) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("blob: cannot open " + path);
    uint64_t off = 0;
    char m[4];
    read_exact(f, m, 4, path, off);
    off += 4;
    if (std::string(m, 4) != magic)
        throw DataError("blob: " + path + " is not a " + magic + " file (magic '" +
                        std::string(m, 4) + "')");
    Blob blob;
    read_exact(f, &blob.version, sizeof(blob.version), path, off);
    off += sizeof(blob.version);
    if (blob.version != expected_version)
        throw DataError("blob: version mismatch in " + path + ": file has version " +
                        std::to_string(blob.version) + ", expected " +
                        std::to_string(expected_version));
    uint64_t hl = 0;
    read_exact(f, &hl, sizeof(hl), path, off);
    off += sizeof(hl);
    if (hl > (1ULL << 30))
        throw DataError("blob: corrupt file " + path + ", implausible header length at offset " +
                        std::to_string(off - sizeof(hl)));
    std::string hs(hl, '\0');
    read_exact(f, hs.data(), hl, path, off);
    off += hl;
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded())
        throw DataError("blob: corrupt JSON header in " + path + " at byte offset " +
                        std::to_string(off - hl));
    if (!header.contains("entries") || !header["entries"].is_array())
        throw DataError("blob: header of " + path + " lacks an entries array");
    for (const auto& e : header["entries"]) {
        NamedArray a;
        a.name = e.at("name").get<std::string>();
        a.shape = e.at("shape").get<Shape>();
        int64_t n = 1;
        for (int d : a.shape) {
            if (d <= 0)
                throw DataError("blob: corrupt entry shape for '" + a.name + "' in " + path);
            n *= d;
        }
        a.data.resize(static_cast<size_t>(n));
        read_exact(f, a.data.data(), static_cast<size_t>(n) * sizeof(double), path, off);
        off += static_cast<uint64_t>(n) * sizeof(double);
        blob.arrays.push_back(std::move(a));
    }
    header.erase("entries");
    blob.meta = std::move(header);
    return blob;
}

}  // namespace e2r
