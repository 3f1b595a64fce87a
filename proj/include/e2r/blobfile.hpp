#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "e2r/errors.hpp"
#include "e2r/tensor.hpp"

namespace e2r {

// Container shared by the adapter (E2RA) and checkpoint (E2RC) formats:
//   magic[4] | u32 version LE | u64 header length LE | header JSON |
//   little-endian f64 payloads in header "entries" order.
// Header JSON is the caller's meta object plus an "entries" array of
// {name, shape}. nlohmann serializes object keys sorted, so identical
// content produces identical bytes.

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

struct Blob {
    uint32_t version = 0;
    nlohmann::json meta;
    std::vector<NamedArray> arrays;

    const NamedArray& find(const std::string& name) const;
    const NamedArray* find_opt(const std::string& name) const;
};

void write_blob(const std::string& path, const std::string& magic, uint32_t version,
                const nlohmann::json& meta, const std::vector<NamedArray>& arrays);

Blob read_blob(const std::string& path, const std::string& magic, uint32_t expected_version);

}  // namespace e2r
