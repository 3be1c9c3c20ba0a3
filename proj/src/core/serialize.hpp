#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/tensor.hpp"

// Single-file array container: magic, one JSON metadata block, then named
// arrays (float32 or int32). Array bytes are hashed (FNV-1a 64) at save time
// and the hex digest is stored in the metadata as "content_hash".
namespace df::ser {

struct Container {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> floats;
    std::vector<std::pair<std::string, ITensor>> ints;

    void add(const std::string& name, Tensor t) { floats.emplace_back(name, std::move(t)); }
    void add(const std::string& name, ITensor t) { ints.emplace_back(name, std::move(t)); }

    const Tensor& get_float(const std::string& name) const;
    const ITensor& get_int(const std::string& name) const;
    bool has_float(const std::string& name) const;
};

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
std::string content_hash(const Container& c);

void save(const std::string& path, Container& c);  // fills meta["content_hash"]
Container load(const std::string& path);

}  // namespace df::ser
