#include "core/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace df::ser {

static const char kMagic[8] = {'D', 'F', 'A', 'C', '0', '0', '0', '1'};

const Tensor& Container::get_float(const std::string& name) const {
    for (const auto& [n, t] : floats)
        if (n == name) return t;
    throw std::out_of_range("container: missing float array '" + name + "'");
}

const ITensor& Container::get_int(const std::string& name) const {
    for (const auto& [n, t] : ints)
        if (n == name) return t;
    throw std::out_of_range("container: missing int array '" + name + "'");
}

bool Container::has_float(const std::string& name) const {
    for (const auto& [n, t] : floats)
        if (n == name) return true;
    return false;
}

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
    uint64_t h = seed;
    const auto* p = (const uint8_t*)data;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string content_hash(const Container& c) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : c.floats) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t.data(), sizeof(float) * t.numel(), h);
    }
    for (const auto& [name, t] : c.ints) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t.data(), sizeof(int32_t) * t.numel(), h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

namespace {

struct File {
    FILE* fp;
    explicit File(FILE* f) : fp(f) {}
    ~File() {
        if (fp) std::fclose(fp);
    }
};

void write_bytes(FILE* fp, const void* p, size_t n) {
    if (std::fwrite(p, 1, n, fp) != n) throw std::runtime_error("container: short write");
}

void read_bytes(FILE* fp, void* p, size_t n) {
    if (std::fread(p, 1, n, fp) != n) throw std::runtime_error("container: short read");
}

void write_u64(FILE* fp, uint64_t v) { write_bytes(fp, &v, 8); }

uint64_t read_u64(FILE* fp) {
    uint64_t v;
    read_bytes(fp, &v, 8);
    return v;
}

void write_str(FILE* fp, const std::string& s) {
    write_u64(fp, s.size());
    write_bytes(fp, s.data(), s.size());
}

std::string read_str(FILE* fp) {
    const uint64_t n = read_u64(fp);
    if (n > (1ULL << 32)) throw std::runtime_error("container: corrupt string length");
    std::string s(n, '\0');
    read_bytes(fp, s.data(), n);
    return s;
}

template <typename T>
void write_array(FILE* fp, const std::string& name, const TensorT<T>& t, uint8_t dtype) {
    write_str(fp, name);
    write_bytes(fp, &dtype, 1);
    write_u64(fp, t.ndim());
    for (int i = 0; i < t.ndim(); ++i) write_u64(fp, (uint64_t)t.dim(i));
    write_bytes(fp, t.data(), sizeof(T) * t.numel());
}

}  // namespace

void save(const std::string& path, Container& c) {
    c.meta["content_hash"] = content_hash(c);
    File f(std::fopen(path.c_str(), "wb"));
    if (!f.fp) throw std::runtime_error("cannot write " + path);
    write_bytes(f.fp, kMagic, 8);
    write_str(f.fp, c.meta.dump());
    write_u64(f.fp, c.floats.size() + c.ints.size());
    for (const auto& [name, t] : c.floats) write_array(f.fp, name, t, 0);
    for (const auto& [name, t] : c.ints) write_array(f.fp, name, t, 1);
}

Container load(const std::string& path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f.fp) throw std::runtime_error("cannot open " + path);
    char magic[8];
    read_bytes(f.fp, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + ": not an array container");
    Container c;
    c.meta = nlohmann::json::parse(read_str(f.fp));
    const uint64_t count = read_u64(f.fp);
    for (uint64_t a = 0; a < count; ++a) {
        const std::string name = read_str(f.fp);
        uint8_t dtype;
        read_bytes(f.fp, &dtype, 1);
        const uint64_t nd = read_u64(f.fp);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = (int)read_u64(f.fp);
        if (dtype == 0) {
            Tensor t(shape);
            read_bytes(f.fp, t.data(), sizeof(float) * t.numel());
            c.floats.emplace_back(name, std::move(t));
        } else if (dtype == 1) {
            ITensor t(shape);
            read_bytes(f.fp, t.data(), sizeof(int32_t) * t.numel());
            c.ints.emplace_back(name, std::move(t));
        } else {
            throw std::runtime_error("container: unknown dtype");
        }
    }
    return c;
}

}  // namespace df::ser
