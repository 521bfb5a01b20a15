#include "medart/archive.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace medart {

namespace {
constexpr char kMagic[8] = {'M', 'E', 'D', 'A', 'R', 'T', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("archive: unexpected end of file");
    return v;
}

std::string get_bytes(std::istream& is, uint64_t n) {
    if (n > (1ULL << 32)) throw std::runtime_error("archive: implausible field length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("archive: unexpected end of file");
    return s;
}
}  // namespace

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void write_archive(const std::string& path, const Archive& ar) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, kArchiveVersion);
    const std::string meta = ar.meta.dump();
    put<uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<uint64_t>(os, ar.tensors.size());
    for (const auto& [name, t] : ar.tensors) {
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
        for (auto d : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(d));
        const auto v = t.data();
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Archive read_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint archive: " + path);
    const auto version = get<uint32_t>(is);
    if (version != kArchiveVersion)
        throw std::runtime_error("unsupported archive version " + std::to_string(version));
    Archive ar;
    ar.meta = nlohmann::ordered_json::parse(get_bytes(is, get<uint64_t>(is)));
    const auto count = get<uint64_t>(is);
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = get_bytes(is, get<uint32_t>(is));
        const auto ndim = get<uint32_t>(is);
        Shape shape;
        for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int64_t>(get<uint64_t>(is)));
        std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
        is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!is) throw std::runtime_error("archive: truncated tensor " + name);
        ar.tensors.emplace_back(std::move(name), Tensor::from(shape, std::move(values)));
    }
    return ar;
}

}  // namespace medart
