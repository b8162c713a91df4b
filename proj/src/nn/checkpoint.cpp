#include "cfsynth/nn/checkpoint.hpp"

#include "cfsynth/error.hpp"

#include <cstring>
#include <fstream>

namespace cfs::nn {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'S', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
    return v;
}

std::string get_string(std::istream& is, const std::string& path) {
    const auto n = get<std::uint32_t>(is, path);
    if (n > (1u << 20)) throw std::runtime_error("corrupt string length in checkpoint " + path);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
    return s;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    const std::string meta = ckpt.metadata.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, ckpt.arrays.size());
    for (const auto& a : ckpt.arrays) {
        require(a.values.size() == numel(a.shape), "checkpoint array '" + a.name + "' has inconsistent size");
        put_string(os, a.name);
        put_string(os, a.group);
        put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) put<std::int64_t>(os, d);
        os.write(reinterpret_cast<const char*>(a.values.data()),
                 static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const std::string p = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInput("checkpoint not found: " + p);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw InvalidInput("not a checkpoint file: " + p);
    const auto version = get<std::uint32_t>(is, p);
    if (version != kCheckpointVersion)
        throw InvalidInput("unsupported checkpoint version " + std::to_string(version) + " in " + p);
    Checkpoint ckpt;
    const auto meta_len = get<std::uint64_t>(is, p);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(meta_len));
    ckpt.metadata = nlohmann::json::parse(meta);
    const auto count = get<std::uint64_t>(is, p);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = get_string(is, p);
        a.group = get_string(is, p);
        const auto r = get<std::uint32_t>(is, p);
        for (std::uint32_t k = 0; k < r; ++k) a.shape.push_back(static_cast<int>(get<std::int64_t>(is, p)));
        a.values.resize(numel(a.shape));
        is.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
        if (!is) throw std::runtime_error("truncated checkpoint " + p);
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

std::vector<NamedArray> export_params(const ParamStore& store) {
    std::vector<NamedArray> out;
    for (const auto& e : store.entries()) {
        out.push_back({e.name, e.group, e.value.shape(), {e.value.values().begin(), e.value.values().end()}});
    }
    return out;
}

void import_params(ParamStore& store, const Checkpoint& ckpt) {
    for (const auto& e : store.entries()) {
        const NamedArray* a = ckpt.find(e.name);
        require(a != nullptr, "checkpoint lacks parameter '" + e.name + "'");
        require(a->shape == e.value.shape(), "checkpoint parameter '" + e.name + "' has shape " + shape_str(a->shape) +
                                                 ", expected " + shape_str(e.value.shape()));
        Tensor t = e.value;
        std::copy(a->values.begin(), a->values.end(), t.mutable_values().begin());
    }
}

}  // namespace cfs::nn
