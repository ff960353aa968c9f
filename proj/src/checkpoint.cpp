#include "datum/core/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "datum/core/error.hpp"

namespace fs = std::filesystem;

namespace datum {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'U', 'M', 'W', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

template <typename T>
void put(std::ofstream& out, T v) {
    // Host is little-endian on every supported target.
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated weights container");
    return v;
}

}  // namespace

void save_weights(const std::string& dir, const NamedTensors& tensors) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!out) throw IoError("cannot write weights in " + dir);
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, blob] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, kDtypeF32);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.shape.size()));
        std::int64_t count = 1;
        for (std::int64_t d : blob.shape) {
            put<std::int64_t>(out, d);
            count *= d;
        }
        if (count != static_cast<std::int64_t>(blob.data.size()))
            throw Error("tensor '" + name + "' shape does not match its data length");
        put<std::int64_t>(out, count * static_cast<std::int64_t>(sizeof(float)));
        out.write(reinterpret_cast<const char*>(blob.data.data()),
                  static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("write failure in " + dir);
}

NamedTensors load_weights(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!in) throw IoError("cannot open weights in " + dir);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a weights container: " + dir);
    std::uint32_t version = get<std::uint32_t>(in);
    if (version != kVersion) throw IoError("unsupported weights version in " + dir);
    std::uint32_t count = get<std::uint32_t>(in);
    NamedTensors tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t dtype = get<std::uint32_t>(in);
        if (dtype != kDtypeF32) throw IoError("unsupported dtype in " + dir);
        std::uint32_t ndim = get<std::uint32_t>(in);
        TensorBlob blob;
        std::int64_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            blob.shape.push_back(get<std::int64_t>(in));
            n *= blob.shape.back();
        }
        std::int64_t byte_len = get<std::int64_t>(in);
        if (byte_len != n * static_cast<std::int64_t>(sizeof(float)))
            throw IoError("corrupt tensor '" + name + "' in " + dir);
        blob.data.resize(static_cast<std::size_t>(n));
        in.read(reinterpret_cast<char*>(blob.data.data()), byte_len);
        if (!in) throw IoError("truncated tensor '" + name + "' in " + dir);
        tensors.emplace(std::move(name), std::move(blob));
    }
    return tensors;
}

void save_meta(const std::string& dir, const std::string& meta_json_text) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "meta.json");
    if (!out) throw IoError("cannot write meta in " + dir);
    out << meta_json_text;
    if (meta_json_text.empty() || meta_json_text.back() != '\n') out << "\n";
}

std::string load_meta_text(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "meta.json");
    if (!in) throw IoError("cannot open meta in " + dir);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool checkpoint_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "weights.bin") && fs::exists(fs::path(dir) / "meta.json");
}

}  // namespace datum
