#include "typocirc/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

namespace typocirc {

using nlohmann::json;

TensorFile read_safetensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open tensor file " + path.string());
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);

    std::uint64_t header_len = 0;
    if (file_size < 8 || !in.read(reinterpret_cast<char*>(&header_len), 8))
        throw Error("tensor file too short: " + path.string());
    if (header_len > file_size - 8) throw Error("corrupt safetensors header length in " + path.string());

    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    json h;
    try {
        h = json::parse(header);
    } catch (const json::exception& e) {
        throw Error("malformed safetensors header in " + path.string() + ": " + e.what());
    }
    if (!h.is_object()) throw Error("safetensors header is not an object in " + path.string());

    const std::uint64_t data_start = 8 + header_len;
    const std::uint64_t data_len = file_size - data_start;
    std::vector<char> blob(data_len);
    if (data_len && !in.read(blob.data(), static_cast<std::streamsize>(data_len)))
        throw Error("truncated tensor data in " + path.string());

    TensorFile out;
    for (auto it = h.begin(); it != h.end(); ++it) {
        if (it.key() == "__metadata__") {
            for (auto m = it->begin(); m != it->end(); ++m)
                out.metadata[m.key()] = m->is_string() ? m->get<std::string>() : m->dump();
            continue;
        }
        const auto& info = *it;
        try {
            const auto dtype = info.at("dtype").get<std::string>();
            if (dtype != "F32") throw Error("tensor '" + it.key() + "' has unsupported dtype " + dtype);
            auto shape = info.at("shape").get<std::vector<std::int64_t>>();
            auto offs = info.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offs.size() != 2 || offs[0] > offs[1] || offs[1] > data_len)
                throw Error("tensor '" + it.key() + "' has invalid data offsets");
            const auto count = static_cast<std::uint64_t>(shape_numel(shape));
            if (offs[1] - offs[0] != count * sizeof(float))
                throw Error("tensor '" + it.key() + "' byte length does not match shape " + shape_str(shape));
            std::vector<float> data(count);
            if (count) std::memcpy(data.data(), blob.data() + offs[0], count * sizeof(float));
            out.tensors.emplace(it.key(), Tensor(std::move(shape), std::move(data)));
        } catch (const json::exception& e) {
            throw Error("malformed header entry for tensor '" + it.key() + "': " + e.what());
        }
    }
    return out;
}

void write_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                       const std::map<std::string, std::string>& metadata) {
    json h = json::object();
    if (!metadata.empty()) {
        json m = json::object();
        for (const auto& [k, v] : metadata) m[k] = v;
        h["__metadata__"] = m;
    }
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::uint64_t bytes = t.data.size() * sizeof(float);
        h[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string header = h.dump();
    // Pad so the data section starts 8-byte aligned.
    while ((header.size() + 8) % 8 != 0) header.push_back(' ');

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write tensor file " + path.string());
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw Error("failed while writing tensor file " + path.string());
}

std::string tensor_map_digest(const TensorMap& tensors) {
    std::uint64_t h = 14695981039346656037ull;
    auto feed = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : tensors) {
        feed(name.data(), name.size());
        for (auto s : t.shape) feed(&s, sizeof(s));
        feed(t.data.data(), t.data.size() * sizeof(float));
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace typocirc
