#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"
#include "typocirc/datakit.hpp"
#include "typocirc/safetensors.hpp"

namespace typocirc {

using nlohmann::ordered_json;

int RegionMask::count() const {
    return static_cast<int>(std::count_if(flags.begin(), flags.end(), [](std::uint8_t f) { return f != 0; }));
}

RegionMask fixed_bottom_mask(int grid, int rows, int cols) {
    if (cols == 0) cols = grid;
    if (rows < 1 || cols < 1 || rows > grid || cols > grid)
        throw Error("region " + std::to_string(rows) + "x" + std::to_string(cols) + " does not fit a " +
                    std::to_string(grid) + "x" + std::to_string(grid) + " token grid");
    RegionMask m;
    m.flags.assign(static_cast<std::size_t>(grid * grid), 0);
    const int x0 = (grid - cols) / 2;
    for (int r = grid - rows; r < grid; ++r)
        for (int c = x0; c < x0 + cols; ++c) m.flags[static_cast<std::size_t>(r * grid + c)] = 1;
    return m;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = 14695981039346656037ull ^ (seed * 0x9e3779b97f4a7c15ull);
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    const auto nc = static_cast<int>(class_names.size());
    for (const auto& e : entries) {
        if (!ids.insert(e.id).second) throw Error("duplicate sample id '" + e.id + "' in manifest");
        if (e.y_image < 0 || (nc > 0 && e.y_image >= nc))
            throw Error("sample '" + e.id + "' has y_image " + std::to_string(e.y_image) + " outside the class list");
        if (tokens > 0 && static_cast<int>(e.mask.flags.size()) != tokens)
            throw Error("sample '" + e.id + "' mask has " + std::to_string(e.mask.flags.size()) + " flags, expected " +
                        std::to_string(tokens));
        if (e.y_typo.has_value() != e.mask.any())
            throw Error("sample '" + e.id + "' must carry y_typo exactly when its mask is non-empty");
        if (e.y_typo && (*e.y_typo < 0 || *e.y_typo >= static_cast<int>(typo_class_names.size())))
            throw Error("sample '" + e.id + "' has y_typo outside the typo class list");
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = ordered_json::parse(line);
            if (j.contains("class_names")) {
                m.class_names = j.at("class_names").get<std::vector<std::string>>();
                m.typo_class_names = j.value("typo_class_names", std::vector<std::string>{});
                m.tokens = j.value("tokens", 0);
                have_header = true;
                continue;
            }
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.tensor_path = j.at("tensor_path").get<std::string>();
            e.y_image = j.at("y_image").get<int>();
            if (j.contains("y_typo") && !j.at("y_typo").is_null()) e.y_typo = j.at("y_typo").get<int>();
            for (int f : j.at("mask").get<std::vector<int>>()) {
                if (f != 0 && f != 1) throw Error("mask flags must be 0 or 1");
                e.mask.flags.push_back(static_cast<std::uint8_t>(f));
            }
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw Error("manifest " + path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
        } catch (const Error& ex) {
            throw Error("manifest " + path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    if (!have_header) throw Error("manifest " + path.string() + " has no header line with class_names");
    m.validate();
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    m.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    ordered_json header;
    header["class_names"] = m.class_names;
    header["typo_class_names"] = m.typo_class_names;
    header["tokens"] = m.tokens;
    out << header.dump() << '\n';
    for (const auto& e : m.entries) {
        ordered_json j;
        j["id"] = e.id;
        j["tensor_path"] = e.tensor_path;
        j["y_image"] = e.y_image;
        j["y_typo"] = e.y_typo ? ordered_json(*e.y_typo) : ordered_json(nullptr);
        std::vector<int> flags(e.mask.flags.begin(), e.mask.flags.end());
        j["mask"] = flags;
        out << j.dump() << '\n';
    }
    if (!out) throw Error("failed while writing manifest " + path.string());
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = read_manifest(manifest_path);
    std::map<std::string, TensorFile> shards;
    ds.images.reserve(ds.manifest.size());
    for (const auto& e : ds.manifest.entries) {
        auto it = shards.find(e.tensor_path);
        if (it == shards.end())
            it = shards.emplace(e.tensor_path, read_safetensors(ds.manifest.base_dir / e.tensor_path)).first;
        const auto name = "img." + e.id;
        auto t = it->second.tensors.find(name);
        if (t == it->second.tensors.end())
            throw Error("tensor '" + name + "' not found in " + (ds.manifest.base_dir / e.tensor_path).string());
        ds.images.push_back(t->second);
    }
    return ds;
}

Dataset permuted(const Dataset& ds, std::span<const std::size_t> order) {
    if (order.size() != ds.size()) throw Error("permutation length does not match dataset size");
    Dataset out;
    out.manifest = ds.manifest;
    out.manifest.entries.clear();
    for (auto i : order) {
        out.manifest.entries.push_back(ds.manifest.entries.at(i));
        out.images.push_back(ds.images.at(i));
    }
    return out;
}

Dataset control_split(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("control fraction must lie in (0, 1]");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.manifest.entries[i].y_image].push_back(i);
    std::vector<std::size_t> keep;
    std::mt19937_64 rng(seed);
    for (auto& [cls, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(take, idx.size())));
    }
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.manifest = ds.manifest;
    out.manifest.entries.clear();
    for (auto i : keep) {
        out.manifest.entries.push_back(ds.manifest.entries[i]);
        out.images.push_back(ds.images[i]);
    }
    return out;
}

void ClassPrototypes::validate() const {
    if (matrix.rank() != 2 || matrix.rows() < 1) throw Error("prototypes must be a non-empty [classes, e] matrix");
    check_finite(matrix, "prototypes");
    for (std::int64_t r = 0; r < matrix.rows(); ++r) {
        double ss = 0.0;
        for (float v : matrix.row(r)) ss += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-6)
            throw Error("prototype row " + std::to_string(r) + " is not unit norm");
    }
}

ClassPrototypes load_prototypes(const std::filesystem::path& path) {
    auto f = read_safetensors(path);
    auto it = f.tensors.find("prototypes");
    if (it == f.tensors.end()) throw Error("missing tensor 'prototypes' in " + path.string());
    ClassPrototypes p{it->second};
    p.validate();
    return p;
}

void save_prototypes(const std::filesystem::path& path, const ClassPrototypes& p) {
    p.validate();
    write_safetensors(path, {{"prototypes", p.matrix}});
}

}  // namespace typocirc
