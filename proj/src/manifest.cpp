#include "datum/core/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "datum/core/error.hpp"
#include "datum/core/png_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace datum {

std::string to_string(DomainTag tag) {
    switch (tag) {
        case DomainTag::source: return "source";
        case DomainTag::target: return "target";
        case DomainTag::prior: return "prior";
        case DomainTag::generated: return "generated";
    }
    throw Error("bad domain tag");
}

DomainTag domain_tag_from_string(const std::string& s) {
    if (s == "source") return DomainTag::source;
    if (s == "target") return DomainTag::target;
    if (s == "prior") return DomainTag::prior;
    if (s == "generated") return DomainTag::generated;
    throw Error("unknown domain tag: " + s);
}

void save_manifest(const DatasetManifest& m, const std::string& dir) {
    fs::create_directories(dir);
    json j;
    j["domain_tag"] = to_string(m.domain_tag);
    j["labeled"] = m.labeled;
    j["seed"] = m.seed;
    json items = json::array();
    for (const auto& it : m.items) {
        json ji;
        ji["image"] = it.image;
        ji["mask"] = it.mask.empty() ? json() : json(it.mask);
        ji["provenance"] = it.provenance;
        items.push_back(ji);
    }
    j["items"] = items;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir_or_file) {
    fs::path p(dir_or_file);
    if (fs::is_directory(p)) p /= "manifest.json";
    std::ifstream in(p);
    if (!in) throw IoError("cannot open manifest: " + p.string());
    json j;
    in >> j;

    DatasetManifest m;
    m.domain_tag = domain_tag_from_string(j.at("domain_tag").get<std::string>());
    m.labeled = j.at("labeled").get<bool>();
    m.seed = j.at("seed").get<std::int64_t>();
    for (const auto& ji : j.at("items")) {
        ManifestItem it;
        it.image = ji.at("image").get<std::string>();
        if (!ji.at("mask").is_null()) it.mask = ji.at("mask").get<std::string>();
        it.provenance = ji.value("provenance", "");
        if (m.labeled && it.mask.empty())
            throw Error("labeled manifest has an item without a mask: " + it.image);
        m.items.push_back(std::move(it));
    }
    m.root = p.parent_path().string();
    return m;
}

namespace {

DatasetReader::MaskAuditHook& mask_audit_hook() {
    static DatasetReader::MaskAuditHook hook;
    return hook;
}

LabeledImage decode_image(const std::string& path) {
    PngImage png = read_png(path);
    if (png.channels != 3) throw IoError("expected RGB image: " + path);
    LabeledImage img(png.height, png.width);
    for (int i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            img.pixels(c, i) = dequantize_channel(png.data[static_cast<std::size_t>(i) * 3 + c]);
    return img;
}

}  // namespace

void DatasetReader::set_mask_audit(MaskAuditHook hook) { mask_audit_hook() = std::move(hook); }

LabeledImage DatasetReader::load_image(std::size_t index) const {
    const auto& it = manifest_.items.at(index);
    return decode_image((fs::path(manifest_.root) / it.image).string());
}

MaskArray DatasetReader::load_mask(std::size_t index) const {
    const auto& it = manifest_.items.at(index);
    if (it.mask.empty()) throw Error("item has no mask: " + it.image);
    if (mask_audit_hook()) mask_audit_hook()(manifest_, index);
    PngImage png = read_png((fs::path(manifest_.root) / it.mask).string());
    if (png.channels != 1) throw IoError("expected single-channel mask: " + it.mask);
    MaskArray mask(png.width * png.height);
    for (std::size_t i = 0; i < png.data.size(); ++i) mask[static_cast<Eigen::Index>(i)] = png.data[i];
    return mask;
}

LabeledImage DatasetReader::load_labeled(std::size_t index) const {
    LabeledImage img = load_image(index);
    img.mask = load_mask(index);
    if (img.mask.size() != img.pixel_count())
        throw Error("mask dimensions disagree with image: " + manifest_.items.at(index).image);
    img.labeled = true;
    return img;
}

// Provenance is ';'-separated "key=value" fields; values may contain spaces.
std::string provenance_value(const std::string& provenance, const std::string& key) {
    std::size_t pos = 0;
    const std::string pattern = key + "=";
    while (pos < provenance.size()) {
        std::size_t hit = provenance.find(pattern, pos);
        if (hit == std::string::npos) return "";
        if (hit == 0 || provenance[hit - 1] == ';') {
            std::size_t start = hit + pattern.size();
            std::size_t end = provenance.find(';', start);
            return provenance.substr(start, end == std::string::npos ? std::string::npos : end - start);
        }
        pos = hit + 1;
    }
    return "";
}

}  // namespace datum
