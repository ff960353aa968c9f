#ifndef DATUM_CORE_MANIFEST_HPP
#define DATUM_CORE_MANIFEST_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "datum/core/image.hpp"

namespace datum {

enum class DomainTag { source, target, prior, generated };

std::string to_string(DomainTag tag);
DomainTag domain_tag_from_string(const std::string& s);

struct ManifestItem {
    std::string image;       // path relative to the manifest directory
    std::string mask;        // empty when unlabeled
    std::string provenance;  // "key=value" fields joined by ';'
};

// On-disk index of a dataset; images and masks are PNGs next to it.
struct DatasetManifest {
    DomainTag domain_tag = DomainTag::source;
    bool labeled = false;
    std::int64_t seed = 0;
    std::vector<ManifestItem> items;
    std::string root;  // directory the manifest was loaded from / saved to

    std::size_t size() const { return items.size(); }
};

void save_manifest(const DatasetManifest& m, const std::string& dir);
DatasetManifest load_manifest(const std::string& dir_or_file);

// Loader with an access audit: every mask read is reported, so training code
// can prove it never touched labels it was not supposed to see.
class DatasetReader {
public:
    using MaskAuditHook = std::function<void(const DatasetManifest&, std::size_t index)>;

    explicit DatasetReader(DatasetManifest manifest) : manifest_(std::move(manifest)) {}

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return manifest_.items.size(); }

    LabeledImage load_image(std::size_t index) const;          // pixels only
    LabeledImage load_labeled(std::size_t index) const;        // pixels + mask
    MaskArray load_mask(std::size_t index) const;

    static void set_mask_audit(MaskAuditHook hook);  // process-wide, test instrumentation

private:
    DatasetManifest manifest_;
};

// Parse "key=value" pairs out of a provenance string; returns empty if absent.
std::string provenance_value(const std::string& provenance, const std::string& key);

}  // namespace datum

#endif
