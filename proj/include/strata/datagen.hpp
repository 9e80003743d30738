#pragma once

// Synthetic tri-band tissue-analog images (keratin / epidermis / dermis) with
// ground-truth parameters, grammar captions and deterministic splits.

#include "strata/image.hpp"
#include "strata/morphology.hpp"
#include "strata/textvocab.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace strata {

enum class Split { train, val, test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct SampleRecord {
    std::string id;
    std::string image_path;  // relative to the manifest directory
    Caption caption;
    MorphologyParams params;
    Split split = Split::train;
    bool flipped = false;
};

struct DatasetManifest {
    static constexpr int kVersion = 1;
    int version = kVersion;
    int image_size = 64;
    std::vector<SampleRecord> records;
    std::string vocabulary_path = "vocab.txt";
    std::filesystem::path base_dir;  // not serialized; where relative paths resolve

    std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
};

struct BandMetrics {
    int top_band_thickness = 0;
    double mid_band_irregularity = 0.0;
    double bottom_speckle_density = 0.0;

    friend bool operator==(const BandMetrics&, const BandMetrics&) = default;
};

/// Rows whose mean luminance exceeds this mark keratin.
inline constexpr float kKeratinLuminanceThreshold = 0.35f;

/// Renders the tissue analog. Throws on invalid parameters (e.g. thin together with thick)
/// or a size that is not a power of two >= 32.
std::pair<Image, Caption> generate_sample(const MorphologyParams& params, int size);

/// Draws parameters for sample `index` of a dataset. Thickness classes, styles, grades and
/// dermis states are balanced over `n` samples.
std::vector<MorphologyParams> sample_params(std::size_t n, int size, std::uint64_t seed);

/// Writes 2*n_unique PNGs (each sample and its left-right flip) plus manifest.txt.
DatasetManifest build_dataset(std::size_t n_unique, int size, std::uint64_t seed,
                              const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Records of one split ordered by id. Throws naming the path when an image is missing.
std::vector<SampleRecord> load_split(const DatasetManifest& manifest, Split split);

std::vector<Image> load_images(const DatasetManifest& manifest, const std::vector<SampleRecord>& records);

BandMetrics measure_bands(const Image& image);

/// Concept membership derived from ground-truth parameters. Each concept contrasts a
/// prototypical class (positive) against a contrastive one (negative):
///   keratin_thickness  thick keratin         vs thin keratin
///   parakeratosis      parakeratosis         vs basket weave
///   dysplasia          full thickness        vs mild dysplasia
///   solar_damage       solar damaged dermis  vs normal dermis
///   inflammation       inflamed dermis       vs normal dermis
/// Everything else is unlabelled for that concept.
enum class ConceptLabel { positive, negative, none };

struct ConceptRule {
    std::string name;
    std::string positive;  // human-readable class names
    std::string negative;
};

const std::vector<ConceptRule>& concept_rules();
ConceptLabel concept_label(std::string_view concept_name, const MorphologyParams& params);

}  // namespace strata
