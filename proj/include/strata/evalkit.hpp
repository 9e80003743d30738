#pragma once

// Frechet feature distance, codebook census, code sampling and k-nearest reconstructions.

#include "strata/datagen.hpp"
#include "strata/vqmodel.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace strata::eval {

using Vec = std::vector<double>;

struct FIDResult {
    Vec mu_a;
    Vec mu_b;
    double trace_term = 0;
    double value = 0;
    std::string feature_net_id;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    bool shrinkage = false;  // eps*I added because a set had fewer than D+1 samples
};

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}) with unbiased covariances.
FIDResult frechet_distance(const std::vector<Vec>& a, const std::vector<Vec>& b, const std::string& feature_net_id = "");

/// Pooled final-stage features, one vector per image.
std::vector<Vec> extract_features(const std::vector<Image>& images, vq::FeatureNet& featnet, int batch_size = 64);

struct CodebookStats {
    int k = 0;
    std::vector<std::int64_t> counts;               // per index
    std::vector<int> utilized;                      // ascending
    std::vector<std::pair<int, std::int64_t>> top;  // by count desc, ties by index
    std::int64_t total_cells = 0;
};

CodebookStats tally_codes(const torch::Tensor& indices, int k, std::size_t top_n = 25);
/// Quantized code grids [N,h,w] for images, batched.
torch::Tensor codes_for(vq::VQModel& vq, const std::vector<Image>& images, int batch_size = 64);
CodebookStats codebook_stats(const DatasetManifest& manifest, vq::VQModel& vq, Split split, std::size_t top_n = 25);

/// Uniformly random grid over `pool`, decoded.
Image sample_from_codes(vq::VQModel& vq, const std::vector<int>& pool, int grid_h, int grid_w, std::uint64_t seed);
vq::CodeGrid random_code_grid(const std::vector<int>& pool, int grid_h, int grid_w, int k, std::uint64_t seed);

/// Per cell the rank-th nearest codebook row (rank 1 = ordinary quantization), decoded.
Image knearest_reconstruct(vq::VQModel& vq, const Image& x, int rank);
vq::CodeGrid knearest_codes(vq::VQModel& vq, const Image& x, int rank);

double mean_abs_diff(const Image& a, const Image& b);

}  // namespace strata::eval
