#include "strata/evalkit.hpp"

#include "strata/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace strata::eval {

namespace {

Eigen::MatrixXd to_matrix(const std::vector<Vec>& v, std::size_t D, const char* which) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i].size() != D) throw std::invalid_argument(std::string("frechet_distance: ") + which + " has mixed dimensions");
        for (std::size_t j = 0; j < D; ++j) {
            if (!std::isfinite(v[i][j])) throw std::invalid_argument(std::string("frechet_distance: ") + which + " has non-finite features");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j];
        }
    }
    return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& X, const Eigen::VectorXd& mu, bool& shrunk) {
    const auto n = X.rows();
    const auto D = X.cols();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(D, D);
    if (n > 1) {
        const Eigen::MatrixXd C = X.rowwise() - mu.transpose();
        S = C.transpose() * C / static_cast<double>(n - 1);
    }
    if (n < D + 1) {
        const double tr = S.trace();
        const double eps = 1e-6 * (tr > 0 ? tr : 1.0) / static_cast<double>(D);
        S.diagonal().array() += eps;
        shrunk = true;
    }
    return 0.5 * (S + S.transpose());
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    Eigen::VectorXd ev = eig.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 0 ? std::sqrt(ev(i)) : 0.0;
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FIDResult frechet_distance(const std::vector<Vec>& a, const std::vector<Vec>& b, const std::string& feature_net_id) {
    if (a.empty() || b.empty()) throw std::invalid_argument("frechet_distance: empty feature set");
    const std::size_t D = a.front().size();
    if (D == 0 || b.front().size() != D) throw std::invalid_argument("frechet_distance: feature dimensions differ");
    const auto A = to_matrix(a, D, "set a");
    const auto B = to_matrix(b, D, "set b");
    const Eigen::VectorXd mu_a = A.colwise().mean().transpose();
    const Eigen::VectorXd mu_b = B.colwise().mean().transpose();
    FIDResult r;
    const auto Sa = covariance(A, mu_a, r.shrinkage);
    const auto Sb = covariance(B, mu_b, r.shrinkage);

    // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}), the latter symmetric PSD.
    const auto ra = sqrt_psd(Sa);
    Eigen::MatrixXd M = ra * Sb * ra;
    M = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
    double tr_sqrt = 0;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
        const double ev = eig.eigenvalues()(i);
        if (ev < -1e-8 * std::max(1.0, M.trace())) throw std::runtime_error("frechet_distance: covariance product is not PSD");
        tr_sqrt += ev > 0 ? std::sqrt(ev) : 0.0;
    }
    r.trace_term = Sa.trace() + Sb.trace() - 2.0 * tr_sqrt;
    const double mean_term = (mu_a - mu_b).squaredNorm();
    r.value = std::max(0.0, mean_term + r.trace_term);
    r.mu_a.assign(mu_a.data(), mu_a.data() + mu_a.size());
    r.mu_b.assign(mu_b.data(), mu_b.data() + mu_b.size());
    r.feature_net_id = feature_net_id;
    r.n_a = a.size();
    r.n_b = b.size();
    return r;
}

std::vector<Vec> extract_features(const std::vector<Image>& images, vq::FeatureNet& featnet, int batch_size) {
    std::vector<Vec> out;
    if (images.empty()) return out;
    torch::NoGradGuard guard;
    featnet->eval();
    for (std::size_t s = 0; s < images.size(); s += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(images.size() - s, static_cast<std::size_t>(batch_size));
        auto f = featnet->pooled(nn::images_to_tensor(std::span<const Image>(images).subspan(s, n)))
                     .to(torch::kFloat64)
                     .contiguous();
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = f.data_ptr<double>() + static_cast<std::int64_t>(i) * f.size(1);
            out.emplace_back(p, p + f.size(1));
        }
    }
    return out;
}

CodebookStats tally_codes(const torch::Tensor& indices, int k, std::size_t top_n) {
    CodebookStats s;
    s.k = k;
    s.counts.assign(static_cast<std::size_t>(k), 0);
    auto flat = indices.reshape({-1}).to(torch::kInt64).contiguous();
    const auto* p = flat.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
        if (p[i] < 0 || p[i] >= k) throw std::invalid_argument("tally_codes: index outside the codebook");
        ++s.counts[static_cast<std::size_t>(p[i])];
    }
    s.total_cells = flat.numel();
    for (int i = 0; i < k; ++i) {
        if (s.counts[static_cast<std::size_t>(i)] > 0) {
            s.utilized.push_back(i);
            s.top.emplace_back(i, s.counts[static_cast<std::size_t>(i)]);
        }
    }
    std::stable_sort(s.top.begin(), s.top.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (s.top.size() > top_n) s.top.resize(top_n);
    return s;
}

torch::Tensor codes_for(vq::VQModel& vq, const std::vector<Image>& images, int batch_size) {
    if (images.empty()) throw std::invalid_argument("codes_for: no images");
    torch::NoGradGuard guard;
    vq->eval();
    std::vector<torch::Tensor> parts;
    for (std::size_t s = 0; s < images.size(); s += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(images.size() - s, static_cast<std::size_t>(batch_size));
        parts.push_back(vq->quantize(vq->encode(nn::images_to_tensor(std::span<const Image>(images).subspan(s, n)))).indices);
    }
    return torch::cat(parts, 0);
}

CodebookStats codebook_stats(const DatasetManifest& manifest, vq::VQModel& vq, Split split, std::size_t top_n) {
    const auto images = load_images(manifest, load_split(manifest, split));
    if (images.empty()) throw std::invalid_argument("codebook_stats: split is empty");
    return tally_codes(codes_for(vq, images), vq->config().k, top_n);
}

vq::CodeGrid random_code_grid(const std::vector<int>& pool, int grid_h, int grid_w, int k, std::uint64_t seed) {
    if (pool.empty()) throw std::invalid_argument("sample_from_codes: index pool is empty");
    for (int i : pool)
        if (i < 0 || i >= k) throw std::invalid_argument("sample_from_codes: pool index " + std::to_string(i) + " outside [0, k)");
    if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("sample_from_codes: grid must be non-empty");
    Rng rng(seed);
    vq::CodeGrid g{grid_h, grid_w, {}};
    for (int i = 0; i < grid_h * grid_w; ++i)
        g.indices.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    return g;
}

Image sample_from_codes(vq::VQModel& vq, const std::vector<int>& pool, int grid_h, int grid_w, std::uint64_t seed) {
    const auto g = random_code_grid(pool, grid_h, grid_w, vq->config().k, seed);
    torch::NoGradGuard guard;
    vq->eval();
    // The decoder is fully convolutional apart from attention, so any grid size decodes.
    auto z = vq::lookup(vq::from_code_grids(std::span<const vq::CodeGrid>(&g, 1)), vq->codebook);
    return nn::tensor_to_image(vq->decoder(z));
}

vq::CodeGrid knearest_codes(vq::VQModel& vq, const Image& x, int rank) {
    torch::NoGradGuard guard;
    vq->eval();
    return vq::to_code_grids(vq::nearest_indices(vq->encode(nn::image_to_tensor(x)), vq->codebook, rank))[0];
}

Image knearest_reconstruct(vq::VQModel& vq, const Image& x, int rank) {
    return vq::decode_codes(vq, knearest_codes(vq, x, rank));
}

double mean_abs_diff(const Image& a, const Image& b) {
    if (a.height() != b.height() || a.width() != b.width()) throw std::invalid_argument("mean_abs_diff: size mismatch");
    double s = 0;
    const auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < va.size(); ++i) s += std::abs(va[i] - vb[i]);
    return s / static_cast<double>(va.size());
}

}  // namespace strata::eval
