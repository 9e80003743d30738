#pragma once

// Concept vectors from linear probes on flat latents, traversals, interpolation
// and 2-D projection.

#include "strata/datagen.hpp"
#include "strata/featmap.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace strata::concepts {

using Vec = std::vector<double>;

struct ProbeMetrics {
    int n_pos = 0;
    int n_neg = 0;
    int true_pos = 0;
    int true_neg = 0;
    double accuracy = 0;
    double sensitivity = 0;
    double specificity = 0;

    static ProbeMetrics from_counts(int n_pos, int n_neg, int true_pos, int true_neg);
};

struct ConceptVector {
    std::string name;
    Vec direction;  // unit norm
    double bias = 0;
    double spread = 0;  // std of direction . w over the fitting population
    std::map<std::string, ProbeMetrics> metrics;  // keyed by split name

    std::size_t dim() const { return direction.size(); }
    /// direction . w + bias; positive means the concept is predicted present.
    double score(const Vec& w) const;
};

struct FitOptions {
    double C = 1.0;  // inverse L2 strength; the intercept is not penalised
    int max_iter = 100;
    double tol = 1e-10;
};

/// L2-regularised logistic regression, positive class = `w_pos`. The direction is the
/// normalised coefficient vector and the bias is rescaled by the same norm, so the sign
/// of score() equals the classifier decision.
ConceptVector fit_concept(const std::string& name, const std::vector<Vec>& w_pos, const std::vector<Vec>& w_neg,
                          const FitOptions& opts = {});

ProbeMetrics evaluate_probe(const ConceptVector& c, const std::vector<Vec>& w_pos, const std::vector<Vec>& w_neg);

/// w + alpha_i * direction, in the given order.
std::vector<Vec> traverse(const Vec& w, const ConceptVector& c, const std::vector<double>& alphas);

/// (1-t) w_a + t w_b for t evenly spaced over [0,1]; endpoints exact.
std::vector<Vec> interpolate(const Vec& w_a, const Vec& w_b, int steps);

struct Point2 {
    double x = 0;
    double y = 0;
};

/// Principal-component projection onto the top two components (centred data).
/// Component signs are fixed so the largest-magnitude loading is positive.
std::vector<Point2> project_2d(const std::vector<Vec>& ws);

/// One file per concept, line-oriented key=value text.
void save_concept(const ConceptVector& c, const std::filesystem::path& path);
ConceptVector load_concept(const std::filesystem::path& path);

/// Flat latents for every record of a manifest.
struct LatentTable {
    std::vector<SampleRecord> records;
    std::vector<Vec> w;
};
LatentTable compute_latents(const DatasetManifest& manifest, vq::VQModel& vq, fae::FeatureAutoencoder& fae);

/// Fits one concept per rule on the training split and reports metrics on every split.
std::vector<ConceptVector> fit_all(const LatentTable& table, const FitOptions& opts = {});
ConceptVector fit_named(const LatentTable& table, const std::string& name, const FitOptions& opts = {});

/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace strata::concepts
