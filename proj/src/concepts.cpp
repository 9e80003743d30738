#include "strata/concepts.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace strata::concepts {

namespace {

void check_dims(const std::vector<Vec>& ws, std::size_t D, const char* what) {
    for (const auto& w : ws) {
        if (w.size() != D) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
        for (double v : w)
            if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
}

bool all_identical(const std::vector<Vec>& ws) {
    return std::all_of(ws.begin(), ws.end(), [&](const Vec& w) { return w == ws.front(); });
}

double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

double log1pexp(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

}  // namespace

ProbeMetrics ProbeMetrics::from_counts(int n_pos, int n_neg, int tp, int tn) {
    ProbeMetrics m;
    m.n_pos = n_pos;
    m.n_neg = n_neg;
    m.true_pos = tp;
    m.true_neg = tn;
    m.accuracy = n_pos + n_neg > 0 ? static_cast<double>(tp + tn) / (n_pos + n_neg) : 0.0;
    m.sensitivity = n_pos > 0 ? static_cast<double>(tp) / n_pos : 0.0;
    m.specificity = n_neg > 0 ? static_cast<double>(tn) / n_neg : 0.0;
    return m;
}

double ConceptVector::score(const Vec& w) const {
    if (w.size() != direction.size()) {
        throw std::invalid_argument("concept '" + name + "': w has dimension " + std::to_string(w.size()) +
                                    ", expected " + std::to_string(direction.size()));
    }
    return dot(direction, w) + bias;
}

ConceptVector fit_concept(const std::string& name, const std::vector<Vec>& w_pos, const std::vector<Vec>& w_neg,
                          const FitOptions& opts) {
    if (w_pos.empty()) throw std::invalid_argument("fit_concept '" + name + "': positive class is empty");
    if (w_neg.empty()) throw std::invalid_argument("fit_concept '" + name + "': negative class is empty");
    const std::size_t D = w_pos.front().size();
    if (D == 0) throw std::invalid_argument("fit_concept '" + name + "': zero-dimensional input");
    check_dims(w_pos, D, "fit_concept positive class");
    check_dims(w_neg, D, "fit_concept negative class");
    if (w_pos.size() > 1 && all_identical(w_pos))
        throw std::invalid_argument("fit_concept '" + name + "': positive class inputs are all identical");
    if (w_neg.size() > 1 && all_identical(w_neg))
        throw std::invalid_argument("fit_concept '" + name + "': negative class inputs are all identical");

    const auto n = static_cast<Eigen::Index>(w_pos.size() + w_neg.size());
    const auto P = static_cast<Eigen::Index>(D + 1);
    Eigen::MatrixXd X(n, P);
    Eigen::VectorXd y(n);
    Eigen::Index r = 0;
    for (const auto* set : {&w_pos, &w_neg}) {
        const double label = set == &w_pos ? 1.0 : -1.0;
        for (const auto& w : *set) {
            for (std::size_t j = 0; j < D; ++j) X(r, static_cast<Eigen::Index>(j)) = w[j];
            X(r, P - 1) = 1.0;
            y(r) = label;
            ++r;
        }
    }

    // Newton iterations on 0.5|beta|^2 + C sum log(1 + exp(-y (X theta))), intercept unpenalised.
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd reg = Eigen::VectorXd::Ones(P);
    reg(P - 1) = 0.0;
    auto objective = [&](const Eigen::VectorXd& t) {
        const Eigen::VectorXd m = (X * t).cwiseProduct(y);
        double loss = 0;
        for (Eigen::Index i = 0; i < n; ++i) loss += log1pexp(-m(i));
        return 0.5 * t.cwiseProduct(reg).squaredNorm() + opts.C * loss;
    };
    double f = objective(theta);
    for (int it = 0; it < opts.max_iter; ++it) {
        const Eigen::VectorXd m = (X * theta).cwiseProduct(y);
        Eigen::VectorXd coef(n), wdiag(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double s = sigmoid(-m(i));
            coef(i) = -opts.C * y(i) * s;
            wdiag(i) = opts.C * s * (1.0 - s);
        }
        const Eigen::VectorXd grad = theta.cwiseProduct(reg) + X.transpose() * coef;
        Eigen::MatrixXd H = X.transpose() * wdiag.asDiagonal() * X;
        H.diagonal() += reg;
        H.diagonal().array() += 1e-12;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        double t = 1.0;
        Eigen::VectorXd next = theta - step;
        double fn = objective(next);
        while (fn > f && t > 1e-10) {
            t *= 0.5;
            next = theta - t * step;
            fn = objective(next);
        }
        const double decrease = f - fn;
        theta = next;
        f = fn;
        if (grad.norm() < opts.tol * std::max(1.0, static_cast<double>(n)) || decrease < opts.tol) break;
    }

    const double norm = theta.head(P - 1).norm();
    if (!(norm > 0) || !std::isfinite(norm)) {
        throw std::invalid_argument("fit_concept '" + name + "': classes are indistinguishable (zero coefficients)");
    }
    ConceptVector c;
    c.name = name;
    c.direction.resize(D);
    for (std::size_t j = 0; j < D; ++j) c.direction[j] = theta(static_cast<Eigen::Index>(j)) / norm;
    c.bias = theta(P - 1) / norm;
    double s = 0, s2 = 0;
    for (const auto* set : {&w_pos, &w_neg})
        for (const auto& w : *set) {
            double proj = 0;
            for (std::size_t j = 0; j < D; ++j) proj += c.direction[j] * w[j];
            s += proj;
            s2 += proj * proj;
        }
    const double mean = s / static_cast<double>(n);
    c.spread = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
    c.metrics["train"] = evaluate_probe(c, w_pos, w_neg);
    return c;
}

ProbeMetrics evaluate_probe(const ConceptVector& c, const std::vector<Vec>& w_pos, const std::vector<Vec>& w_neg) {
    int tp = 0, tn = 0;
    for (const auto& w : w_pos) tp += c.score(w) > 0 ? 1 : 0;
    for (const auto& w : w_neg) tn += c.score(w) <= 0 ? 1 : 0;
    return ProbeMetrics::from_counts(static_cast<int>(w_pos.size()), static_cast<int>(w_neg.size()), tp, tn);
}

std::vector<Vec> traverse(const Vec& w, const ConceptVector& c, const std::vector<double>& alphas) {
    if (w.size() != c.direction.size()) throw std::invalid_argument("traverse: dimension mismatch");
    std::vector<Vec> out;
    out.reserve(alphas.size());
    for (double a : alphas) {
        Vec v(w);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] += a * c.direction[j];
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<Vec> interpolate(const Vec& w_a, const Vec& w_b, int steps) {
    if (steps < 2) throw std::invalid_argument("interpolate: steps must be >= 2");
    if (w_a.size() != w_b.size()) throw std::invalid_argument("interpolate: dimension mismatch");
    std::vector<Vec> out;
    for (int i = 0; i < steps; ++i) {
        if (i == 0) {
            out.push_back(w_a);
            continue;
        }
        if (i == steps - 1) {
            out.push_back(w_b);
            continue;
        }
        const double t = static_cast<double>(i) / (steps - 1);
        Vec v(w_a.size());
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = (1.0 - t) * w_a[j] + t * w_b[j];
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<Point2> project_2d(const std::vector<Vec>& ws) {
    if (ws.size() < 3) throw std::invalid_argument("project_2d: needs at least 3 points");
    const std::size_t D = ws.front().size();
    check_dims(ws, D, "project_2d");
    const auto n = static_cast<Eigen::Index>(ws.size());
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(D));
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t j = 0; j < D; ++j) X(i, static_cast<Eigen::Index>(j)) = ws[static_cast<std::size_t>(i)][j];
    const Eigen::RowVectorXd mean = X.colwise().mean();
    X.rowwise() -= mean;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(X.transpose() * X);
    const Eigen::Index P = static_cast<Eigen::Index>(D);
    Eigen::MatrixXd comps(P, 2);
    comps.setZero();
    for (int c = 0; c < 2 && c < P; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(P - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        comps.col(c) = v;
    }
    const Eigen::MatrixXd proj = X * comps;
    std::vector<Point2> out(ws.size());
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {proj(i, 0), proj(i, 1)};
    return out;
}

void save_concept(const ConceptVector& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write concept file: " + path.string());
    kv::Record head;
    head.set("name", c.name).set("D", c.dim()).set("bias", c.bias).set("spread", c.spread).set("direction", kv::join_doubles(c.direction));
    out << head.to_line() << '\n';
    for (const auto& [split, m] : c.metrics) {
        kv::Record r;
        r.set("split", split).set("n_pos", m.n_pos).set("n_neg", m.n_neg).set("true_pos", m.true_pos)
            .set("true_neg", m.true_neg).set("accuracy", m.accuracy).set("sensitivity", m.sensitivity)
            .set("specificity", m.specificity);
        out << r.to_line() << '\n';
    }
    if (!out) throw std::runtime_error("cannot write concept file: " + path.string());
}

ConceptVector load_concept(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read concept file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty concept file: " + path.string());
    const auto head = kv::Record::parse(line);
    ConceptVector c;
    c.name = head.get("name");
    c.bias = head.get_double("bias");
    c.spread = head.get_double("spread");
    c.direction = kv::parse_doubles(head.get("direction"));
    if (static_cast<long long>(c.direction.size()) != head.get_int("D")) {
        throw std::runtime_error("concept file " + path.string() + ": direction length does not match D");
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto r = kv::Record::parse(line);
        c.metrics[r.get("split")] = ProbeMetrics::from_counts(
            static_cast<int>(r.get_int("n_pos")), static_cast<int>(r.get_int("n_neg")),
            static_cast<int>(r.get_int("true_pos")), static_cast<int>(r.get_int("true_neg")));
    }
    return c;
}

LatentTable compute_latents(const DatasetManifest& manifest, vq::VQModel& vq, fae::FeatureAutoencoder& fae) {
    LatentTable t;
    t.records = manifest.records;
    const auto images = load_images(manifest, t.records);
    torch::NoGradGuard guard;
    vq->eval();
    fae->eval();
    const std::size_t bs = 64;
    for (std::size_t s = 0; s < images.size(); s += bs) {
        const auto n = std::min(bs, images.size() - s);
        auto w = fae->encode_w(vq->encode(nn::images_to_tensor(std::span<const Image>(images).subspan(s, n))))
                     .to(torch::kFloat64)
                     .contiguous();
        const auto D = w.size(1);
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = w.data_ptr<double>() + static_cast<std::int64_t>(i) * D;
            t.w.emplace_back(p, p + D);
        }
    }
    return t;
}

namespace {

void gather(const LatentTable& t, const std::string& name, Split split, std::vector<Vec>& pos, std::vector<Vec>& neg) {
    for (std::size_t i = 0; i < t.records.size(); ++i) {
        if (t.records[i].split != split) continue;
        switch (concept_label(name, t.records[i].params)) {
            case ConceptLabel::positive: pos.push_back(t.w[i]); break;
            case ConceptLabel::negative: neg.push_back(t.w[i]); break;
            case ConceptLabel::none: break;
        }
    }
}

}  // namespace

ConceptVector fit_named(const LatentTable& table, const std::string& name, const FitOptions& opts) {
    std::vector<Vec> pos, neg;
    gather(table, name, Split::train, pos, neg);
    auto c = fit_concept(name, pos, neg, opts);
    for (Split s : {Split::val, Split::test}) {
        std::vector<Vec> p, n;
        gather(table, name, s, p, n);
        if (!p.empty() || !n.empty()) c.metrics[std::string(to_string(s))] = evaluate_probe(c, p, n);
    }
    return c;
}

std::vector<ConceptVector> fit_all(const LatentTable& table, const FitOptions& opts) {
    std::vector<ConceptVector> out;
    for (const auto& rule : concept_rules()) out.push_back(fit_named(table, rule.name, opts));
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace strata::concepts
