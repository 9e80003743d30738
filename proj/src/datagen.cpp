#include "strata/datagen.hpp"

#include "strata/kv.hpp"
#include "strata/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace strata {

namespace fs = std::filesystem;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw std::invalid_argument("bad Split");
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + std::string(s));
}

namespace {

struct Rgb {
    float r, g, b;
};

Rgb mix(Rgb a, Rgb b, float t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

// Working canvas in [0,1] RGB.
class Canvas {
public:
    explicit Canvas(int size) : size_(size), px_(static_cast<std::size_t>(size) * size, Rgb{1, 1, 1}) {}
    int size() const { return size_; }
    Rgb& at(int y, int x) { return px_[static_cast<std::size_t>(y) * size_ + x]; }

    // Filled ellipse clipped to rows [row_lo, row_hi).
    void ellipse(double cy, double cx, double ry, double rx, Rgb c, int row_lo, int row_hi) {
        const int y0 = std::max(row_lo, static_cast<int>(std::floor(cy - ry)));
        const int y1 = std::min(row_hi - 1, static_cast<int>(std::ceil(cy + ry)));
        const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
        const int x1 = std::min(size_ - 1, static_cast<int>(std::ceil(cx + rx)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dy = (y + 0.5 - cy) / ry;
                const double dx = (x + 0.5 - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) at(y, x) = c;
            }
    }

private:
    int size_;
    std::vector<Rgb> px_;
};

// Smooth lattice noise in [0,1].
class ValueNoise {
public:
    ValueNoise(std::uint64_t seed, double cell) : seed_(seed), cell_(cell) {}
    double operator()(double y, double x) const {
        const double fy = y / cell_, fx = x / cell_;
        const auto iy = static_cast<long long>(std::floor(fy)), ix = static_cast<long long>(std::floor(fx));
        const double ty = smooth(fy - iy), tx = smooth(fx - ix);
        const double a = lattice(iy, ix), b = lattice(iy, ix + 1), c = lattice(iy + 1, ix), d = lattice(iy + 1, ix + 1);
        return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }

private:
    static double smooth(double t) { return t * t * (3 - 2 * t); }
    double lattice(long long y, long long x) const {
        Rng r(seed_ ^ (static_cast<std::uint64_t>(y) * 0x9E3779B97F4A7C15ULL) ^
              (static_cast<std::uint64_t>(x) * 0xC2B2AE3D27D4EB4FULL));
        return r.uniform();
    }
    std::uint64_t seed_;
    double cell_;
};

int grade_index(DysplasiaGrade g) { return static_cast<int>(g); }

void render_keratin(Canvas& cv, const MorphologyParams& p, Rng& rng, double scale) {
    const int S = cv.size();
    const int t = p.keratin_thickness;
    const double ph = rng.uniform(0, 2 * std::numbers::pi);
    const double ph2 = rng.uniform(0, 2 * std::numbers::pi);

    // Each style has its own tint so it survives coarse reconstruction; all stay
    // well above the keratin luminance threshold.
    const Rgb pale{0.98f, 0.95f, 0.96f};
    const Rgb strand{0.95f, 0.80f, 0.88f};
    const Rgb pale_pk{0.90f, 0.98f, 1.00f};
    const Rgb strand_pk{0.66f, 0.90f, 0.98f};
    const Rgb compact{0.92f, 0.72f, 0.98f};
    const Rgb lamina{0.86f, 0.66f, 0.96f};
    const Rgb ortho{1.00f, 0.84f, 0.66f};
    const Rgb ortho_dark{0.98f, 0.76f, 0.56f};
    const Rgb nucleus{0.64f, 0.60f, 0.95f};
    const Rgb debris{0.90f, 0.88f, 0.56f};
    const Rgb debris_bg{0.96f, 0.95f, 0.70f};
    const Rgb fissure{0.62f, 0.94f, 0.76f};

    ValueNoise blot(rng.next(), 4.0 * scale);
    for (int y = 0; y < t; ++y) {
        for (int x = 0; x < S; ++x) {
            const double u = x / scale, v = y / scale;
            Rgb c{};
            switch (p.keratin_style) {
                case KeratinStyle::basket_weave:
                case KeratinStyle::basket_weave_parakeratosis: {
                    const bool s1 = std::sin(0.8 * v + 1.0 * std::sin(0.2 * u + ph)) > 0.5;
                    const bool s2 = std::sin(0.45 * u + 1.5 * std::sin(0.35 * v + ph2)) > 0.85;
                    const bool pk = p.keratin_style == KeratinStyle::basket_weave_parakeratosis;
                    c = (s1 || s2) ? (pk ? strand_pk : strand) : (pk ? pale_pk : pale);
                    break;
                }
                case KeratinStyle::parakeratosis:
                    c = (static_cast<int>(std::floor(v / 2.0 + 0.4 * std::sin(0.2 * u + ph))) % 2 == 0) ? compact
                                                                                                       : lamina;
                    break;
                case KeratinStyle::keratosis:
                    c = (static_cast<int>(std::floor(v / 2.0 + 0.3 * std::sin(0.15 * u + ph))) % 2 == 0) ? ortho
                                                                                                        : ortho_dark;
                    break;
                case KeratinStyle::eroded:
                    c = blot(y, x) > 0.55 ? debris : debris_bg;
                    break;
            }
            cv.at(y, x) = c;
        }
    }

    // Retained nuclei.
    double nucleus_area = 0.0;
    if (p.keratin_style == KeratinStyle::parakeratosis) nucleus_area = 30.0;
    if (p.keratin_style == KeratinStyle::basket_weave_parakeratosis) nucleus_area = 40.0;
    if (nucleus_area > 0.0) {
        const int count = static_cast<int>(std::round(S * t / (nucleus_area * scale * scale)));
        for (int i = 0; i < count; ++i) {
            const double cy = rng.uniform(0.5, std::max(0.6, t - 0.5));
            const double cx = rng.uniform(0, S);
            cv.ellipse(cy, cx, 0.9 * scale, 1.8 * scale, nucleus, 0, t);
        }
    }
    if (p.keratin_style == KeratinStyle::eroded) {
        const int count = static_cast<int>(std::round(S / (10.0 * scale)));
        for (int i = 0; i < count; ++i) {
            cv.ellipse(rng.uniform(0, t), rng.uniform(0, S), 0.8 * scale, 0.8 * scale, Rgb{0.62f, 0.60f, 0.66f}, 0, t);
        }
    }

    if (p.keratin_modifiers.fragmented) {
        // Pale green fissures splitting the layer into plates.
        double x = rng.uniform(2, 7) * scale;
        while (x < S) {
            const double slant = rng.uniform(-0.4, 0.4);
            const int w = std::max(2, static_cast<int>(std::round(2.5 * scale)));
            for (int y = 0; y < t; ++y) {
                const int cx = static_cast<int>(std::round(x + slant * y));
                for (int k = 0; k < w; ++k) {
                    const int xx = cx + k;
                    if (xx >= 0 && xx < S) cv.at(y, xx) = fissure;
                }
            }
            x += rng.uniform(8, 12) * scale;
        }
        if (t >= 5) {
            const int fy = t / 2;
            for (int x2 = 0; x2 < S; ++x2)
                if (std::sin(0.5 * x2 / scale + ph) > 0.0) cv.at(fy, x2) = fissure;
        }
    }
}

// Rows [top, bottom(x)) hold the epidermis.
void render_epidermis(Canvas& cv, const MorphologyParams& p, Rng& rng, double scale, int top,
                      const std::vector<int>& bottom) {
    const int S = cv.size();
    const Rgb cytoplasm{0.74f, 0.50f, 0.72f};
    for (int x = 0; x < S; ++x)
        for (int y = top; y < bottom[static_cast<std::size_t>(x)]; ++y) cv.at(y, x) = cytoplasm;

    const int g = grade_index(p.dysplasia_grade);
    static constexpr std::array<double, 5> kAtypicalFraction{0.0, 0.34, 0.67, 0.85, 1.0};
    const Rgb normal_nucleus{0.50f, 0.38f, 0.66f};
    const Rgb atypical_nucleus = mix(Rgb{0.46f, 0.30f, 0.64f}, Rgb{0.26f, 0.06f, 0.46f}, static_cast<float>(g) / 4.0f);

    const int max_bottom = *std::max_element(bottom.begin(), bottom.end());
    const double spacing_normal = 5.0 * scale;
    const double spacing_atypical = (5.0 - 0.4 * g) * scale;
    double y = top + 0.5 * spacing_normal;
    while (y < max_bottom) {
        double x = rng.uniform(0, spacing_normal);
        while (x < S) {
            const int col = std::clamp(static_cast<int>(x), 0, S - 1);
            const int b = bottom[static_cast<std::size_t>(col)];
            const double depth = b - top;
            const double from_bottom = (b - y) / std::max(1.0, depth);
            const bool atypical = from_bottom <= kAtypicalFraction[static_cast<std::size_t>(g)];
            double step = spacing_normal;
            if (y < b) {
                if (atypical) {
                    const double mean_r = 1.2 + 0.35 * g;
                    const double sd_r = 0.1 + 0.25 * g;
                    const double r = std::clamp(mean_r + sd_r * rng.normal(), 0.7, 3.8) * scale;
                    const float jitter = static_cast<float>(0.05 * g * rng.normal());
                    Rgb c = atypical_nucleus;
                    c.r = std::clamp(c.r + jitter, 0.0f, 1.0f);
                    c.b = std::clamp(c.b + jitter, 0.0f, 1.0f);
                    const double ecc = 1.0 + 0.15 * g * rng.uniform();
                    cv.ellipse(y + rng.uniform(-0.8, 0.8) * scale, x, r, r * ecc, c, top, b);
                    step = spacing_atypical;
                } else {
                    const double r = std::clamp(1.0 + 0.1 * rng.normal(), 0.7, 1.4) * scale;
                    cv.ellipse(y + rng.uniform(-0.5, 0.5) * scale, x, r * 0.8, r, normal_nucleus, top, b);
                }
            }
            x += step * rng.uniform(0.85, 1.15);
        }
        // Row spacing follows the densest population on that row band.
        const double frac_here = (max_bottom - y) / std::max(1.0, static_cast<double>(max_bottom - top));
        y += (frac_here <= kAtypicalFraction[static_cast<std::size_t>(g)] ? spacing_atypical : spacing_normal) *
             rng.uniform(0.9, 1.1);
    }

    // Basal layer.
    const Rgb basal{0.36f, 0.24f, 0.58f};
    for (double x = rng.uniform(0, 2.5 * scale); x < S; x += 2.5 * scale) {
        const int col = std::clamp(static_cast<int>(x), 0, S - 1);
        const int b = bottom[static_cast<std::size_t>(col)];
        cv.ellipse(b - 1.0 * scale, x, 0.8 * scale, 0.8 * scale, basal, top, b);
    }
}

void render_dermis(Canvas& cv, const MorphologyParams& p, Rng& rng, double scale, const std::vector<int>& top) {
    const int S = cv.size();
    const double ph = rng.uniform(0, 2 * std::numbers::pi);
    const double ph2 = rng.uniform(0, 2 * std::numbers::pi);
    ValueNoise coarse(rng.next(), 6.0 * scale);
    ValueNoise fine(rng.next(), 2.0 * scale);

    const Rgb collagen{0.94f, 0.72f, 0.82f};
    const Rgb fibre{0.87f, 0.58f, 0.73f};
    const Rgb elastosis{0.74f, 0.70f, 0.86f};
    const Rgb elastic_fibre{0.60f, 0.56f, 0.78f};
    const Rgb cleft{0.97f, 0.95f, 0.97f};

    const int cleft_rows = static_cast<int>(std::round(8 * scale));
    for (int x = 0; x < S; ++x) {
        const int t0 = top[static_cast<std::size_t>(x)];
        for (int y = t0; y < S; ++y) {
            const double u = x / scale, v = y / scale;
            Rgb c{};
            switch (p.dermis_state) {
                case DermisState::normal:
                case DermisState::inflammation:
                    c = std::sin(1.3 * v + 0.8 * std::sin(0.25 * u + ph)) > 0.6 ? fibre : collagen;
                    break;
                case DermisState::abnormal: {
                    // Disorganised fibres whose orientation wanders.
                    const double ang = coarse(y, x) * 2 * std::numbers::pi;
                    const double s = std::sin(1.4 * (u * std::cos(ang) + v * std::sin(ang)) + ph);
                    c = s > 0.5 ? Rgb{0.82f, 0.50f, 0.70f} : Rgb{0.92f, 0.68f, 0.80f};
                    break;
                }
                case DermisState::solar_damaged: {
                    const double s = std::sin(1.1 * u + 2.5 * std::sin(0.9 * v + ph)) * std::sin(0.8 * v + ph2);
                    c = (s > 0.3 || fine(y, x) > 0.75) ? elastic_fibre : elastosis;
                    break;
                }
                case DermisState::displaced:
                    c = (y - t0 < cleft_rows) ? cleft
                        : std::sin(1.3 * v + 0.8 * std::sin(0.25 * u + ph)) > 0.6 ? fibre
                                                                                 : collagen;
                    break;
            }
            cv.at(y, x) = c;
        }
    }

    const int min_top = *std::min_element(top.begin(), top.end());
    auto in_dermis = [&](double y, double x) {
        const int col = std::clamp(static_cast<int>(x), 0, S - 1);
        return y >= top[static_cast<std::size_t>(col)] + 0.5 && y < S;
    };

    // Fibroblasts.
    const int fibroblasts = static_cast<int>(std::round((S - min_top) * S / (150.0 * scale * scale)));
    for (int i = 0; i < fibroblasts; ++i) {
        const double y = rng.uniform(min_top, S), x = rng.uniform(0, S);
        if (in_dermis(y, x)) cv.ellipse(y, x, 0.5 * scale, 1.5 * scale, Rgb{0.45f, 0.32f, 0.60f}, 0, S);
    }

    if (p.dermis_state == DermisState::inflammation) {
        const Rgb lymph{0.22f, 0.16f, 0.46f};
        const int clusters = rng.uniform_int(2, 4);
        for (int k = 0; k < clusters; ++k) {
            const double cy = rng.uniform(min_top + 6 * scale, S), cx = rng.uniform(0, S);
            const int cells = static_cast<int>(45 * scale * scale);
            for (int i = 0; i < cells; ++i) {
                const double y = cy + 4.0 * scale * rng.normal(), x = cx + 5.0 * scale * rng.normal();
                if (in_dermis(y, x)) cv.ellipse(y, x, 0.9 * scale, 0.9 * scale, lymph, 0, S);
            }
        }
        const int scatter = static_cast<int>((S - min_top) * S / (60.0 * scale * scale));
        for (int i = 0; i < scatter; ++i) {
            const double y = rng.uniform(min_top, S), x = rng.uniform(0, S);
            if (in_dermis(y, x)) cv.ellipse(y, x, 0.9 * scale, 0.9 * scale, lymph, 0, S);
        }
    }
    if (p.dermis_state == DermisState::abnormal) {
        const int blobs = static_cast<int>((S - min_top) * S / (90.0 * scale * scale));
        for (int i = 0; i < blobs; ++i) {
            const double y = rng.uniform(min_top, S), x = rng.uniform(0, S);
            const double r = rng.uniform(1.0, 2.0) * scale;
            if (in_dermis(y, x)) cv.ellipse(y, x, r, r * 1.3, Rgb{0.55f, 0.36f, 0.62f}, 0, S);
        }
    }
}

}  // namespace

std::pair<Image, Caption> generate_sample(const MorphologyParams& params, int size) {
    if (size < 32 || !is_power_of_two(size)) {
        throw std::invalid_argument("generate_sample: size must be a power of two >= 32, got " + std::to_string(size));
    }
    validate_params(params, size);

    const double scale = size / 64.0;
    Rng rng(params.seed);
    Canvas cv(size);

    render_keratin(cv, params, rng, scale);

    int epi_top = params.keratin_thickness;
    if (params.keratin_modifiers.detached) {
        const int cleft = std::max(2, size / 16);
        for (int y = epi_top; y < epi_top + cleft; ++y)
            for (int x = 0; x < size; ++x) cv.at(y, x) = Rgb{0.22f, 0.50f, 0.52f};
        epi_top += cleft;
    }

    // Epidermis bottom with rete ridges.
    const int depth = static_cast<int>(std::round(0.38 * size));
    const double amplitude =
        (params.dermis_state == DermisState::displaced ? 0.5 : 2.5 + 0.5 * grade_index(params.dysplasia_grade)) * scale;
    const double period = rng.uniform(18, 28) * scale;
    const double phase = rng.uniform(0, 2 * std::numbers::pi);
    std::vector<int> bottom(static_cast<std::size_t>(size));
    for (int x = 0; x < size; ++x) {
        const int b = epi_top + depth + static_cast<int>(std::round(amplitude * std::sin(2 * std::numbers::pi * x / period + phase)));
        bottom[static_cast<std::size_t>(x)] = std::clamp(b, epi_top + 4, size - 4);
    }

    render_epidermis(cv, params, rng, scale, epi_top, bottom);
    render_dermis(cv, params, rng, scale, bottom);

    // Stain variation and acquisition noise.
    const float hue = static_cast<float>(params.stain_hue - 0.5);
    Image img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Rgb c = cv.at(y, x);
            c.r -= 0.06f * hue;
            c.b += 0.06f * hue;
            const float n = static_cast<float>(0.012 * rng.normal());
            img.at(y, x, 0) = std::clamp(c.r + n, 0.0f, 1.0f) * 2.0f - 1.0f;
            img.at(y, x, 1) = std::clamp(c.g + n, 0.0f, 1.0f) * 2.0f - 1.0f;
            img.at(y, x, 2) = std::clamp(c.b + n, 0.0f, 1.0f) * 2.0f - 1.0f;
        }
    return {std::move(img), render_caption(params)};
}

std::vector<MorphologyParams> sample_params(std::size_t n, int size, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xA11CE));
    auto balanced = [&](int classes) {
        std::vector<int> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
        rng.shuffle(v);
        return v;
    };
    const auto thickness_class = balanced(3);
    const auto style = balanced(5);
    const auto grade = balanced(5);
    const auto dermis = balanced(5);

    // Classes keep one pixel of margin from the thin/thick thresholds.
    const auto th = thickness_thresholds(size);
    const int thin_lo = 2, thin_hi = th.thin_max;
    const int mid_lo = th.thin_max + 2, mid_hi = th.thick_min - 2;
    const int thick_lo = th.thick_min + 1, thick_hi = size / 4;

    std::vector<MorphologyParams> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r(mix_seed(seed, i + 1));
        auto& p = out[i];
        p.seed = mix_seed(seed ^ 0x5EEDULL, i);
        switch (thickness_class[i]) {
            case 0: p.keratin_thickness = r.uniform_int(thin_lo, thin_hi); break;
            case 1: p.keratin_thickness = r.uniform_int(mid_lo, std::max(mid_lo, mid_hi)); break;
            default: p.keratin_thickness = r.uniform_int(thick_lo, std::max(thick_lo, thick_hi)); break;
        }
        assign_thickness_modifiers(p, size);
        p.keratin_modifiers.fragmented = r.bernoulli(0.25);
        p.keratin_modifiers.detached = r.bernoulli(0.2);
        p.keratin_style = kAllKeratinStyles[static_cast<std::size_t>(style[i])];
        p.dysplasia_grade = kAllDysplasiaGrades[static_cast<std::size_t>(grade[i])];
        p.dermis_state = kAllDermisStates[static_cast<std::size_t>(dermis[i])];
        p.stain_hue = r.uniform();
    }
    return out;
}

namespace {

kv::Record to_record(const SampleRecord& r) {
    kv::Record rec;
    rec.set("id", r.id)
        .set("image_path", r.image_path)
        .set("caption", r.caption)
        .set("split", std::string(to_string(r.split)))
        .set("flipped", r.flipped)
        .set("keratin_thickness", r.params.keratin_thickness)
        .set("keratin_style", std::string(to_string(r.params.keratin_style)))
        .set("keratin_modifiers", modifiers_to_string(r.params.keratin_modifiers))
        .set("dysplasia_grade", std::string(to_string(r.params.dysplasia_grade)))
        .set("dermis_state", std::string(to_string(r.params.dermis_state)))
        .set("stain_hue", r.params.stain_hue)
        .set("seed", std::to_string(r.params.seed));
    return rec;
}

SampleRecord from_record(const kv::Record& rec) {
    SampleRecord r;
    r.id = rec.get("id");
    r.image_path = rec.get("image_path");
    r.caption = rec.get("caption");
    r.split = parse_split(rec.get("split"));
    r.flipped = rec.get_bool("flipped");
    r.params.keratin_thickness = static_cast<int>(rec.get_int("keratin_thickness"));
    r.params.keratin_style = parse_keratin_style(rec.get("keratin_style"));
    r.params.keratin_modifiers = parse_modifiers(rec.get("keratin_modifiers"));
    r.params.dysplasia_grade = parse_dysplasia_grade(rec.get("dysplasia_grade"));
    r.params.dermis_state = parse_dermis_state(rec.get("dermis_state"));
    r.params.stain_hue = rec.get_double("stain_hue");
    r.params.seed = std::stoull(rec.get("seed"));
    return r;
}

}  // namespace

DatasetManifest build_dataset(std::size_t n_unique, int size, std::uint64_t seed, const fs::path& out_dir) {
    if (n_unique < 100) {
        throw std::invalid_argument("build_dataset: n_unique must be >= 100 to cover every enum value, got " +
                                    std::to_string(n_unique));
    }
    if (size < 32 || !is_power_of_two(size)) throw std::invalid_argument("build_dataset: bad image size");
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw std::runtime_error("build_dataset: cannot create " + (out_dir / "images").string() + ": " + ec.message());

    const auto params = sample_params(n_unique, size, seed);

    std::vector<std::size_t> order(n_unique);
    for (std::size_t i = 0; i < n_unique; ++i) order[i] = i;
    Rng split_rng(mix_seed(seed, 0x5B117));
    split_rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(0.64 * static_cast<double>(n_unique)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.18 * static_cast<double>(n_unique)));
    std::vector<Split> split_of(n_unique);
    for (std::size_t k = 0; k < n_unique; ++k) {
        split_of[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    }

    DatasetManifest m;
    m.image_size = size;
    m.base_dir = out_dir;
    for (std::size_t i = 0; i < n_unique; ++i) {
        auto [img, caption] = generate_sample(params[i], size);
        SampleRecord rec;
        rec.id = "s" + std::to_string(i);
        rec.image_path = "images/" + rec.id + ".png";
        rec.caption = caption;
        rec.params = params[i];
        rec.split = split_of[i];
        write_png((out_dir / rec.image_path).string(), img);

        SampleRecord flip = rec;
        flip.id = rec.id + "_flip";
        flip.image_path = "images/" + flip.id + ".png";
        flip.flipped = true;
        write_png((out_dir / flip.image_path).string(), img.flipped_horizontal());

        m.records.push_back(std::move(rec));
        m.records.push_back(std::move(flip));
    }
    save_manifest(m, out_dir / "manifest.txt");
    return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
    kv::Record header;
    header.set("schema", "strata-manifest").set("version", m.version).set("image_size", m.image_size)
        .set("vocabulary_path", m.vocabulary_path).set("records", m.records.size());
    out << header.to_line() << '\n';
    for (const auto& r : m.records) out << to_record(r).to_line() << '\n';
    if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
}

DatasetManifest load_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest: " + path.string());
    const auto header = kv::Record::parse(line);
    if (header.get_or("schema", "") != "strata-manifest") throw std::runtime_error("not a manifest: " + path.string());
    DatasetManifest m;
    m.version = static_cast<int>(header.get_int("version"));
    if (m.version != DatasetManifest::kVersion) {
        throw std::runtime_error("unsupported manifest version " + std::to_string(m.version));
    }
    m.image_size = static_cast<int>(header.get_int("image_size"));
    m.vocabulary_path = header.get("vocabulary_path");
    m.base_dir = path.parent_path();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.records.push_back(from_record(kv::Record::parse(line)));
    }
    return m;
}

std::vector<SampleRecord> load_split(const DatasetManifest& m, Split split) {
    std::vector<SampleRecord> out;
    for (const auto& r : m.records) {
        if (r.split != split) continue;
        const auto p = m.resolve(r.image_path);
        if (!fs::exists(p)) throw std::runtime_error("load_split: missing image file " + p.string());
        out.push_back(r);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

std::vector<Image> load_images(const DatasetManifest& m, const std::vector<SampleRecord>& records) {
    std::vector<Image> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto img = read_png(m.resolve(r.image_path).string());
        if (img.height() != m.image_size || img.width() != m.image_size) {
            throw std::runtime_error("image " + r.image_path + " does not match manifest image_size");
        }
        out.push_back(std::move(img));
    }
    return out;
}

BandMetrics measure_bands(const Image& image) {
    BandMetrics out;
    const int H = image.height(), W = image.width();
    if (H == 0 || W == 0) return out;
    std::vector<double> row_mean(static_cast<std::size_t>(H)), row_sd(static_cast<std::size_t>(H));
    for (int y = 0; y < H; ++y) {
        // Mirrored pairs are summed first so a left-right flip yields bit-identical statistics.
        double s = 0, s2 = 0;
        for (int x = 0; x < (W + 1) / 2; ++x) {
            const int xm = W - 1 - x;
            const double a = image.luminance(y, x);
            const double b = image.luminance(y, xm);
            if (xm == x) {
                s += a;
                s2 += a * a;
            } else {
                s += a + b;
                s2 += a * a + b * b;
            }
        }
        const double mean = s / W;
        row_mean[static_cast<std::size_t>(y)] = mean;
        row_sd[static_cast<std::size_t>(y)] = std::sqrt(std::max(0.0, s2 / W - mean * mean));
    }
    while (out.top_band_thickness < H && row_mean[static_cast<std::size_t>(out.top_band_thickness)] > kKeratinLuminanceThreshold) {
        ++out.top_band_thickness;
    }
    const int mid_lo = out.top_band_thickness;
    const int mid_hi = mid_lo + (H - mid_lo) / 2;
    if (mid_hi > mid_lo) {
        double acc = 0;
        for (int y = mid_lo; y < mid_hi; ++y) acc += row_sd[static_cast<std::size_t>(y)];
        out.mid_band_irregularity = acc / (mid_hi - mid_lo);
    }
    const int bottom_lo = H - H / 4;
    long dark = 0, total = 0;
    for (int y = bottom_lo; y < H; ++y)
        for (int x = 0; x < W; ++x, ++total)
            if (image.luminance(y, x) < -0.3f) ++dark;
    out.bottom_speckle_density = total ? static_cast<double>(dark) / static_cast<double>(total) : 0.0;
    return out;
}

const std::vector<ConceptRule>& concept_rules() {
    static const std::vector<ConceptRule> rules{
        {"keratin_thickness", "thick keratin", "thin keratin"},
        {"parakeratosis", "parakeratosis", "basket weave"},
        {"dysplasia", "full thickness", "mild dysplasia"},
        {"solar_damage", "solar damage", "normal dermis"},
        {"inflammation", "inflammation", "normal dermis"},
    };
    return rules;
}

ConceptLabel concept_label(std::string_view name, const MorphologyParams& p) {
    auto pick = [](bool pos, bool neg) {
        return pos ? ConceptLabel::positive : (neg ? ConceptLabel::negative : ConceptLabel::none);
    };
    if (name == "keratin_thickness") return pick(p.keratin_modifiers.thick, p.keratin_modifiers.thin);
    if (name == "parakeratosis") {
        return pick(p.keratin_style == KeratinStyle::parakeratosis, p.keratin_style == KeratinStyle::basket_weave);
    }
    if (name == "dysplasia") {
        return pick(p.dysplasia_grade == DysplasiaGrade::full_thickness, p.dysplasia_grade == DysplasiaGrade::mild);
    }
    if (name == "solar_damage") {
        return pick(p.dermis_state == DermisState::solar_damaged, p.dermis_state == DermisState::normal);
    }
    if (name == "inflammation") {
        return pick(p.dermis_state == DermisState::inflammation, p.dermis_state == DermisState::normal);
    }
    throw std::invalid_argument("unknown concept '" + std::string(name) + "'");
}

}  // namespace strata
