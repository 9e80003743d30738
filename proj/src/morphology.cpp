#include "strata/morphology.hpp"

#include <cmath>
#include <stdexcept>

namespace strata {

ThicknessThresholds thickness_thresholds(int image_size) {
    return {image_size / 16, (image_size + 5) / 6};
}

void validate_params(const MorphologyParams& p, int image_size) {
    const auto& m = p.keratin_modifiers;
    if (m.thin && m.thick) throw std::invalid_argument("keratin modifiers 'thin' and 'thick' are mutually exclusive");
    if (p.keratin_thickness < 2) throw std::invalid_argument("keratin_thickness must be >= 2");
    if (p.keratin_thickness > image_size / 3) throw std::invalid_argument("keratin_thickness too large for image size");
    const auto t = thickness_thresholds(image_size);
    const bool thin = p.keratin_thickness <= t.thin_max;
    const bool thick = p.keratin_thickness >= t.thick_min;
    if (m.thin != thin || m.thick != thick) {
        throw std::invalid_argument("keratin thin/thick modifiers disagree with keratin_thickness " +
                                    std::to_string(p.keratin_thickness));
    }
    if (!std::isfinite(p.stain_hue) || p.stain_hue < 0.0 || p.stain_hue > 1.0) {
        throw std::invalid_argument("stain_hue must lie in [0, 1]");
    }
}

void assign_thickness_modifiers(MorphologyParams& p, int image_size) {
    const auto t = thickness_thresholds(image_size);
    p.keratin_modifiers.thin = p.keratin_thickness <= t.thin_max;
    p.keratin_modifiers.thick = p.keratin_thickness >= t.thick_min;
}

std::string_view to_string(KeratinStyle v) {
    switch (v) {
        case KeratinStyle::basket_weave: return "basket_weave";
        case KeratinStyle::basket_weave_parakeratosis: return "basket_weave_parakeratosis";
        case KeratinStyle::parakeratosis: return "parakeratosis";
        case KeratinStyle::keratosis: return "keratosis";
        case KeratinStyle::eroded: return "eroded";
    }
    throw std::invalid_argument("bad KeratinStyle");
}

std::string_view to_string(DysplasiaGrade v) {
    switch (v) {
        case DysplasiaGrade::normal: return "normal";
        case DysplasiaGrade::mild: return "mild";
        case DysplasiaGrade::moderate: return "moderate";
        case DysplasiaGrade::severe: return "severe";
        case DysplasiaGrade::full_thickness: return "full_thickness";
    }
    throw std::invalid_argument("bad DysplasiaGrade");
}

std::string_view to_string(DermisState v) {
    switch (v) {
        case DermisState::normal: return "normal";
        case DermisState::abnormal: return "abnormal";
        case DermisState::solar_damaged: return "solar_damaged";
        case DermisState::inflammation: return "inflammation";
        case DermisState::displaced: return "displaced";
    }
    throw std::invalid_argument("bad DermisState");
}

KeratinStyle parse_keratin_style(std::string_view s) {
    for (auto v : kAllKeratinStyles)
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown keratin_style: " + std::string(s));
}

DysplasiaGrade parse_dysplasia_grade(std::string_view s) {
    for (auto v : kAllDysplasiaGrades)
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown dysplasia_grade: " + std::string(s));
}

DermisState parse_dermis_state(std::string_view s) {
    for (auto v : kAllDermisStates)
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown dermis_state: " + std::string(s));
}

std::string modifiers_to_string(const KeratinModifiers& m) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(m.thin, "thin");
    add(m.thick, "thick");
    add(m.fragmented, "fragmented");
    add(m.detached, "detached");
    return out;
}

KeratinModifiers parse_modifiers(std::string_view s) {
    KeratinModifiers m;
    std::size_t start = 0;
    while (start < s.size()) {
        auto end = s.find(',', start);
        if (end == std::string_view::npos) end = s.size();
        auto tok = s.substr(start, end - start);
        if (tok == "thin") m.thin = true;
        else if (tok == "thick") m.thick = true;
        else if (tok == "fragmented") m.fragmented = true;
        else if (tok == "detached") m.detached = true;
        else if (!tok.empty()) throw std::invalid_argument("unknown keratin modifier: " + std::string(tok));
        start = end + 1;
    }
    return m;
}

}  // namespace strata
