#pragma once

// Ground-truth tissue parameters shared by the generator and the caption grammar.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace strata {

enum class KeratinStyle { basket_weave, basket_weave_parakeratosis, parakeratosis, keratosis, eroded };
enum class DysplasiaGrade { normal, mild, moderate, severe, full_thickness };
enum class DermisState { normal, abnormal, solar_damaged, inflammation, displaced };

inline constexpr std::array kAllKeratinStyles{KeratinStyle::basket_weave, KeratinStyle::basket_weave_parakeratosis,
                                              KeratinStyle::parakeratosis, KeratinStyle::keratosis,
                                              KeratinStyle::eroded};
inline constexpr std::array kAllDysplasiaGrades{DysplasiaGrade::normal, DysplasiaGrade::mild,
                                                DysplasiaGrade::moderate, DysplasiaGrade::severe,
                                                DysplasiaGrade::full_thickness};
inline constexpr std::array kAllDermisStates{DermisState::normal, DermisState::abnormal, DermisState::solar_damaged,
                                             DermisState::inflammation, DermisState::displaced};

struct KeratinModifiers {
    bool thin = false;
    bool thick = false;
    bool fragmented = false;
    bool detached = false;

    friend bool operator==(const KeratinModifiers&, const KeratinModifiers&) = default;
};

struct MorphologyParams {
    int keratin_thickness = 6;
    KeratinStyle keratin_style = KeratinStyle::keratosis;
    KeratinModifiers keratin_modifiers;
    DysplasiaGrade dysplasia_grade = DysplasiaGrade::normal;
    DermisState dermis_state = DermisState::normal;
    double stain_hue = 0.5;
    std::uint64_t seed = 0;

    friend bool operator==(const MorphologyParams&, const MorphologyParams&) = default;
};

/// Thickness class boundaries for a given image size.
/// thin <=> thickness <= size/16, thick <=> thickness >= size/6.
struct ThicknessThresholds {
    int thin_max;
    int thick_min;
};
ThicknessThresholds thickness_thresholds(int image_size);

/// Throws std::invalid_argument when the parameters are inconsistent for `image_size`
/// (thin together with thick, modifiers disagreeing with the thickness, out-of-range values).
void validate_params(const MorphologyParams& params, int image_size);

/// Sets thin/thick from the thickness, leaving fragmented/detached untouched.
void assign_thickness_modifiers(MorphologyParams& params, int image_size);

std::string_view to_string(KeratinStyle v);
std::string_view to_string(DysplasiaGrade v);
std::string_view to_string(DermisState v);

KeratinStyle parse_keratin_style(std::string_view s);
DysplasiaGrade parse_dysplasia_grade(std::string_view s);
DermisState parse_dermis_state(std::string_view s);

/// "thin,fragmented" style list; empty string for no modifiers.
std::string modifiers_to_string(const KeratinModifiers& m);
KeratinModifiers parse_modifiers(std::string_view s);

}  // namespace strata
