#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace contactseg {

enum class ShapeKind { Line = 0, Plane = 1, Sphere = 2, Poly2 = 3, Poly3 = 4 };

inline constexpr std::array<ShapeKind, 5> kAllKinds = {
    ShapeKind::Line, ShapeKind::Plane, ShapeKind::Sphere, ShapeKind::Poly2,
    ShapeKind::Poly3};

std::string_view to_string(ShapeKind kind);
/// Accepts the lowercase names produced by to_string.
ShapeKind parse_kind(std::string_view name);

}  // namespace contactseg
