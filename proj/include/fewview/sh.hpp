#pragma once

#include <array>

#include "fewview/geometry.hpp"

namespace fewview {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Real SH basis (graphics sign convention) evaluated at a unit direction.
// Entries beyond sh_coeff_count(degree) are left untouched.
void sh_basis(int degree, const Vec3& dir, std::array<double, 16>& out);

// Basis values plus their partial derivatives w.r.t. the (unnormalized)
// direction components, evaluated as polynomials in dir.
void sh_basis_with_grad(int degree, const Vec3& dir, std::array<double, 16>& out,
                        std::array<Vec3, 16>& grad);

}  // namespace fewview
