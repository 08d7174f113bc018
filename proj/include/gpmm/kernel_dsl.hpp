#pragma once

#include "gpmm/kernels.hpp"

#include <string>
#include <vector>

namespace gpmm {

/// Kernel expression AST. Grammar:
///   expr   := ident '(' args ')' | number | string
///   args   := expr (',' expr)*
/// Matrix-kernel nodes: gauss(s, sigma), diag(a11..a33, l), sum(k...),
/// scale(c, k), product(k1, k2), anisotropic(r11..r33, s1, s2, s3, k),
/// multiscale(s, sigma, levels), localize(w, k),
/// spatially_varying(w1, k1, ...), empirical("set.json"),
/// posterior(k, "ref.csv", "target.csv", sigma2).
/// Scalar kernels: sgauss(sigma), sconst(c). Weights: wconst(c),
/// wplane(nx, ny, nz, offset, width), winv(w).
struct KernelExpr {
    enum class Kind { Number, String, Call };
    Kind kind = Kind::Number;
    double number = 0.0;
    std::string text;  // identifier for Call, contents for String
    std::vector<KernelExpr> args;
    int line = 0, col = 0;

    bool operator==(const KernelExpr& other) const;
};

/// Throws UsageError with line/column on syntax errors.
KernelExpr parse_kernel(const std::string& text);

/// Canonical text form; parse(print(e)) == e and print(parse(t)) is a
/// fixed point.
std::string print_kernel(const KernelExpr& expr);

/// Mean + covariance resulting from a kernel expression. Leaf kernels are
/// zero-mean; empirical and posterior nodes contribute their means, which
/// combinators pass through (sums add them).
struct GpExprModel {
    MeanFunction mean;
    MatrixKernelPtr kernel;
};

/// Evaluates the AST; file arguments are resolved relative to base_dir.
GpExprModel evaluate_kernel_expr(const KernelExpr& expr, const std::string& base_dir = ".");

GpExprModel load_kernel_file(const std::string& kdsl_path);

}  // namespace gpmm
