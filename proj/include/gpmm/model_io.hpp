#pragma once

#include "gpmm/kernel_dsl.hpp"
#include "gpmm/lowrank.hpp"

namespace gpmm {

/// A low-rank model plus the provenance needed to rebuild its evaluation:
/// the kernel DSL text (embedded, so fitting never needs the original
/// .kdsl) and the domain the Nystrom points were sampled from.
struct ModelBundle {
    LowRankGP gp;
    std::string kernel_dsl;
    std::string mean_kind = "zero";  // "zero" | "from_kernel"
    std::string domain_kind;         // "surface" | "image" | "gauss1d" | "explicit"
    std::string domain_path;         // surface/image only
    double domain_s2 = 1.0;          // gauss1d only
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

/// JSON manifest plus float64 little-endian sidecars (<path>.points,
/// <path>.ext, and <path>.meanc when present). Loading reconstructs the
/// eigenfunction evaluation bit-exactly.
void save_model(const ModelBundle& bundle, const std::string& path);
ModelBundle load_model(const std::string& path);

/// Rebuilds the sampler backing the model's domain; surface and image
/// domains reload their files (relative to the manifest directory first).
DomainSampler domain_sampler_of(const ModelBundle& bundle, const std::string& base_dir);

/// Raw little-endian float64 array files used by model sidecars.
void write_doubles(const std::string& path, const double* data, std::size_t count);
std::vector<double> read_doubles(const std::string& path);

}  // namespace gpmm
