#include "gpmm/model_io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>

namespace gpmm {

namespace {

static_assert(std::endian::native == std::endian::little,
              "model sidecars assume a little-endian host");

std::string resolve_near(const std::string& path, const std::string& base_dir) {
    const std::filesystem::path p(path);
    if (p.is_absolute()) return p.string();
    const auto near = std::filesystem::path(base_dir) / p;
    if (std::filesystem::exists(near)) return near.string();
    return p.string();  // fall back to the working directory
}

}  // namespace

void write_doubles(const std::string& path, const double* data, std::size_t count) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write sidecar: " + path);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

std::vector<double> read_doubles(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw UsageError("cannot read sidecar: " + path);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(double) != 0)
        throw UsageError("sidecar size is not a multiple of 8 bytes: " + path);
    std::vector<double> data(bytes / sizeof(double));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    return data;
}

void save_model(const ModelBundle& bundle, const std::string& path) {
    const LowRankGP& gp = bundle.gp;
    nlohmann::json manifest;
    manifest["format"] = "gpmm-model";
    manifest["version"] = 1;
    manifest["kernel_dsl"] = bundle.kernel_dsl;
    manifest["mean"] = bundle.mean_kind;
    manifest["domain"] = {{"kind", bundle.domain_kind}};
    if (!bundle.domain_path.empty()) manifest["domain"]["path"] = bundle.domain_path;
    if (bundle.domain_kind == "gauss1d") manifest["domain"]["s2"] = bundle.domain_s2;
    manifest["n"] = bundle.n;
    manifest["seed"] = bundle.seed;
    manifest["rank"] = gp.rank();
    manifest["total_variance"] = gp.total_variance();
    manifest["eigenvalues"] = std::vector<double>(
        gp.eigenvalues().data(), gp.eigenvalues().data() + gp.eigenvalues().size());
    manifest["lambda_mat"] = std::vector<double>(
        gp.lambda_mat().data(), gp.lambda_mat().data() + gp.lambda_mat().size());

    const std::string base = std::filesystem::path(path).filename().string();
    manifest["points_file"] = base + ".points";
    manifest["extension_file"] = base + ".ext";
    if (gp.mean_coefs().size() > 0) manifest["mean_coefs_file"] = base + ".meanc";

    {
        std::ofstream out(path);
        if (!out) throw UsageError("cannot write model manifest: " + path);
        out << manifest.dump(2) << '\n';
    }

    std::vector<double> points(3 * gp.nystrom_points().size());
    for (std::size_t i = 0; i < gp.nystrom_points().size(); ++i)
        for (int k = 0; k < 3; ++k) points[3 * i + k] = gp.nystrom_points()[i][k];
    write_doubles(path + ".points", points.data(), points.size());

    // extension stored column-major (eigenfunction-major)
    write_doubles(path + ".ext", gp.extension().data(),
                  static_cast<std::size_t>(gp.extension().size()));
    if (gp.mean_coefs().size() > 0)
        write_doubles(path + ".meanc", gp.mean_coefs().data(),
                      static_cast<std::size_t>(gp.mean_coefs().size()));
}

ModelBundle load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open model manifest: " + path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("bad JSON in " + path + ": " + e.what());
    }
    if (manifest.value("format", "") != "gpmm-model")
        throw UsageError(path + " is not a model manifest");

    const std::string dir = std::filesystem::path(path).parent_path().string();

    ModelBundle bundle;
    bundle.kernel_dsl = manifest.at("kernel_dsl").get<std::string>();
    bundle.mean_kind = manifest.value("mean", "zero");
    bundle.domain_kind = manifest.at("domain").at("kind").get<std::string>();
    bundle.domain_path = manifest["domain"].value("path", "");
    bundle.domain_s2 = manifest["domain"].value("s2", 1.0);
    bundle.n = manifest.value("n", std::size_t(0));
    bundle.seed = manifest.value("seed", std::uint64_t(0));

    const GpExprModel prior =
        evaluate_kernel_expr(parse_kernel(bundle.kernel_dsl), dir.empty() ? "." : dir);
    MeanFunction mean;
    if (bundle.mean_kind == "from_kernel") mean = prior.mean;

    const auto raw_points =
        read_doubles(resolve_near(manifest.at("points_file").get<std::string>(), dir));
    std::vector<Point3> points(raw_points.size() / 3);
    for (std::size_t i = 0; i < points.size(); ++i)
        points[i] = Point3(raw_points[3 * i], raw_points[3 * i + 1], raw_points[3 * i + 2]);

    const auto eig = manifest.at("eigenvalues").get<std::vector<double>>();
    const auto lmat = manifest.at("lambda_mat").get<std::vector<double>>();
    const int rank = static_cast<int>(eig.size());
    VectorXd eigenvalues = Eigen::Map<const VectorXd>(eig.data(), rank);
    VectorXd lambda_mat = Eigen::Map<const VectorXd>(lmat.data(), rank);

    const auto raw_ext =
        read_doubles(resolve_near(manifest.at("extension_file").get<std::string>(), dir));
    if (raw_ext.size() != points.size() * 3 * static_cast<std::size_t>(rank))
        throw UsageError("extension sidecar has unexpected size");
    MatrixXd extension =
        Eigen::Map<const MatrixXd>(raw_ext.data(), 3 * points.size(), rank);

    VectorXd mean_coefs;
    if (manifest.contains("mean_coefs_file")) {
        const auto raw =
            read_doubles(resolve_near(manifest["mean_coefs_file"].get<std::string>(), dir));
        mean_coefs = Eigen::Map<const VectorXd>(raw.data(), raw.size());
    }

    bundle.gp = LowRankGP(prior.kernel, mean, std::move(points), std::move(eigenvalues),
                          std::move(lambda_mat), std::move(extension), std::move(mean_coefs),
                          manifest.value("total_variance", 0.0));
    return bundle;
}

DomainSampler domain_sampler_of(const ModelBundle& bundle, const std::string& base_dir) {
    if (bundle.domain_kind == "surface")
        return DomainSampler::surface(read_ply(resolve_near(bundle.domain_path, base_dir)));
    if (bundle.domain_kind == "image")
        return DomainSampler::image_box(read_mhd(resolve_near(bundle.domain_path, base_dir)));
    if (bundle.domain_kind == "gauss1d") return DomainSampler::gaussian_1d(bundle.domain_s2);
    if (bundle.domain_kind == "explicit")
        return DomainSampler::explicit_points(bundle.gp.nystrom_points());
    throw UsageError("unknown domain kind: " + bundle.domain_kind);
}

}  // namespace gpmm
