#include "gpmm/image.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gpmm {

ScalarImage::ScalarImage(std::array<int, 3> dims, Vector3 spacing, Point3 origin,
                         std::vector<double> voxels)
    : dims_(dims), spacing_(std::move(spacing)), origin_(std::move(origin)),
      voxels_(std::move(voxels)) {
    for (int k = 0; k < 3; ++k) {
        if (dims_[k] <= 0) throw UsageError("image dims must be positive");
        if (!(spacing_[k] > 0.0)) throw UsageError("image spacing must be positive");
    }
    const std::size_t expected = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    if (voxels_.size() != expected)
        throw UsageError("voxel count does not match dims");
}

void ScalarImage::set_mask(std::vector<std::uint8_t> mask) {
    if (!mask.empty() && mask.size() != voxels_.size())
        throw UsageError("mask size does not match voxel count");
    mask_ = std::move(mask);
}

bool ScalarImage::locate(const Point3& x, int idx[3], double frac[3]) const {
    for (int k = 0; k < 3; ++k) {
        const double u = (x[k] - origin_[k]) / spacing_[k];
        if (u < 0.0 || u > static_cast<double>(dims_[k] - 1)) return false;
        int i0 = static_cast<int>(std::floor(u));
        if (i0 > dims_[k] - 2) i0 = dims_[k] - 2;  // query exactly on the last center
        if (dims_[k] == 1) {
            idx[k] = 0;
            frac[k] = 0.0;
            continue;
        }
        idx[k] = i0;
        frac[k] = u - static_cast<double>(i0);
    }
    if (!mask_.empty()) {
        for (int dk = 0; dk < (dims_[2] > 1 ? 2 : 1); ++dk)
            for (int dj = 0; dj < (dims_[1] > 1 ? 2 : 1); ++dj)
                for (int di = 0; di < (dims_[0] > 1 ? 2 : 1); ++di)
                    if (!masked_in(idx[0] + di, idx[1] + dj, idx[2] + dk)) return false;
    }
    return true;
}

double ScalarImage::interpolate(const Point3& x) const {
    int idx[3];
    double t[3];
    if (!locate(x, idx, t)) return out_of_domain_;
    double value = 0.0;
    for (int dk = 0; dk < 2; ++dk) {
        const double wk = dk ? t[2] : 1.0 - t[2];
        if (wk == 0.0) continue;
        for (int dj = 0; dj < 2; ++dj) {
            const double wj = dj ? t[1] : 1.0 - t[1];
            if (wj == 0.0) continue;
            for (int di = 0; di < 2; ++di) {
                const double wi = di ? t[0] : 1.0 - t[0];
                if (wi == 0.0) continue;
                value += wi * wj * wk *
                         at(std::min(idx[0] + di, dims_[0] - 1),
                            std::min(idx[1] + dj, dims_[1] - 1),
                            std::min(idx[2] + dk, dims_[2] - 1));
            }
        }
    }
    return value;
}

Vector3 ScalarImage::gradient(const Point3& x) const {
    int idx[3];
    double t[3];
    if (!locate(x, idx, t)) return Vector3::Zero();
    // exact gradient of the trilinear interpolant within the located cell
    Vector3 g = Vector3::Zero();
    auto corner = [&](int di, int dj, int dk) {
        return at(std::min(idx[0] + di, dims_[0] - 1), std::min(idx[1] + dj, dims_[1] - 1),
                  std::min(idx[2] + dk, dims_[2] - 1));
    };
    for (int dk = 0; dk < 2; ++dk) {
        const double wk = dk ? t[2] : 1.0 - t[2];
        const double dwk = dk ? 1.0 : -1.0;
        for (int dj = 0; dj < 2; ++dj) {
            const double wj = dj ? t[1] : 1.0 - t[1];
            const double dwj = dj ? 1.0 : -1.0;
            for (int di = 0; di < 2; ++di) {
                const double wi = di ? t[0] : 1.0 - t[0];
                const double dwi = di ? 1.0 : -1.0;
                const double v = corner(di, dj, dk);
                g[0] += dwi * wj * wk * v;
                g[1] += wi * dwj * wk * v;
                g[2] += wi * wj * dwk * v;
            }
        }
    }
    for (int k = 0; k < 3; ++k) {
        g[k] = dims_[k] == 1 ? 0.0 : g[k] / spacing_[k];
    }
    return g;
}

std::vector<Point3> ScalarImage::masked_voxel_centers() const {
    std::vector<Point3> centers;
    for (int k = 0; k < dims_[2]; ++k)
        for (int j = 0; j < dims_[1]; ++j)
            for (int i = 0; i < dims_[0]; ++i)
                if (masked_in(i, j, k)) centers.push_back(voxel_center(i, j, k));
    return centers;
}

// ---------------------------------------------------------------------------
// MetaImage I/O

namespace {

static_assert(std::endian::native == std::endian::little,
              "raw MetaImage payload assumes a little-endian host");

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

ScalarImage read_mhd(const std::string& header_path) {
    std::ifstream in(header_path);
    if (!in) throw UsageError("cannot open MetaImage header: " + header_path);

    std::array<int, 3> dims{0, 0, 0};
    Vector3 spacing(1, 1, 1);
    Point3 origin(0, 0, 0);
    std::string data_file, element_type = "MET_FLOAT";
    int ndims = 3;

    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        std::istringstream vs(value);
        if (key == "NDims") vs >> ndims;
        else if (key == "DimSize") vs >> dims[0] >> dims[1] >> dims[2];
        else if (key == "ElementSpacing") vs >> spacing[0] >> spacing[1] >> spacing[2];
        else if (key == "Offset" || key == "Origin") vs >> origin[0] >> origin[1] >> origin[2];
        else if (key == "ElementType") element_type = value;
        else if (key == "ElementDataFile") data_file = value;
    }
    if (ndims != 3) throw UsageError("MetaImage: only NDims=3 is supported");
    if (element_type != "MET_FLOAT")
        throw UsageError("MetaImage: only ElementType=MET_FLOAT is supported");
    if (data_file.empty()) throw UsageError("MetaImage: missing ElementDataFile");

    const auto raw_path = std::filesystem::path(header_path).parent_path() / data_file;
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw UsageError("cannot open MetaImage payload: " + raw_path.string());

    const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    std::vector<float> payload(count);
    raw.read(reinterpret_cast<char*>(payload.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(raw.gcount()) != count * sizeof(float))
        throw UsageError("MetaImage payload shorter than DimSize promises");

    std::vector<double> voxels(count);
    for (std::size_t i = 0; i < count; ++i) voxels[i] = payload[i];
    return ScalarImage(dims, spacing, origin, std::move(voxels));
}

void write_mhd(const ScalarImage& image, const std::string& header_path) {
    const std::filesystem::path header(header_path);
    std::filesystem::path raw_path = header;
    raw_path.replace_extension(".raw");

    std::ofstream out(header);
    if (!out) throw UsageError("cannot write MetaImage header: " + header_path);
    const auto& d = image.dims();
    out << "NDims = 3\n";
    out << "DimSize = " << d[0] << ' ' << d[1] << ' ' << d[2] << '\n';
    out << "ElementSpacing = " << image.spacing()[0] << ' ' << image.spacing()[1] << ' '
        << image.spacing()[2] << '\n';
    out << "Offset = " << image.origin()[0] << ' ' << image.origin()[1] << ' '
        << image.origin()[2] << '\n';
    out << "ElementType = MET_FLOAT\n";
    out << "ElementDataFile = " << raw_path.filename().string() << '\n';

    std::ofstream raw(raw_path, std::ios::binary);
    if (!raw) throw UsageError("cannot write MetaImage payload: " + raw_path.string());
    std::vector<float> payload(image.voxels().size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(image.voxels()[i]);
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

}  // namespace gpmm
