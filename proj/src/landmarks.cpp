#include "gpmm/landmarks.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace gpmm {

std::vector<Landmark> read_landmarks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open landmark CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw UsageError("landmark CSV is empty: " + path);

    std::vector<Landmark> landmarks;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string name, xs, ys, zs;
        if (!std::getline(ls, name, ',') || !std::getline(ls, xs, ',') ||
            !std::getline(ls, ys, ',') || !std::getline(ls, zs))
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected name,x,y,z");
        Landmark lm;
        lm.name = name;
        try {
            lm.point = Point3(std::stod(xs), std::stod(ys), std::stod(zs));
        } catch (const std::exception&) {
            throw UsageError(path + ":" + std::to_string(lineno) + ": malformed coordinate");
        }
        if (!seen.insert(lm.name).second)
            throw UsageError(path + ": duplicate landmark name '" + lm.name + "'");
        landmarks.push_back(std::move(lm));
    }
    return landmarks;
}

void write_landmarks(const std::vector<Landmark>& landmarks, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write landmark CSV: " + path);
    out << "name,x,y,z\n";
    out.precision(17);
    for (const auto& lm : landmarks)
        out << lm.name << ',' << lm.point.x() << ',' << lm.point.y() << ',' << lm.point.z()
            << '\n';
}

std::vector<std::pair<Landmark, Landmark>> match_landmarks(
    const std::vector<Landmark>& reference, const std::vector<Landmark>& target) {
    std::vector<std::pair<Landmark, Landmark>> matched;
    for (const auto& ref : reference) {
        bool found = false;
        for (const auto& tgt : target) {
            if (tgt.name == ref.name) {
                matched.emplace_back(ref, tgt);
                found = true;
                break;
            }
        }
        if (!found) throw UsageError("landmark '" + ref.name + "' missing in target set");
    }
    return matched;
}

}  // namespace gpmm
