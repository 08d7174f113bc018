#pragma once

#include "gpmm/core.hpp"

#include <string>

namespace gpmm {

struct Landmark {
    std::string name;
    Point3 point;
};

/// CSV `name,x,y,z` with a header row. Names must be unique.
std::vector<Landmark> read_landmarks(const std::string& path);
void write_landmarks(const std::vector<Landmark>& landmarks, const std::string& path);

/// Pairs reference and target landmarks by name; throws when a name is
/// missing on either side.
std::vector<std::pair<Landmark, Landmark>> match_landmarks(
    const std::vector<Landmark>& reference, const std::vector<Landmark>& target);

}  // namespace gpmm
