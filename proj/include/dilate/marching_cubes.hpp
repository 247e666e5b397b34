#pragma once

#include "dilate/geometry.hpp"

namespace dilate {

/// Which side of the iso level counts as the solid interior.
enum class InsideSide { Below, Above };

/// Extracts the iso surface of a cell-centered scalar field. Lattice nodes are the cell
/// centers; output vertices are shared between neighbouring cubes, so the mesh is
/// watertight wherever the level set stays away from the grid boundary. Faces are
/// oriented with normals pointing out of the interior. Throws EmptySurface.
TriMesh marching_cubes(const ScalarGrid& field, float iso, InsideSide inside = InsideSide::Below);

}  // namespace dilate
