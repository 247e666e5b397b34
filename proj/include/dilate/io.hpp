#pragma once

#include "dilate/geometry.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dilate::io {

namespace fs = std::filesystem;

/// OBJ with `v` and `f` lines only. Polygon faces are rejected.
void write_obj(const fs::path& path, const TriMesh& mesh);
TriMesh read_obj(const fs::path& path);

/// Sidecar with one integer label per line, in vertex order.
void write_labels(const fs::path& path, const std::vector<int>& labels);
std::vector<int> read_labels(const fs::path& path);

/// `x y z [label...]` per line. Extra integer columns are returned in `extra_columns`.
void write_xyz(const fs::path& path, const PointCloud& pc);
void write_xyz(const fs::path& path, const std::vector<Vec3>& points, const std::vector<std::vector<int>>& columns);
PointCloud read_xyz(const fs::path& path);
void read_xyz(const fs::path& path, std::vector<Vec3>& points, std::vector<std::vector<int>>& columns);

inline constexpr char kGridMagic[16] = "DILATEGRID";
inline constexpr char kBlobMagic[16] = "DILATEBLOB";

/// 16-byte magic, LE u32 nx,ny,nz, f32 origin[3], f32 cell size, f32 values x-fastest.
void write_grid(const fs::path& path, const ScalarGrid& grid);
ScalarGrid read_grid(const fs::path& path);

/// Named little-endian arrays with the same framing idiom as the grid file:
/// 16-byte magic, u32 section count, then per section u32 name length, name bytes,
/// u32 dtype (0 = f32, 1 = i32), u32 rank, u32 dims[rank], payload.
struct BlobSection {
  std::vector<std::uint32_t> shape;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;
  bool is_int = false;
};
using Blob = std::map<std::string, BlobSection>;

void write_blob(const fs::path& path, const Blob& blob);
Blob read_blob(const fs::path& path);

BlobSection f32_section(std::vector<std::uint32_t> shape, std::vector<float> data);
BlobSection i32_section(std::vector<std::uint32_t> shape, std::vector<std::int32_t> data);
const BlobSection& section(const Blob& blob, const std::string& name);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace dilate::io
