#include "dilate/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dilate::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated file " + path.string());
  return v;
}

void check_magic(std::istream& in, const char (&magic)[16], const fs::path& path) {
  char buf[16];
  if (!in.read(buf, 16) || std::memcmp(buf, magic, 16) != 0) {
    throw FormatError(path.string() + ": bad magic");
  }
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

std::string read_text(const fs::path& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- OBJ ------------------------------------------------------------------------

void write_obj(const fs::path& path, const TriMesh& mesh) {
  std::string s;
  s.reserve(mesh.num_vertices() * 40 + mesh.num_faces() * 24);
  for (const Vec3& v : mesh.vertices()) {
    s += "v ";
    append_double(s, v.x());
    s += ' ';
    append_double(s, v.y());
    s += ' ';
    append_double(s, v.z());
    s += '\n';
  }
  for (const Face& f : mesh.faces()) {
    s += "f " + std::to_string(f[0] + 1) + ' ' + std::to_string(f[1] + 1) + ' ' + std::to_string(f[2] + 1) + '\n';
  }
  write_text(path, s);
}

TriMesh read_obj(const fs::path& path) {
  auto in = open_in(path);
  std::vector<Vec3> verts;
  std::vector<Face> faces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i < 0 ? static_cast<int>(verts.size()) + i : i - 1);
      }
      if (idx.size() != 3) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": only triangles are supported");
      faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  return TriMesh(std::move(verts), std::move(faces));
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  std::string s;
  for (int l : labels) s += std::to_string(l) + '\n';
  write_text(path, s);
}

std::vector<int> read_labels(const fs::path& path) {
  auto in = open_in(path);
  std::vector<int> out;
  int v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw FormatError(path.string() + ": bad label line");
  return out;
}

// --- XYZ ------------------------------------------------------------------------

void write_xyz(const fs::path& path, const std::vector<Vec3>& points, const std::vector<std::vector<int>>& columns) {
  for (const auto& c : columns) {
    if (c.size() != points.size()) throw LengthMismatch("xyz column length differs from point count");
  }
  std::string s;
  s.reserve(points.size() * 48);
  for (std::size_t i = 0; i < points.size(); ++i) {
    append_double(s, points[i].x());
    s += ' ';
    append_double(s, points[i].y());
    s += ' ';
    append_double(s, points[i].z());
    for (const auto& c : columns) s += ' ' + std::to_string(c[i]);
    s += '\n';
  }
  write_text(path, s);
}

void write_xyz(const fs::path& path, const PointCloud& pc) {
  std::vector<std::vector<int>> cols;
  if (pc.has_labels()) cols.push_back(pc.labels);
  write_xyz(path, pc.points, cols);
}

void read_xyz(const fs::path& path, std::vector<Vec3>& points, std::vector<std::vector<int>>& columns) {
  auto in = open_in(path);
  points.clear();
  columns.clear();
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::vector<int>> cols;
  int ncols = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad point");
    std::vector<int> extra;
    int v;
    while (ls >> v) extra.push_back(v);
    if (ncols < 0) {
      ncols = static_cast<int>(extra.size());
      cols.assign(ncols, {});
    } else if (ncols != static_cast<int>(extra.size())) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": inconsistent column count");
    }
    points.push_back(p);
    for (int c = 0; c < ncols; ++c) cols[c].push_back(extra[c]);
  }
  columns = std::move(cols);
}

PointCloud read_xyz(const fs::path& path) {
  PointCloud pc;
  std::vector<std::vector<int>> cols;
  read_xyz(path, pc.points, cols);
  if (!cols.empty()) pc.labels = cols[0];
  pc.validate();
  return pc;
}

// --- grid -------------------------------------------------------------------------

void write_grid(const fs::path& path, const ScalarGrid& grid) {
  auto out = open_out(path, true);
  out.write(kGridMagic, 16);
  for (int a = 0; a < 3; ++a) put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.resolution()[a]));
  for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(grid.origin()[a]));
  put<float>(out, static_cast<float>(grid.cell_size()));
  const auto v = grid.values();
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

ScalarGrid read_grid(const fs::path& path) {
  auto in = open_in(path, true);
  check_magic(in, kGridMagic, path);
  std::array<int, 3> res;
  for (int a = 0; a < 3; ++a) res[a] = static_cast<int>(get<std::uint32_t>(in, path));
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = get<float>(in, path);
  const double cell = get<float>(in, path);
  std::vector<float> values(static_cast<std::size_t>(res[0]) * res[1] * res[2]);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
    throw FormatError("truncated grid " + path.string());
  }
  return ScalarGrid(res, origin, cell, std::move(values));
}

// --- blob -------------------------------------------------------------------------

BlobSection f32_section(std::vector<std::uint32_t> shape, std::vector<float> data) {
  BlobSection s;
  s.shape = std::move(shape);
  s.f32 = std::move(data);
  return s;
}

BlobSection i32_section(std::vector<std::uint32_t> shape, std::vector<std::int32_t> data) {
  BlobSection s;
  s.shape = std::move(shape);
  s.i32 = std::move(data);
  s.is_int = true;
  return s;
}

const BlobSection& section(const Blob& blob, const std::string& name) {
  auto it = blob.find(name);
  if (it == blob.end()) throw FormatError("blob is missing section '" + name + "'");
  return it->second;
}

void write_blob(const fs::path& path, const Blob& blob) {
  auto out = open_out(path, true);
  out.write(kBlobMagic, 16);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.size()));
  for (const auto& [name, s] : blob) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, s.is_int ? 1u : 0u);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.shape.size()));
    std::size_t count = 1;
    for (auto d : s.shape) {
      put<std::uint32_t>(out, d);
      count *= d;
    }
    if (s.is_int) {
      if (s.i32.size() != count) throw FormatError("blob section '" + name + "' size does not match shape");
      out.write(reinterpret_cast<const char*>(s.i32.data()), static_cast<std::streamsize>(count * 4));
    } else {
      if (s.f32.size() != count) throw FormatError("blob section '" + name + "' size does not match shape");
      out.write(reinterpret_cast<const char*>(s.f32.data()), static_cast<std::streamsize>(count * 4));
    }
  }
}

Blob read_blob(const fs::path& path) {
  auto in = open_in(path, true);
  check_magic(in, kBlobMagic, path);
  Blob blob;
  const auto n = get<std::uint32_t>(in, path);
  for (std::uint32_t s = 0; s < n; ++s) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("truncated blob " + path.string());
    BlobSection sec;
    sec.is_int = get<std::uint32_t>(in, path) == 1;
    const auto rank = get<std::uint32_t>(in, path);
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      sec.shape.push_back(get<std::uint32_t>(in, path));
      count *= sec.shape.back();
    }
    char* dst;
    if (sec.is_int) {
      sec.i32.resize(count);
      dst = reinterpret_cast<char*>(sec.i32.data());
    } else {
      sec.f32.resize(count);
      dst = reinterpret_cast<char*>(sec.f32.data());
    }
    if (!in.read(dst, static_cast<std::streamsize>(count * 4))) throw FormatError("truncated blob " + path.string());
    blob.emplace(std::move(name), std::move(sec));
  }
  return blob;
}

}  // namespace dilate::io
