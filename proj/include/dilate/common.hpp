#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dilate {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Base class of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define DILATE_DEFINE_ERROR(Name)                                 \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  };

DILATE_DEFINE_ERROR(DegenerateInput)
DILATE_DEFINE_ERROR(EmptySurface)
DILATE_DEFINE_ERROR(IsolatedVertex)
DILATE_DEFINE_ERROR(InvalidParams)
DILATE_DEFINE_ERROR(EmptyPart)
DILATE_DEFINE_ERROR(GenerationFailed)
DILATE_DEFINE_ERROR(TrainingDiverged)
DILATE_DEFINE_ERROR(FitDiverged)
DILATE_DEFINE_ERROR(TopologyMismatch)
DILATE_DEFINE_ERROR(LengthMismatch)
DILATE_DEFINE_ERROR(FormatError)

#undef DILATE_DEFINE_ERROR

/// Raised by voxelize when a point lies outside the grid.
class OutOfBounds : public Error {
 public:
  OutOfBounds(std::size_t index, const std::string& what)
      : Error("OutOfBounds: " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Stateless 64-bit mixer used to derive named sub-seeds from one user seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t sub_seed(std::uint64_t seed, const std::string& name) {
  return splitmix64(seed ^ fnv1a64(name));
}

}  // namespace dilate
