#pragma once

// Content hashes used to tie persisted artifacts to the mesh, patch layout
// and material they were computed from.

#include "elmono/mesh.hpp"

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

namespace elmono {

/// 64-bit FNV-1a accumulator.
class Hasher {
 public:
  Hasher& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Hasher& add(double x) {
    if (x == 0.0) x = 0.0;  // fold -0.0
    return bytes(&x, sizeof x);
  }
  Hasher& add(std::int64_t x) { return bytes(&x, sizeof x); }
  Hasher& add(int x) { return add(static_cast<std::int64_t>(x)); }
  Hasher& add(std::string_view s) {
    add(static_cast<std::int64_t>(s.size()));
    return bytes(s.data(), s.size());
  }
  template <int Dim>
  Hasher& add(const Box<Dim>& b) {
    for (int a = 0; a < Dim; ++a) add(b.lo[a]).add(b.hi[a]);
    return *this;
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << state_;
    return os.str();
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

template <int Dim>
std::string layout_hash(const PatchLayout<Dim>& layout) {
  Hasher h;
  h.add(std::string_view("layout")).add(Dim).add(layout.domain).add(layout.patches_per_face_axis);
  h.add(layout.dirichlet_face.index());
  return h.hex();
}

template <int Dim>
std::string mesh_hash(const Mesh<Dim>& mesh) {
  Hasher h;
  h.add(std::string_view("mesh")).add(Dim).add(mesh.box).add(mesh.resolution);
  h.add(static_cast<std::int64_t>(mesh.num_vertices())).add(static_cast<std::int64_t>(mesh.num_elements()));
  for (const auto& b : mesh.boundary)
    if (b.tag == kDirichletTag) h.add(b.face.index());
  return h.hex();
}

}  // namespace elmono
