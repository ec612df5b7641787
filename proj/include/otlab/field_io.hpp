// Flat binary field dumps for debugging: a small header (magic, domain kind,
// resolution) followed by the N*N physical values row-major. Not a
// stability-guaranteed format.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>

#include "otlab/fields.hpp"

namespace otlab {

namespace detail {

constexpr char kFieldMagic[4] = {'O', 'T', 'F', '1'};

}  // namespace detail

inline void save_field(const ScalarField& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(detail::kFieldMagic, 4);
  std::uint32_t kind = f.grid().domain().is_torus() ? 0 : 1;
  std::uint32_t n = static_cast<std::uint32_t>(f.grid().resolution());
  out.write(reinterpret_cast<const char*>(&kind), 4);
  out.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<double> vals = f.physical_values();
  out.write(reinterpret_cast<const char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline ScalarField load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  std::uint32_t kind = 0, n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&kind), 4);
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in || std::memcmp(magic, detail::kFieldMagic, 4) != 0 || kind > 1 || n < 2)
    throw std::runtime_error("not a field dump: " + path);
  Grid grid(kind == 0 ? Domain::torus() : Domain::square(), static_cast<int>(n));
  std::vector<double> vals(static_cast<size_t>(n) * n);
  in.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(vals.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated field dump: " + path);
  return ScalarField::from_physical_values(grid, std::move(vals));
}

}  // namespace otlab
