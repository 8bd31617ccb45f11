#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::data {

using Dims = std::array<std::size_t, 3>;

// Dense 3-D grid, x fastest.
template <typename T>
struct Volume {
  Dims dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per axis
  std::vector<T> voxels;

  Volume() = default;
  explicit Volume(Dims d, T fill = T{}) : dims(d), voxels(d[0] * d[1] * d[2], fill) {
    if (d[0] == 0 || d[1] == 0 || d[2] == 0) throw ShapeError("volume dims must be positive");
  }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * dims[1] + y) * dims[0] + x;
  }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  T operator()(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }
  bool operator==(const Volume&) const = default;
};

using LabelVolume = Volume<std::uint8_t>;
using ImageVolume = Volume<double>;

// Half-open box [lo, hi) per axis.
struct Box {
  Dims lo{0, 0, 0};
  Dims hi{0, 0, 0};
  Dims extent() const { return {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}; }
  bool operator==(const Box&) const = default;
};

std::size_t count_foreground(const LabelVolume& v);

// Binary dilation with an m*m*m cube. Odd m is centred on the voxel; even m
// spans offsets {0..m-1} from it.
LabelVolume dilate_labels(const LabelVolume& v, int m);

// Largest 26-connected foreground component (first found wins ties).
LabelVolume largest_component(const LabelVolume& v);

Box bounding_box(const LabelVolume& v);

// Grows each extent by d_pct percent in total, half per side rounded up,
// clamped to the volume.
Box expand_box(const Box& box, const Dims& dims, double d_pct);

template <typename T>
Volume<T> crop(const Volume<T>& v, const Box& b) {
  const Dims e = b.extent();
  Volume<T> out(e);
  out.spacing = v.spacing;
  for (std::size_t z = 0; z < e[2]; ++z)
    for (std::size_t y = 0; y < e[1]; ++y)
      for (std::size_t x = 0; x < e[0]; ++x) out(x, y, z) = v(b.lo[0] + x, b.lo[1] + y, b.lo[2] + z);
  return out;
}

// Centre-crops or zero-pads every axis to n, with floor((a - b) / 2) offsets.
template <typename T>
Volume<T> pad_or_crop(const Volume<T>& v, std::size_t n) {
  if (n == 0) throw ShapeError("pad_or_crop: n must be >= 1");
  Volume<T> out(Dims{n, n, n});
  out.spacing = v.spacing;
  std::array<std::size_t, 3> src0{}, dst0{}, len{};
  for (int a = 0; a < 3; ++a) {
    if (v.dims[a] >= n) {
      src0[a] = (v.dims[a] - n) / 2;
      len[a] = n;
    } else {
      dst0[a] = (n - v.dims[a]) / 2;
      len[a] = v.dims[a];
    }
  }
  for (std::size_t z = 0; z < len[2]; ++z)
    for (std::size_t y = 0; y < len[1]; ++y)
      for (std::size_t x = 0; x < len[0]; ++x)
        out(dst0[0] + x, dst0[1] + y, dst0[2] + z) = v(src0[0] + x, src0[1] + y, src0[2] + z);
  return out;
}

struct RoiCrop {
  LabelVolume label;
  ImageVolume image;
  Box box;
};

// Box around the largest component of `label`, grown by d_pct, applied to
// both volumes.
RoiCrop crop_roi(const LabelVolume& label, const ImageVolume& image, double d_pct);

// dilate -> crop_roi -> pad_or_crop to n^3.
RoiCrop prepare_roi(const LabelVolume& label, const ImageVolume& image, int m, double d_pct,
                    std::size_t n);

}  // namespace tipsfuse::data
