#include "tipsfuse/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tipsfuse::data {

std::size_t count_foreground(const LabelVolume& v) {
  return static_cast<std::size_t>(std::count_if(v.voxels.begin(), v.voxels.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

LabelVolume dilate_labels(const LabelVolume& v, int m) {
  if (m < 1) throw std::invalid_argument("dilate_labels: kernel edge must be >= 1");
  const long lo = (m % 2 == 1) ? -(m - 1) / 2 : 0;
  const long hi = lo + m - 1;
  LabelVolume out = v;
  const long nx = static_cast<long>(v.dims[0]), ny = static_cast<long>(v.dims[1]),
             nz = static_cast<long>(v.dims[2]);
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x) {
        if (!v(x, y, z)) continue;
        for (long dz = lo; dz <= hi; ++dz)
          for (long dy = lo; dy <= hi; ++dy)
            for (long dx = lo; dx <= hi; ++dx) {
              const long px = x + dx, py = y + dy, pz = z + dz;
              if (px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny || pz >= nz) continue;
              out(px, py, pz) = 1;
            }
      }
  return out;
}

LabelVolume largest_component(const LabelVolume& v) {
  const std::size_t n = v.voxels.size();
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> sizes, stack;
  const long nx = static_cast<long>(v.dims[0]), ny = static_cast<long>(v.dims[1]),
             nz = static_cast<long>(v.dims[2]);
  for (std::size_t start = 0; start < n; ++start) {
    if (!v.voxels[start] || comp[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    sizes.push_back(0);
    stack.push_back(start);
    comp[start] = id;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++sizes[id];
      const long x = static_cast<long>(cur % v.dims[0]);
      const long y = static_cast<long>((cur / v.dims[0]) % v.dims[1]);
      const long z = static_cast<long>(cur / (v.dims[0] * v.dims[1]));
      for (long dz = -1; dz <= 1; ++dz)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long px = x + dx, py = y + dy, pz = z + dz;
            if (px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny || pz >= nz) continue;
            const std::size_t k = v.index(px, py, pz);
            if (v.voxels[k] && comp[k] < 0) {
              comp[k] = id;
              stack.push_back(k);
            }
          }
    }
  }
  LabelVolume out(v.dims);
  out.spacing = v.spacing;
  if (sizes.empty()) return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t k = 0; k < n; ++k) out.voxels[k] = comp[k] == best ? 1 : 0;
  return out;
}

Box bounding_box(const LabelVolume& v) {
  Box b{{v.dims[0], v.dims[1], v.dims[2]}, {0, 0, 0}};
  bool any = false;
  for (std::size_t z = 0; z < v.dims[2]; ++z)
    for (std::size_t y = 0; y < v.dims[1]; ++y)
      for (std::size_t x = 0; x < v.dims[0]; ++x) {
        if (!v(x, y, z)) continue;
        any = true;
        const std::array<std::size_t, 3> p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          b.lo[a] = std::min(b.lo[a], p[a]);
          b.hi[a] = std::max(b.hi[a], p[a] + 1);
        }
      }
  if (!any) throw DataError("bounding_box: label volume is empty");
  return b;
}

Box expand_box(const Box& box, const Dims& dims, double d_pct) {
  if (!(d_pct >= 0.0)) throw std::invalid_argument("expand_box: d_pct must be >= 0");
  Box out = box;
  for (int a = 0; a < 3; ++a) {
    const double half = static_cast<double>(box.hi[a] - box.lo[a]) * d_pct / 200.0;
    const auto side = static_cast<std::size_t>(std::ceil(half - 1e-9));
    out.lo[a] = box.lo[a] >= side ? box.lo[a] - side : 0;
    out.hi[a] = std::min(dims[a], box.hi[a] + side);
  }
  return out;
}

RoiCrop crop_roi(const LabelVolume& label, const ImageVolume& image, double d_pct) {
  if (label.dims != image.dims) throw ShapeError("crop_roi: label and image dims differ");
  if (count_foreground(label) == 0) throw DataError("crop_roi: label volume is empty");
  const LabelVolume main = largest_component(label);
  const Box box = expand_box(bounding_box(main), label.dims, d_pct);
  return {crop(label, box), crop(image, box), box};
}

RoiCrop prepare_roi(const LabelVolume& label, const ImageVolume& image, int m, double d_pct,
                    std::size_t n) {
  RoiCrop roi = crop_roi(dilate_labels(label, m), image, d_pct);
  roi.label = pad_or_crop(roi.label, n);
  roi.image = pad_or_crop(roi.image, n);
  return roi;
}

}  // namespace tipsfuse::data
