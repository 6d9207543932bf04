#pragma once

#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// One training example: multi-channel image block plus congruent label block.
struct SegmentPair {
  Tensor5 image;    // (1, channels, d, h, w)
  LabelGrid label;  // (d, h, w)
};

namespace detail {

inline index_t floor_div(index_t a, index_t b) {
  index_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

// Uniformly draws a cubic segment inside the brain bounding box. Axes where
// the box is narrower than the segment are centered on the box instead, with
// zero padding outside the volume.
inline SegmentPair sample_segment(const LabeledVolume& v, index_t size, Rng& rng) {
  if (!v.labels) throw InvalidSpec("sample_segment: labels required");
  const BoundingBox box = brain_bbox(v.brain_mask);
  BoundingBox seg;
  for (int a = 0; a < 3; ++a) {
    const index_t ext = box.extent(a);
    index_t origin;
    if (ext >= size)
      origin = box.lower[a] + static_cast<index_t>(rng.uniform_int(static_cast<uint64_t>(ext - size + 1)));
    else
      origin = box.lower[a] + detail::floor_div(ext - size, 2);
    seg.lower[a] = origin;
    seg.upper[a] = origin + size;
  }
  SegmentPair pair;
  pair.image = crop_channels(v.channels, seg);
  pair.label = crop_pad(*v.labels, seg, uint8_t{0});
  return pair;
}

}  // namespace voxseg
