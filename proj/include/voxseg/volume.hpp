#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/nifti_header.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

// A multi-channel scan with an optional label map. The brain mask marks
// voxels that are nonzero in at least one channel; statistics and sampling
// are computed inside it. The source header (when the volume came from disk)
// is retained so outputs can be written back into the same anatomical frame.
struct LabeledVolume {
  std::vector<Volume3> channels;
  std::optional<LabelGrid> labels;
  LabelGrid brain_mask;
  std::optional<NiftiHeader> header;

  index_t dim(int axis) const { return brain_mask.dim[axis]; }
};

// Cuts the same box out of every channel into one network-input tensor,
// zero-padding where the box overhangs the volume.
inline Tensor5 crop_channels(const std::vector<Volume3>& channels, const BoundingBox& box) {
  if (channels.empty()) throw ShapeMismatch("crop_channels: no channels");
  Tensor5 out(1, static_cast<index_t>(channels.size()), box.extent(0), box.extent(1), box.extent(2));
  for (size_t c = 0; c < channels.size(); ++c) {
    Volume3 block = crop_pad(channels[c], box, 0.0);
    std::copy(block.data.begin(), block.data.end(), out.channel(0, static_cast<index_t>(c)));
  }
  return out;
}

inline LabelGrid make_brain_mask(const std::vector<Volume3>& channels) {
  if (channels.empty()) throw ShapeMismatch("make_brain_mask: no channels");
  for (const auto& ch : channels)
    if (!ch.same_shape(channels[0])) throw ShapeMismatch("make_brain_mask: channel shapes differ");
  LabelGrid mask(channels[0].dim[0], channels[0].dim[1], channels[0].dim[2], 0);
  for (int a = 0; a < 3; ++a) mask.spacing[a] = channels[0].spacing[a];
  for (size_t i = 0; i < mask.data.size(); ++i)
    for (const auto& ch : channels)
      if (ch.data[i] != 0.0) {
        mask.data[i] = 1;
        break;
      }
  return mask;
}

// Tight half-open box around mask foreground.
inline BoundingBox brain_bbox(const LabelGrid& mask) {
  BoundingBox box;
  index_t lo[3] = {mask.dim[0], mask.dim[1], mask.dim[2]};
  index_t hi[3] = {-1, -1, -1};
  for (index_t z = 0; z < mask.dim[0]; ++z)
    for (index_t y = 0; y < mask.dim[1]; ++y)
      for (index_t x = 0; x < mask.dim[2]; ++x)
        if (mask(z, y, x)) {
          const index_t p[3] = {z, y, x};
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
          }
        }
  if (hi[0] < 0) throw EmptyMask("brain_bbox: mask has no foreground");
  for (int a = 0; a < 3; ++a) {
    box.lower[a] = lo[a];
    box.upper[a] = hi[a] + 1;
  }
  return box;
}

// Zero-mean/unit-variance per channel over mask voxels (population variance);
// voxels outside the mask are forced to zero. Idempotent up to roundoff.
inline void normalize_volume(LabeledVolume& v) {
  if (v.channels.empty()) throw ShapeMismatch("normalize_volume: no channels");
  index_t n_mask = 0;
  for (uint8_t m : v.brain_mask.data) n_mask += (m != 0);
  if (n_mask == 0) throw EmptyMask("normalize_volume: empty brain mask");
  for (auto& ch : v.channels) {
    if (!ch.same_shape(v.brain_mask)) throw ShapeMismatch("normalize_volume: channel/mask shape mismatch");
    double mean = 0.0;
    for (size_t i = 0; i < ch.data.size(); ++i)
      if (v.brain_mask.data[i]) mean += ch.data[i];
    mean /= static_cast<double>(n_mask);
    double var = 0.0;
    for (size_t i = 0; i < ch.data.size(); ++i)
      if (v.brain_mask.data[i]) {
        const double d = ch.data[i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n_mask);
    const double sd = std::sqrt(var);
    if (sd < 1e-8) throw DegenerateChannel("normalize_volume: constant channel inside mask");
    for (size_t i = 0; i < ch.data.size(); ++i)
      ch.data[i] = v.brain_mask.data[i] ? (ch.data[i] - mean) / sd : 0.0;
  }
}

inline void validate_labels(const LabelGrid& labels) {
  for (uint8_t l : labels.data)
    if (l != 0 && l != 1 && l != 2 && l != 4) throw InvalidLabel("label voxel outside {0,1,2,4}");
}

// Hierarchical regions over the raw label values.
enum class Region { WholeTumor = 0, TumorCore = 1, Enhancing = 2 };

inline bool label_in_region(uint8_t label, Region r) {
  switch (r) {
    case Region::WholeTumor: return label == 1 || label == 2 || label == 4;
    case Region::TumorCore: return label == 1 || label == 4;
    case Region::Enhancing: return label == 4;
  }
  return false;
}

inline LabelGrid region_mask(const LabelGrid& labels, Region r) {
  LabelGrid out(labels.dim[0], labels.dim[1], labels.dim[2], 0);
  for (int a = 0; a < 3; ++a) out.spacing[a] = labels.spacing[a];
  for (size_t i = 0; i < labels.data.size(); ++i) out.data[i] = label_in_region(labels.data[i], r) ? 1 : 0;
  return out;
}

}  // namespace voxseg
