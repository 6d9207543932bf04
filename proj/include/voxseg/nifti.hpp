#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/nifti_header.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

namespace detail {

template <typename T>
inline void bswap_inplace(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

inline void bswap_header(NiftiHeader& h) {
  bswap_inplace(h.sizeof_hdr);
  bswap_inplace(h.extents);
  bswap_inplace(h.session_error);
  for (auto& v : h.dim) bswap_inplace(v);
  bswap_inplace(h.intent_p1);
  bswap_inplace(h.intent_p2);
  bswap_inplace(h.intent_p3);
  bswap_inplace(h.intent_code);
  bswap_inplace(h.datatype);
  bswap_inplace(h.bitpix);
  bswap_inplace(h.slice_start);
  for (auto& v : h.pixdim) bswap_inplace(v);
  bswap_inplace(h.vox_offset);
  bswap_inplace(h.scl_slope);
  bswap_inplace(h.scl_inter);
  bswap_inplace(h.slice_end);
  bswap_inplace(h.cal_max);
  bswap_inplace(h.cal_min);
  bswap_inplace(h.slice_duration);
  bswap_inplace(h.toffset);
  bswap_inplace(h.glmax);
  bswap_inplace(h.glmin);
  bswap_inplace(h.qform_code);
  bswap_inplace(h.sform_code);
  bswap_inplace(h.quatern_b);
  bswap_inplace(h.quatern_c);
  bswap_inplace(h.quatern_d);
  bswap_inplace(h.qoffset_x);
  bswap_inplace(h.qoffset_y);
  bswap_inplace(h.qoffset_z);
  for (auto& v : h.srow_x) bswap_inplace(v);
  for (auto& v : h.srow_y) bswap_inplace(v);
  for (auto& v : h.srow_z) bswap_inplace(v);
}

// gzread handles plain files transparently; "wbT" writes raw bytes, so the
// same handle type serves .nii and .nii.gz on both sides.
struct GzHandle {
  gzFile f = nullptr;
  explicit GzHandle(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
  ~GzHandle() {
    if (f) gzclose(f);
  }
  GzHandle(const GzHandle&) = delete;
  GzHandle& operator=(const GzHandle&) = delete;
  int close() {
    const int rc = f ? gzclose(f) : Z_OK;
    f = nullptr;
    return rc;
  }
};

inline bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace detail

inline int16_t nifti_bitpix(int16_t datatype) {
  switch (datatype) {
    case nifti_type::kUint8: return 8;
    case nifti_type::kInt16: return 16;
    case nifti_type::kInt32: return 32;
    case nifti_type::kFloat32: return 32;
    case nifti_type::kFloat64: return 64;
    default: throw UnsupportedDatatype("nifti datatype code " + std::to_string(datatype));
  }
}

struct NiftiVolume {
  Volume3 image;
  NiftiHeader header;
};

inline NiftiVolume read_nifti(const std::string& path) {
  detail::GzHandle file(path, "rb");
  if (!file.f) throw IoFailure("cannot open " + path);

  NiftiHeader h;
  if (gzread(file.f, &h, sizeof(h)) != static_cast<int>(sizeof(h)))
    throw TruncatedFile(path + ": shorter than the 348-byte header");

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    int32_t probe = h.sizeof_hdr;
    detail::bswap_inplace(probe);
    if (probe != 348) throw BadMagic(path + ": not a NIfTI-1 file");
    detail::bswap_header(h);
    swapped = true;
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 || h.magic[3] != '\0')
    throw BadMagic(path + ": magic is not \"n+1\" (two-file pairs unsupported)");

  const int16_t bits = nifti_bitpix(h.datatype);
  if (h.dim[0] < 1 || h.dim[0] > 7) throw BadMagic(path + ": corrupt dimension count");
  for (int i = 4; i <= h.dim[0]; ++i)
    if (h.dim[i] > 1) throw UnsupportedDatatype(path + ": only 3-D volumes are supported");
  const index_t nx = std::max<index_t>(1, h.dim[1]);
  const index_t ny = std::max<index_t>(1, h.dim[2]);
  const index_t nz = std::max<index_t>(1, h.dim[3]);

  const z_off_t offset = static_cast<z_off_t>(h.vox_offset);
  if (offset < static_cast<z_off_t>(sizeof(h)) || gzseek(file.f, offset, SEEK_SET) < 0)
    throw TruncatedFile(path + ": bad voxel data offset");

  const size_t count = static_cast<size_t>(nx) * ny * nz;
  const size_t elem = static_cast<size_t>(bits) / 8;
  std::vector<unsigned char> raw(count * elem);
  if (gzread(file.f, raw.data(), static_cast<unsigned>(raw.size())) != static_cast<int>(raw.size()))
    throw TruncatedFile(path + ": voxel data shorter than the header promises");

  // disk order is x-fastest, which matches Grid3's width-fastest layout
  Volume3 vol(nz, ny, nx);
  const bool scale = h.scl_slope != 0.0f;
  for (size_t i = 0; i < count; ++i) {
    const unsigned char* src = raw.data() + i * elem;
    double v = 0.0;
    switch (h.datatype) {
      case nifti_type::kUint8: v = *src; break;
      case nifti_type::kInt16: {
        int16_t x;
        std::memcpy(&x, src, 2);
        if (swapped) detail::bswap_inplace(x);
        v = x;
        break;
      }
      case nifti_type::kInt32: {
        int32_t x;
        std::memcpy(&x, src, 4);
        if (swapped) detail::bswap_inplace(x);
        v = x;
        break;
      }
      case nifti_type::kFloat32: {
        float x;
        std::memcpy(&x, src, 4);
        if (swapped) detail::bswap_inplace(x);
        v = x;
        break;
      }
      default: {
        double x;
        std::memcpy(&x, src, 8);
        if (swapped) detail::bswap_inplace(x);
        v = x;
        break;
      }
    }
    vol.data[i] = scale ? v * h.scl_slope + h.scl_inter : v;
  }
  vol.spacing[0] = h.pixdim[3];
  vol.spacing[1] = h.pixdim[2];
  vol.spacing[2] = h.pixdim[1];
  return {std::move(vol), h};
}

namespace detail {

// Header fields not tied to the payload (affine, description, intent) ride
// through from `base` untouched; geometry and type fields are rewritten.
template <typename GridT>
inline NiftiHeader stamp_header(const GridT& g, int16_t datatype, const NiftiHeader* base) {
  NiftiHeader h = base ? *base : NiftiHeader{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(g.dim[2]);
  h.dim[2] = static_cast<int16_t>(g.dim[1]);
  h.dim[3] = static_cast<int16_t>(g.dim[0]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = nifti_bitpix(datatype);
  h.pixdim[1] = static_cast<float>(g.spacing[2]);
  h.pixdim[2] = static_cast<float>(g.spacing[1]);
  h.pixdim[3] = static_cast<float>(g.spacing[0]);
  h.vox_offset = 352;
  h.scl_slope = 0;
  h.scl_inter = 0;
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

inline void write_nifti_bytes(const std::string& path, const NiftiHeader& h, const std::vector<unsigned char>& body) {
  GzHandle file(path, ends_with(path, ".gz") ? "wb" : "wbT");
  if (!file.f) throw IoFailure("cannot create " + path);
  const char pad[4] = {0, 0, 0, 0};
  if (gzwrite(file.f, &h, sizeof(h)) != static_cast<int>(sizeof(h)) || gzwrite(file.f, pad, 4) != 4 ||
      (!body.empty() && gzwrite(file.f, body.data(), static_cast<unsigned>(body.size())) != static_cast<int>(body.size())))
    throw IoFailure("short write to " + path);
  if (file.close() != Z_OK) throw IoFailure("failed to finalize " + path);
}

}  // namespace detail

inline void write_nifti(const Volume3& v, const std::string& path, int16_t datatype,
                        const NiftiHeader* base = nullptr) {
  const NiftiHeader h = detail::stamp_header(v, datatype, base);
  const size_t elem = static_cast<size_t>(h.bitpix) / 8;
  std::vector<unsigned char> body(v.data.size() * elem);
  for (size_t i = 0; i < v.data.size(); ++i) {
    unsigned char* dst = body.data() + i * elem;
    switch (datatype) {
      case nifti_type::kUint8: {
        *dst = static_cast<unsigned char>(std::llround(v.data[i]));
        break;
      }
      case nifti_type::kInt16: {
        const int16_t x = static_cast<int16_t>(std::llround(v.data[i]));
        std::memcpy(dst, &x, 2);
        break;
      }
      case nifti_type::kInt32: {
        const int32_t x = static_cast<int32_t>(std::llround(v.data[i]));
        std::memcpy(dst, &x, 4);
        break;
      }
      case nifti_type::kFloat32: {
        const float x = static_cast<float>(v.data[i]);
        std::memcpy(dst, &x, 4);
        break;
      }
      default: {
        std::memcpy(dst, &v.data[i], 8);
        break;
      }
    }
  }
  detail::write_nifti_bytes(path, h, body);
}

inline void write_nifti(const LabelGrid& labels, const std::string& path, const NiftiHeader* base = nullptr) {
  const NiftiHeader h = detail::stamp_header(labels, nifti_type::kUint8, base);
  std::vector<unsigned char> body(labels.data.begin(), labels.data.end());
  detail::write_nifti_bytes(path, h, body);
}

// Reads a label map: values must already be integers in [0, 255].
inline LabelGrid read_labels(const std::string& path) {
  NiftiVolume nv = read_nifti(path);
  LabelGrid labels(nv.image.dim[0], nv.image.dim[1], nv.image.dim[2], 0);
  for (int a = 0; a < 3; ++a) labels.spacing[a] = nv.image.spacing[a];
  for (size_t i = 0; i < nv.image.data.size(); ++i) {
    const long long v = std::llround(nv.image.data[i]);
    if (v < 0 || v > 255 || static_cast<double>(v) != nv.image.data[i])
      throw InvalidLabel(path + ": voxel value is not an 8-bit label");
    labels.data[i] = static_cast<uint8_t>(v);
  }
  return labels;
}

}  // namespace voxseg
