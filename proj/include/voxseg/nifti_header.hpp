#pragma once

#include <cstdint>
#include <cstring>

namespace voxseg {

// NIfTI-1 on-disk header, 348 bytes, field-for-field. Written little-endian;
// big-endian files are detected via dim[0] and byte-swapped on read.
#pragma pack(push, 1)
struct NiftiHeader {
  int32_t sizeof_hdr = 348;
  char data_type[10] = {};
  char db_name[18] = {};
  int32_t extents = 0;
  int16_t session_error = 0;
  char regular = 'r';
  char dim_info = 0;
  int16_t dim[8] = {3, 1, 1, 1, 1, 1, 1, 1};
  float intent_p1 = 0, intent_p2 = 0, intent_p3 = 0;
  int16_t intent_code = 0;
  int16_t datatype = 0;
  int16_t bitpix = 0;
  int16_t slice_start = 0;
  float pixdim[8] = {1, 1, 1, 1, 0, 0, 0, 0};
  float vox_offset = 352;
  float scl_slope = 0;
  float scl_inter = 0;
  int16_t slice_end = 0;
  char slice_code = 0;
  char xyzt_units = 0;
  float cal_max = 0, cal_min = 0;
  float slice_duration = 0;
  float toffset = 0;
  int32_t glmax = 0, glmin = 0;
  char descrip[80] = {};
  char aux_file[24] = {};
  int16_t qform_code = 0;
  int16_t sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  float srow_x[4] = {};
  float srow_y[4] = {};
  float srow_z[4] = {};
  char intent_name[16] = {};
  char magic[4] = {'n', '+', '1', '\0'};
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be exactly 348 bytes");

namespace nifti_type {
constexpr int16_t kUint8 = 2;
constexpr int16_t kInt16 = 4;
constexpr int16_t kInt32 = 8;
constexpr int16_t kFloat32 = 16;
constexpr int16_t kFloat64 = 64;
}  // namespace nifti_type

}  // namespace voxseg
