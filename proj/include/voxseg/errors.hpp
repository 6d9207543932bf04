#pragma once

#include <stdexcept>
#include <string>

namespace voxseg {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define VOXSEG_ERROR_TYPE(Name)            \
  struct Name : Error {                    \
    using Error::Error;                    \
  }

VOXSEG_ERROR_TYPE(ShapeMismatch);      // operand extents disagree
VOXSEG_ERROR_TYPE(EmptyMask);          // brain mask has no foreground voxel
VOXSEG_ERROR_TYPE(DegenerateChannel);  // channel is constant inside the mask
VOXSEG_ERROR_TYPE(InvalidSpec);        // network spec violates its constraints
VOXSEG_ERROR_TYPE(InvalidLabel);       // label voxel outside {0,1,2,4}
VOXSEG_ERROR_TYPE(NonFiniteGradient);  // NaN/Inf gradient before an update
VOXSEG_ERROR_TYPE(WindowTooLarge);     // sliding window exceeds the planned box
VOXSEG_ERROR_TYPE(BadMagic);           // file magic bytes do not match
VOXSEG_ERROR_TYPE(UnsupportedDatatype);
VOXSEG_ERROR_TYPE(TruncatedFile);
VOXSEG_ERROR_TYPE(MissingModality);    // subject directory lacks a channel file
VOXSEG_ERROR_TYPE(TooFewSubjects);     // k-fold split needs at least k subjects
VOXSEG_ERROR_TYPE(IoFailure);
VOXSEG_ERROR_TYPE(ConfigError);

#undef VOXSEG_ERROR_TYPE

}  // namespace voxseg
