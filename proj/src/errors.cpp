#include "voxelforge/errors.hpp"

namespace vxf {

int exit_code(const Error& error) noexcept {
  return static_cast<int>(error.kind());
}

}  // namespace vxf
