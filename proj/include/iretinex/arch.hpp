#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>

#include "iretinex/errors.hpp"

namespace iretinex {

/// Architecture hyper-parameters shared by every stage of the network.
struct ArchConfig {
  std::size_t channels = 16;     // C: feature width at level 0
  std::size_t levels = 2;        // J: deepest level index (J + 1 pyramid levels)
  std::size_t ses_scale = 2;     // s: SES upsampling factor
  std::size_t icrr_width = 16;   // width of the intermediate decomposition convs
  std::size_t rcm_units = 1;     // RCM units per level position
  std::uint64_t seed = 0;        // weight initialization seed

  /// C_j = C·2^j, capped at 8·C.
  std::size_t width(std::size_t level) const {
    const std::size_t factor = std::min<std::size_t>(std::size_t{1} << std::min<std::size_t>(level, 3), 8);
    return channels * factor;
  }

  void validate() const {
    if (channels == 0) throw ConfigError("channels must be >= 1");
    if (ses_scale == 0) throw ConfigError("ses_scale must be >= 1");
    if (icrr_width == 0) throw ConfigError("icrr_width must be >= 1");
    if (rcm_units == 0) throw ConfigError("rcm_units must be >= 1");
    if (levels > 8) throw ConfigError("levels must be <= 8");
  }

  /// Extents must be divisible by 2^J.
  void check_extent(std::size_t h, std::size_t w) const {
    const std::size_t m = std::size_t{1} << levels;
    if (h == 0 || w == 0 || h % m != 0 || w % m != 0) {
      throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) +
                        " is not divisible by 2^" + std::to_string(levels) + " = " +
                        std::to_string(m));
    }
  }
};

}  // namespace iretinex
