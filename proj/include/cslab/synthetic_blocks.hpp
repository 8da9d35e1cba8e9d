#pragma once

#include <array>
#include <string_view>

namespace cslab {

// Private-use sub-blocks reserved for synthetic languages. The script id doubles as the
// language id.
struct SyntheticBlock {
  std::string_view id;
  char32_t lo;
  char32_t hi;
};

inline constexpr std::array<SyntheticBlock, 4> kSyntheticBlocks{{
    {"synA", 0xE000, 0xE0FF},
    {"synB", 0xE100, 0xE1FF},
    {"synC", 0xE200, 0xE2FF},
    {"synD", 0xE300, 0xE3FF},
}};

}  // namespace cslab
