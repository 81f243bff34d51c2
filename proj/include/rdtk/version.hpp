#pragma once

namespace rdtk {

inline constexpr const char* version = "0.1.0";
inline constexpr const char* result_schema = "rdtk/result/1";

} // namespace rdtk
