#pragma once

namespace lultax {

inline constexpr const char* version = "0.1.0";

} // namespace lultax
