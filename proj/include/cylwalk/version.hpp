#pragma once

namespace cylwalk {

inline constexpr const char* kVersion = "0.1.0";

}
