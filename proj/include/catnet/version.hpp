#pragma once

namespace catnet {

// Version string reported by the command-line tool.
const char* version();

}  // namespace catnet
