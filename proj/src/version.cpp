#include "catnet/version.hpp"

namespace catnet {

const char* version() { return "0.1.0"; }

}  // namespace catnet
