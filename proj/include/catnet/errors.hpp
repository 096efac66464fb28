#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace catnet {

// Error categories map onto process exit codes in the CLI:
// usage -> 1, data/io -> 2, everything else -> 3.
enum class ErrorKind {
  config,
  dimension,
  contract,
  data,
  io,
  training,
  checkpoint_version,
  checkpoint_integrity,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

inline void append_all(std::ostringstream&) {}

template <class T, class... Rest>
void append_all(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_all(os, rest...);
}

}  // namespace detail

template <class... Parts>
std::string msg(const Parts&... parts) {
  std::ostringstream os;
  detail::append_all(os, parts...);
  return os.str();
}

template <class... Parts>
[[noreturn]] void throw_error(ErrorKind kind, const Parts&... parts) {
  throw Error(kind, msg(parts...));
}

}  // namespace catnet
