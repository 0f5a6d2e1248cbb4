#include "agroforge/error.hpp"

#include <utility>

namespace agroforge {

Error::Error(std::string code, const std::string& message)
    : std::runtime_error(code + ": " + message), code_(std::move(code)), message_(message) {}

void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

}  // namespace agroforge
