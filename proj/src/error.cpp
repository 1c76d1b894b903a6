#include "trafficlm/error.hpp"

namespace trafficlm {

Error::Error(ErrorKind kind, std::string code, const std::string &message)
    : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

}  // namespace trafficlm
