#pragma once

#include <stdexcept>
#include <string>

namespace qkd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Offset recovery could not find a significant correlation peak.
struct LockFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed bytes on the wire or in a file.
struct FramingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Well-formed frame that is illegal in the current protocol state.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Peer (or local failure handler) aborted the current epoch.
struct EpochAbort : std::runtime_error {
    explicit EpochAbort(std::uint32_t epoch, std::uint8_t reason_code, const std::string& what)
        : std::runtime_error(what), epoch_id(epoch), reason(reason_code) {}
    std::uint32_t epoch_id;
    std::uint8_t reason;
};

namespace abort_reason {
inline constexpr std::uint8_t lock_failure = 1;
inline constexpr std::uint8_t verify_failed = 2;
inline constexpr std::uint8_t protocol = 3;
inline constexpr std::uint8_t operator_request = 4;
} // namespace abort_reason

} // namespace qkd
