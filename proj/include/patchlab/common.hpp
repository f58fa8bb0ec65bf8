// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace patchlab {

// Error categories map to CLI exit codes: validation/parse -> 2, stale -> 3.
enum class ErrKind {
    validation,
    parse,
    stale,
    training,
    io,
};

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const { return kind_; }

private:
    ErrKind kind_;
};

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(ErrKind kind, Args&&... args) {
    throw Error(kind, cat(std::forward<Args>(args)...));
}

inline void require(bool cond, ErrKind kind, const std::string& msg) {
    if (!cond) throw Error(kind, msg);
}

} // namespace patchlab
