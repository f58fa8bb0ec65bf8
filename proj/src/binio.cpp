// SPDX-License-Identifier: Apache-2.0
#include "patchlab/binio.hpp"

#include <cstdio>

namespace patchlab::binio {

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace patchlab::binio
