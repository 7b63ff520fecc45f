#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace mupfl {

// Optional sink for non-fatal diagnostics (zero-norm vectors, skipped
// clients, ...). Callers that don't care pass nothing.
using WarnFn = std::function<void(const std::string&)>;

inline void warn(const WarnFn& fn, const std::string& msg) {
    if (fn) fn(msg);
}

}  // namespace mupfl
