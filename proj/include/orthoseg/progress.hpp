#pragma once

#include <atomic>
#include <functional>

#include "orthoseg/error.hpp"

namespace orthoseg {

/// Progress sink and cooperative cancellation flag handed to long-running operations.
struct Progress {
    std::function<void(double)> report;
    const std::atomic<bool>* cancel = nullptr;

    void operator()(double fraction) const {
        if (report)
            report(fraction);
    }
    bool cancelled() const { return cancel && cancel->load(); }
    /// Throws a cancelled error if cancellation was requested.
    void check() const {
        if (cancelled())
            fail(ErrorKind::cancelled, "operation cancelled");
    }
};

} // namespace orthoseg
