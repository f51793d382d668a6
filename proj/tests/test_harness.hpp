#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

// Small check/report harness shared by the test executables. Each test is a
// standalone main() that returns nonzero on any failure.

namespace testh {

inline int g_checks = 0;
inline int g_failures = 0;

inline void section(const std::string& name) { std::printf("--- %s\n", name.c_str()); }

inline bool report(bool ok, const char* expr, const char* file, int line,
                   const std::string& detail = "") {
    ++g_checks;
    if (!ok) {
        ++g_failures;
        std::printf("FAIL %s:%d: %s%s\n", file, line, expr,
                    detail.empty() ? "" : ("  [" + detail + "]").c_str());
    }
    return ok;
}

inline bool report_near(double a, double b, double tol, const char* ea, const char* eb,
                        const char* file, int line) {
    const bool ok = std::isfinite(a) && std::isfinite(b) && std::abs(a - b) <= tol;
    return report(ok, (std::string(ea) + " ~= " + eb).c_str(), file, line,
                  "lhs=" + std::to_string(a) + " rhs=" + std::to_string(b) +
                      " diff=" + std::to_string(std::abs(a - b)) + " tol=" + std::to_string(tol));
}

// relative comparison with an absolute floor of tol
inline bool report_rel(double a, double b, double tol, const char* ea, const char* eb,
                       const char* file, int line) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return report_near(a, b, tol * scale, ea, eb, file, line);
}

inline int summary(const char* suite) {
    if (g_failures == 0) {
        std::printf("[PASS] %s: %d checks\n", suite, g_checks);
        return 0;
    }
    std::printf("[FAIL] %s: %d of %d checks failed\n", suite, g_failures, g_checks);
    return 1;
}

}  // namespace testh

#define CHECK(cond) ::testh::report((cond), #cond, __FILE__, __LINE__)
#define CHECK_MSG(cond, msg) ::testh::report((cond), #cond, __FILE__, __LINE__, (msg))
#define CHECK_NEAR(a, b, tol) ::testh::report_near((a), (b), (tol), #a, #b, __FILE__, __LINE__)
#define CHECK_REL(a, b, tol) ::testh::report_rel((a), (b), (tol), #a, #b, __FILE__, __LINE__)
#define CHECK_THROWS(stmt)                                                        \
    do {                                                                          \
        bool threw_ = false;                                                      \
        try {                                                                     \
            stmt;                                                                 \
        } catch (const std::exception&) {                                         \
            threw_ = true;                                                        \
        }                                                                         \
        ::testh::report(threw_, "throws: " #stmt, __FILE__, __LINE__);            \
    } while (0)
