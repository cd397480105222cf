#pragma once

#include <cstdlib>
#include <cstring>
#include <string>

#if defined(__x86_64__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

#if defined(__x86_64__) && defined(__linux__)
#include <unistd.h>
extern "C" char* openblas_get_corename(void);
#endif

namespace bridge {

// OpenBLAS picks its kernel in a library constructor, before main runs, and
// releases older than the host CPU fall back to a slow generic kernel
// (observed: "Prescott" on AVX-512 machines, a ~4x sgemm penalty). The only
// override is the OPENBLAS_CORETYPE environment variable, which must be set
// before the library loads, so when the fallback is detected on a capable CPU
// this re-execs the process once with the variable set. Call it first in main.
inline void ensure_blas_kernel([[maybe_unused]] char** argv) {
#if defined(__x86_64__)
    // flush denormals: saturated gate logits otherwise decay activations into
    // the subnormal range and stall the fp units
    _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
    _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
#if defined(__x86_64__) && defined(__linux__)
    if (std::getenv("OPENBLAS_CORETYPE")) return;  // user override, or second pass
    if (std::strcmp(openblas_get_corename(), "Prescott") != 0) return;
    if (!__builtin_cpu_supports("avx512bw") || !__builtin_cpu_supports("avx512dq") ||
        !__builtin_cpu_supports("avx512vl"))
        return;
    const char* core = __builtin_cpu_supports("avx512bf16") ? "COOPERLAKE" : "SKYLAKEX";
    setenv("OPENBLAS_CORETYPE", core, 1);
    execv("/proc/self/exe", argv);
    // exec failed: keep running on the slow kernel
#endif
}

}  // namespace bridge
