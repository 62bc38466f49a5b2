#include "clab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace clab {

unsigned worker_count() {
    if (const char* env = std::getenv("CLAB_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return static_cast<unsigned>(n);
        } catch (...) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

}  // namespace clab
