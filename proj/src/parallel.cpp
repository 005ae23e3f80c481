#include "sforge/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string_view>

namespace sforge {

std::size_t default_thread_count() {
    if (const char* env = std::getenv("SCALING_FORGE_THREADS")) {
        const std::string_view s(env);
        std::size_t n = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
        if (ec == std::errc{} && ptr == s.data() + s.size() && n > 0) return n;
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace sforge
