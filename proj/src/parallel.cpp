#include "noisyforge/parallel.hpp"

namespace noisyforge {

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace noisyforge
