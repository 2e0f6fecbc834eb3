#pragma once

#include <functional>

namespace gwnet {

/// Worker cap from GWNET_THREADS (default 1). Work is split by index so
/// results never depend on the thread count.
int thread_limit();
void set_thread_limit(int n);

void parallel_for(int count, const std::function<void(int)>& body);

}  // namespace gwnet
