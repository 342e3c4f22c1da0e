#ifndef ODFLOW_THREADS_HPP
#define ODFLOW_THREADS_HPP

namespace odflow {

// Thread cap from ODFLOW_THREADS (0 = runtime default). Read once.
int thread_cap();

// Applies the cap to the OpenMP runtime. Call from program entry points.
void apply_thread_cap();

}  // namespace odflow

#endif
