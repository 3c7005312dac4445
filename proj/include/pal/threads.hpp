#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pal {

// Kernel-level worker pool. Work is partitioned into disjoint index ranges,
// so results are bitwise identical for any thread count. PAL_THREADS caps the
// default size; the default is 1 (kernels run inline).
class KernelPool {
public:
    static KernelPool& instance() {
        static KernelPool pool;
        return pool;
    }

    void set_threads(int n) {
        std::lock_guard<std::mutex> lk(config_mutex_);
        if (n < 1) n = 1;
        shutdown_workers();
        n_threads_ = n;
        if (n_threads_ > 1) start_workers(n_threads_ - 1);
    }

    int threads() const { return n_threads_; }

    // Runs fn(begin, end) over a partition of [0, n). Blocks until done.
    void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int nt = n_threads_;
        if (nt <= 1 || n < 2 * nt) {
            fn(0, n);
            return;
        }
        int64_t chunk = (n + nt - 1) / nt;
        {
            std::unique_lock<std::mutex> lk(mutex_);
            task_ = &fn;
            task_n_ = n;
            task_chunk_ = chunk;
            pending_ = 0;
            for (int i = 1; i < nt; ++i) {
                if (i * chunk < n) ++pending_;
            }
            ++generation_;
            cv_.notify_all();
        }
        fn(0, std::min<int64_t>(chunk, n));
        std::unique_lock<std::mutex> lk(mutex_);
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        task_ = nullptr;
    }

    ~KernelPool() { shutdown_workers(); }

private:
    KernelPool() {
        const char* env = std::getenv("PAL_THREADS");
        n_threads_ = 1;
        if (env != nullptr) {
            int v = std::atoi(env);
            if (v >= 1) {
                n_threads_ = v;
                if (n_threads_ > 1) start_workers(n_threads_ - 1);
            }
        }
    }

    void start_workers(int count) {
        stop_ = false;
        for (int i = 0; i < count; ++i) {
            workers_.emplace_back([this, idx = i + 1] { worker_loop(idx); });
        }
    }

    void shutdown_workers() {
        {
            std::unique_lock<std::mutex> lk(mutex_);
            stop_ = true;
            ++generation_;
            cv_.notify_all();
        }
        for (auto& w : workers_) w.join();
        workers_.clear();
        stop_ = false;
    }

    void worker_loop(int idx) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* task = nullptr;
            int64_t begin = 0, end = 0;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                if (task_ == nullptr) continue;
                begin = idx * task_chunk_;
                end = std::min<int64_t>(begin + task_chunk_, task_n_);
                if (begin >= task_n_) continue;
                task = task_;
            }
            (*task)(begin, end);
            {
                std::unique_lock<std::mutex> lk(mutex_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::mutex config_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(int64_t, int64_t)>* task_ = nullptr;
    int64_t task_n_ = 0;
    int64_t task_chunk_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
    int n_threads_ = 1;
};

inline void set_kernel_threads(int n) { KernelPool::instance().set_threads(n); }
inline int kernel_threads() { return KernelPool::instance().threads(); }

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    KernelPool::instance().parallel_for(n, fn);
}

}  // namespace pal
