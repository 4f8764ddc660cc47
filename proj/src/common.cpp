#include "volshift/common.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace volshift {

namespace {

std::atomic<int> g_threads{1};

// Persistent pool; workers sleep between parallel_for calls. Worker i always
// takes chunk i, so the partition is a pure function of (n, thread_count).
class Pool {
  public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void run(int workers, int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        std::unique_lock<std::mutex> lk(gate_);
        ensure_workers(workers - 1);
        {
            std::lock_guard<std::mutex> l(m_);
            job_fn_ = &fn;
            job_n_ = n;
            job_workers_ = workers;
            pending_ = workers - 1;
            ++generation_;
        }
        cv_start_.notify_all();

        run_chunk(0);  // caller acts as worker 0

        std::unique_lock<std::mutex> wl(m_);
        cv_done_.wait(wl, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

  private:
    Pool() = default;
    ~Pool() {
        {
            std::lock_guard<std::mutex> l(m_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void ensure_workers(int n) {
        std::lock_guard<std::mutex> l(m_);
        while (int(threads_.size()) < n) {
            int id = int(threads_.size()) + 1;
            threads_.emplace_back([this, id] { worker_loop(id); });
        }
    }

    void run_chunk(int worker) {
        int64_t per = (job_n_ + job_workers_ - 1) / job_workers_;
        int64_t lo = per * worker;
        int64_t hi = std::min<int64_t>(job_n_, lo + per);
        if (lo < hi) (*job_fn_)(lo, hi);
    }

    void worker_loop(int id) {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> l(m_);
            cv_start_.wait(l, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            bool mine = id < job_workers_;
            l.unlock();
            if (mine) run_chunk(id);
            l.lock();
            if (mine && --pending_ == 0) cv_done_.notify_all();
        }
    }

    std::mutex gate_;  // serializes parallel_for calls
    std::mutex m_;
    std::condition_variable cv_start_, cv_done_;
    std::vector<std::thread> threads_;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_n_ = 0;
    int job_workers_ = 1;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

int thread_count() { return g_threads.load(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& chunk_fn) {
    if (n <= 0) return;
    int workers = g_threads.load();
    if (workers > n) workers = int(n);
    if (workers <= 1) {
        chunk_fn(0, n);
        return;
    }
    Pool::instance().run(workers, n, chunk_fn);
}

}  // namespace volshift
