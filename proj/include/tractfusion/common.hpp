#pragma once

#include <array>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tractfusion {

// Error taxonomy mirrors the CLI exit codes: usage 1, data 2, numeric 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kNumClasses = 4;
inline constexpr std::array<const char*, 4> kClassNames = {"leg", "trunk", "face", "hand"};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// ---------------------------------------------------------------------------
// Deterministic RNG. splitmix64 core with named substream derivation so one
// --seed reproduces every stochastic component bit-exactly on any platform.
// std::<distribution> types are implementation-defined and must not be used.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Burn a few outputs so nearby seeds decorrelate.
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  // Substream derivation: child generators are independent of draw order.
  Rng stream(const std::string& name) const {
    return Rng(fnv1a64(name) ^ (state_ * 0x9e3779b97f4a7c15ull));
  }
  Rng stream(const std::string& name, uint64_t index) const {
    uint64_t h = fnv1a64(name);
    h = fnv1a64(&index, sizeof(index), h);
    return Rng(h ^ (state_ * 0x9e3779b97f4a7c15ull));
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t threshold = (0ull - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Marsaglia polar method; cache holds the second deviate.
  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    cache_ = v * m;
    has_cache_ = true;
    return u * m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  double cache_ = 0.0;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Minimal worker pool for row-parallel kernels. Work is split into fixed
// index blocks and any reduction happens in block order on the caller, so
// results are byte-identical for every worker count.
// ---------------------------------------------------------------------------

class ThreadPool {
 public:
  explicit ThreadPool(int workers) {
    workers = std::max(0, workers - 1);  // caller participates
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }
  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int width() const { return static_cast<int>(threads_.size()) + 1; }

  // Runs fn(first, last) over [0, n) split into width() contiguous ranges.
  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    int w = width();
    if (n <= 0) return;
    if (w == 1 || n < 2 * w) {
      fn(0, n);
      return;
    }
    int64_t chunk = (n + w - 1) / w;
    {
      std::unique_lock<std::mutex> lk(mu_);
      jobs_.clear();
      for (int i = 1; i < w; ++i) {
        int64_t lo = i * chunk, hi = std::min<int64_t>(n, (i + 1) * chunk);
        if (lo < hi) jobs_.push_back([&fn, lo, hi] { fn(lo, hi); });
      }
      pending_ = jobs_.size();
      next_job_ = 0;
    }
    cv_.notify_all();
    fn(0, std::min<int64_t>(chunk, n));
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || next_job_ < jobs_.size(); });
        if (stop_) return;
        job = jobs_[next_job_++];
      }
      job();
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::vector<std::function<void()>> jobs_;
  size_t next_job_ = 0;
  size_t pending_ = 0;
  bool stop_ = false;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
};

inline int default_worker_count() {
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min<unsigned>(hw == 0 ? 1 : hw, 4));
}

}  // namespace tractfusion
