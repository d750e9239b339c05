// Wall-clock comparison of the OpenMP kernels against the serial reference.
#include <chrono>
#include <cstdio>
#include <vector>

#include "mat/kernels.hpp"
#include "mat/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using Clock = std::chrono::steady_clock;

std::vector<float> random_buffer(int64_t n, uint64_t seed) {
  std::vector<float> buf(static_cast<size_t>(n));
  mat::RngStream rng(seed);
  for (auto& v : buf) v = static_cast<float>(rng.next_uniform() * 2.0 - 1.0);
  return buf;
}

template <typename F>
double time_ms(F&& fn, int reps) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_matmul(int n, int reps) {
  const auto a = random_buffer(static_cast<int64_t>(n) * n, 1);
  const auto b = random_buffer(static_cast<int64_t>(n) * n, 2);
  std::vector<float> c(static_cast<size_t>(n) * n);
  const double serial =
      time_ms([&] { mat::kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
  const double parallel =
      time_ms([&] { mat::kernels::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
  const double gflops = 2.0 * n * n * n / 1e6;  // per ms
  std::printf("matmul      %4dx%-4d  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms (%6.2f GF/s)  x%.2f\n",
              n, n, serial, gflops / serial, parallel, gflops / parallel, serial / parallel);
}

void bench_softmax(int rows, int cols, int reps) {
  const auto x = random_buffer(static_cast<int64_t>(rows) * cols, 3);
  std::vector<float> y(static_cast<size_t>(rows) * cols);
  const double serial =
      time_ms([&] { mat::kernels::serial::softmax_rows(x.data(), y.data(), rows, cols); }, reps);
  const double parallel =
      time_ms([&] { mat::kernels::softmax_rows(x.data(), y.data(), rows, cols); }, reps);
  std::printf("softmax    %5dx%-4d  serial %8.3f ms               omp %8.3f ms               x%.2f\n",
              rows, cols, serial, parallel, serial / parallel);
}

void bench_layer_norm(int rows, int d, int reps) {
  const auto x = random_buffer(static_cast<int64_t>(rows) * d, 4);
  const auto gain = random_buffer(d, 5);
  const auto bias = random_buffer(d, 6);
  std::vector<float> y(static_cast<size_t>(rows) * d);
  const double serial = time_ms(
      [&] {
        mat::kernels::serial::layer_norm_rows(x.data(), gain.data(), bias.data(), y.data(), rows,
                                              d, 1e-5f);
      },
      reps);
  const double parallel = time_ms(
      [&] {
        mat::kernels::layer_norm_rows(x.data(), gain.data(), bias.data(), y.data(), rows, d,
                                      1e-5f);
      },
      reps);
  std::printf("layer_norm %5dx%-4d  serial %8.3f ms               omp %8.3f ms               x%.2f\n",
              rows, d, serial, parallel, serial / parallel);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp: %d thread(s)\n", omp_get_max_threads());
#else
  std::printf("openmp: not enabled in this build\n");
#endif
  for (int n : {64, 128, 256, 512}) bench_matmul(n, n <= 128 ? 50 : 10);
  for (int rows : {1024, 16384}) bench_softmax(rows, 256, 20);
  for (int rows : {1024, 16384}) bench_layer_norm(rows, 256, 20);
  return 0;
}
