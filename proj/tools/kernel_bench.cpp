// Serial-reference vs OpenMP kernel comparison: checks bitwise agreement and
// reports throughput on representative layer shapes.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "cumulus/kernels.hpp"
#include "cumulus/tensor.hpp"

using namespace cumulus;

namespace {

using clock_t_ = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  auto t0 = clock_t_::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = clock_t_::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(Rng& rng, size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_unit() * 2.0 - 1.0);
  return v;
}

void bench_conv(const char* name, int64_t hw, int64_t in_c, int64_t out_c, int k,
                int reps) {
  Rng rng(7);
  auto geom = kernels::make_conv_geom(hw, hw, in_c, out_c, k, k, 1, Padding::Same);
  auto x = random_vec(rng, static_cast<size_t>(hw * hw * in_c));
  auto w = random_vec(rng, static_cast<size_t>(k * k * in_c * out_c));
  auto b = random_vec(rng, static_cast<size_t>(out_c));
  std::vector<float> y_ref(static_cast<size_t>(geom.out_h * geom.out_w * out_c));
  std::vector<float> y_par(y_ref.size());

  double t_ref = time_ms(
      [&] { kernels::ref::conv2d<float>(geom, x.data(), w.data(), b.data(), y_ref.data()); },
      reps);
  double t_par = time_ms(
      [&] { kernels::par::conv2d<float>(geom, x.data(), w.data(), b.data(), y_par.data()); },
      reps);
  bool same = std::memcmp(y_ref.data(), y_par.data(), y_ref.size() * sizeof(float)) == 0;
  double macs = static_cast<double>(geom.out_h * geom.out_w * out_c * k * k * in_c);
  std::printf("%-26s ref %8.2f ms  omp %8.2f ms  speedup %4.2fx  %6.2f GMAC/s  %s\n",
              name, t_ref, t_par, t_ref / t_par, macs / (t_par * 1e6),
              same ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; omp falls back to the reference kernels\n");
#endif
  bench_conv("conv 256x256x12 -> 16", 256, 12, 16, 3, 3);
  bench_conv("conv 128x128x32 -> 32", 128, 32, 32, 3, 3);
  bench_conv("conv 64x64x64 -> 64", 64, 64, 64, 3, 3);
  bench_conv("conv 16x16x128 -> 256", 16, 128, 256, 3, 3);
  return 0;
}
