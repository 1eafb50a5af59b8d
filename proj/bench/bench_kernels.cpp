// Serial reference kernels against the blocked OpenMP versions.
//
//   ./bench_kernels --benchmark_filter=Gemm
//
// The second argument of each parallel benchmark is the thread count.

#include <benchmark/benchmark.h>

#include <random>

#include "proxprop/kernels.hpp"
#include "proxprop/tensor.hpp"

using namespace proxprop;
using kernels::Trans;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = g(rng);
  return t;
}

kernels::ConstMatrixView cview(const Tensor& t) { return {t.data(), t.rows(), t.cols()}; }
kernels::MatrixView view(Tensor& t) { return {t.data(), t.rows(), t.cols()}; }

// Hidden-layer shape of the 3072-500-... MLP on a 500-sample minibatch.
constexpr std::size_t kM = 500, kK = 3072, kN = 500;

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(kM, kK, 1), b = random_matrix(kK, n, 2);
  Tensor c = Tensor::matrix(kM, n);
  for (auto _ : state) {
    kernels::reference::gemm(Trans::no, Trans::no, 1.0, cview(a), cview(b), 0.0, view(c));
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * kM * kK * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int saved = kernels::num_threads();
  kernels::set_num_threads(static_cast<int>(state.range(1)));
  const Tensor a = random_matrix(kM, kK, 1), b = random_matrix(kK, n, 2);
  Tensor c = Tensor::matrix(kM, n);
  for (auto _ : state) {
    kernels::gemm(Trans::no, Trans::no, 1.0, cview(a), cview(b), 0.0, view(c));
    benchmark::DoNotOptimize(c.data());
  }
  kernels::set_num_threads(saved);
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * kM * kK * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

// Parameter adjoint r * P^T: the transposed-B path used in every backward step.
void BM_GemmTransB(benchmark::State& state) {
  const int saved = kernels::num_threads();
  kernels::set_num_threads(static_cast<int>(state.range(0)));
  const Tensor r = random_matrix(kM, kN, 3), p = random_matrix(kK, kN, 4);
  Tensor g = Tensor::matrix(kM, kK);
  for (auto _ : state) {
    kernels::gemm(Trans::no, Trans::yes, 1.0, cview(r), cview(p), 0.0, view(g));
    benchmark::DoNotOptimize(g.data());
  }
  kernels::set_num_threads(saved);
}

// conv8k5p2 on 3x32x32 inputs.
const kernels::ConvGeometry kConv{3, 32, 32, 5, 5, 1, 2};
constexpr std::size_t kFilters = 8, kBatch = 100;

void BM_ConvDirectReference(benchmark::State& state) {
  const Tensor k = random_matrix(kFilters, kConv.patch_size(), 5);
  const Tensor x = random_matrix(kConv.in_features(), kBatch, 6);
  Tensor out = Tensor::matrix(kFilters * kConv.out_h() * kConv.out_w(), kBatch);
  for (auto _ : state) {
    kernels::reference::conv2d(kConv, cview(k), cview(x), view(out));
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvIm2colGemm(benchmark::State& state) {
  const int saved = kernels::num_threads();
  kernels::set_num_threads(static_cast<int>(state.range(0)));
  const Tensor k = random_matrix(kFilters, kConv.patch_size(), 5);
  const Tensor x = random_matrix(kConv.in_features(), kBatch, 6);
  Tensor patches = Tensor::matrix(kConv.patch_size(), kConv.out_h() * kConv.out_w() * kBatch);
  Tensor out = Tensor::matrix(kFilters, patches.cols());
  for (auto _ : state) {
    kernels::im2col(kConv, cview(x), view(patches));
    kernels::gemm(Trans::no, Trans::no, 1.0, cview(k), cview(patches), 0.0, view(out));
    benchmark::DoNotOptimize(out.data());
  }
  kernels::set_num_threads(saved);
}

void BM_Col2imReference(benchmark::State& state) {
  const Tensor patches = random_matrix(kConv.patch_size(), kConv.out_h() * kConv.out_w() * kBatch, 7);
  Tensor img = Tensor::matrix(kConv.in_features(), kBatch);
  for (auto _ : state) {
    kernels::reference::col2im(kConv, cview(patches), view(img));
    benchmark::DoNotOptimize(img.data());
  }
}

void BM_Col2im(benchmark::State& state) {
  const int saved = kernels::num_threads();
  kernels::set_num_threads(static_cast<int>(state.range(0)));
  const Tensor patches = random_matrix(kConv.patch_size(), kConv.out_h() * kConv.out_w() * kBatch, 7);
  Tensor img = Tensor::matrix(kConv.in_features(), kBatch);
  for (auto _ : state) {
    kernels::col2im(kConv, cview(patches), view(img));
    benchmark::DoNotOptimize(img.data());
  }
  kernels::set_num_threads(saved);
}

}  // namespace

BENCHMARK(BM_GemmReference)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm)->ArgsProduct({{100, 500}, {1, 2, 4}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_GemmTransB)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvDirectReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvIm2colGemm)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Col2imReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Col2im)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
