// Serial reference kernels against the OpenMP production versions.
// Run with OMP_NUM_THREADS set to the core count to see the parallel gain.

#include <benchmark/benchmark.h>

#include <random>

#include "sbcb/boundary_gen.hpp"
#include "sbcb/edt.hpp"
#include "sbcb/kernels.hpp"

using namespace sbcb;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1, 1);
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<real>(d(rng));
  return t;
}

// blocky label map with a few hundred regions
LabelMap city_like(int h, int w, int ncat, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabelMap l(h, w, 0);
  std::uniform_int_distribution<int> ys(0, h - 1), xs(0, w - 1), cat(0, ncat - 1), ext(8, 160);
  for (int r = 0; r < 400; ++r) {
    const int y0 = ys(rng), x0 = xs(rng), hh = ext(rng), ww = ext(rng), c = cat(rng);
    for (int y = y0; y < std::min(h, y0 + hh); ++y)
      for (int x = x0; x < std::min(w, x0 + ww); ++x) l.at(y, x) = c;
  }
  return l;
}

template <bool Reference>
void BM_Conv3x3(benchmark::State& st) {
  const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1));
  const Tensor x = random_tensor(Shape{2, c, hw, hw}, 1), w = random_tensor(Shape{c, c, 3, 3}, 2);
  const ConvGeometry g{1, 1, 1, 1};
  Tensor out;
  for (auto _ : st) {
    if constexpr (Reference) kernels::reference::conv2d_forward(x, w, nullptr, g, out);
    else kernels::conv2d_forward(x, w, nullptr, g, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Conv3x3Backward(benchmark::State& st) {
  const int c = static_cast<int>(st.range(0)), hw = static_cast<int>(st.range(1));
  const Tensor x = random_tensor(Shape{2, c, hw, hw}, 1), w = random_tensor(Shape{c, c, 3, 3}, 2);
  const Tensor gy = random_tensor(Shape{2, c, hw, hw}, 3);
  const ConvGeometry g{1, 1, 1, 1};
  Tensor gx(x.shape()), gw(w.shape());
  for (auto _ : st) {
    if constexpr (Reference) {
      kernels::reference::conv2d_backward_input(gy, w, g, gx);
      kernels::reference::conv2d_backward_params(x, gy, g, gw, nullptr);
    } else {
      kernels::conv2d_backward_input(gy, w, g, gx);
      kernels::conv2d_backward_params(x, gy, g, gw, nullptr);
    }
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Reference>
void BM_Resize(benchmark::State& st) {
  const int hw = static_cast<int>(st.range(0));
  const Tensor x = random_tensor(Shape{1, 19, hw / 8, hw / 8}, 4);
  Tensor out(Shape{1, 19, hw, hw});
  for (auto _ : st) {
    if constexpr (Reference) kernels::reference::resize_bilinear_forward(x, out);
    else kernels::resize_bilinear_forward(x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Edt(benchmark::State& st) {
  const int h = static_cast<int>(st.range(0)), w = 2 * h;
  const LabelMap l = city_like(h, w, 2, 5);
  std::vector<std::uint8_t> sites(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) sites[i] = l[i] == 1;
  for (auto _ : st) {
    auto d = Reference ? edt::reference::squared_distance_to_sites(sites, h, w)
                       : edt::squared_distance_to_sites(sites, h, w);
    benchmark::DoNotOptimize(d.data());
  }
}

template <bool Reference>
void BM_SemanticBoundaries(benchmark::State& st) {
  const int h = static_cast<int>(st.range(0)), w = 2 * h;
  const LabelMap l = city_like(h, w, 19, 6);
  BoundaryGenConfig cfg;
  cfg.radius = 2;
  for (auto _ : st) {
    auto b = Reference ? reference::semantic_boundaries(l, 19, cfg) : semantic_boundaries(l, 19, cfg);
    benchmark::DoNotOptimize(b.values().data());
  }
  st.counters["pixels"] = static_cast<double>(h) * w;
}

}  // namespace

BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3/reference")->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3/parallel")->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Backward<true>)->Name("conv3x3_backward/reference")->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Backward<false>)->Name("conv3x3_backward/parallel")->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Resize<true>)->Name("resize_bilinear/reference")->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Resize<false>)->Name("resize_bilinear/parallel")->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Edt<true>)->Name("edt/reference")->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Edt<false>)->Name("edt/parallel")->Arg(1024)->Unit(benchmark::kMillisecond);
// 1024x2048 with 19 categories is the Cityscapes training crop before scaling
BENCHMARK(BM_SemanticBoundaries<true>)->Name("semantic_boundaries/reference")->Arg(1024)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK(BM_SemanticBoundaries<false>)->Name("semantic_boundaries/parallel")->Arg(1024)->Unit(benchmark::kMillisecond)->Iterations(2);

BENCHMARK_MAIN();
