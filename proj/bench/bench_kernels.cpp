#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "fnode/kernels.hpp"
#include "fnode/model.hpp"
#include "fnode/rng.hpp"
#include "fnode/syndata.hpp"

using namespace fnode;
using Clock = std::chrono::steady_clock;

namespace {

template <class F>
double seconds_per_call(F f, int reps) {
  f();
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) f();
  return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void bench_linear(const char* label, kernels::LinearDims d, int reps) {
  Rng rng = make_rng(1);
  const auto x = random_vec(d.batch * d.in, rng);
  const auto w = random_vec(d.out * d.in, rng);
  const auto b = random_vec(d.out, rng);
  const auto dy = random_vec(d.batch * d.out, rng);
  std::vector<double> y(d.batch * d.out), dx(d.batch * d.in), dw(d.out * d.in), db(d.out);
  const double flops = 2.0 * static_cast<double>(d.batch * d.in * d.out);

  const double sf = seconds_per_call([&] { kernels::serial::linear_forward(d, x, w, b, y); }, reps);
  const double pf = seconds_per_call([&] { kernels::par::linear_forward(d, x, w, b, y); }, reps);
  const double sb = seconds_per_call([&] { kernels::serial::linear_backward(d, dy, x, w, dx, dw, db); }, reps);
  const double pb = seconds_per_call([&] { kernels::par::linear_backward(d, dy, x, w, dx, dw, db); }, reps);
  std::printf("%-22s fwd serial %9.3f ms (%5.2f GF/s)  par %9.3f ms (%5.2f GF/s)\n", label, sf * 1e3, flops / sf * 1e-9,
              pf * 1e3, flops / pf * 1e-9);
  std::printf("%-22s bwd serial %9.3f ms (%5.2f GF/s)  par %9.3f ms (%5.2f GF/s)\n", "", sb * 1e3,
              2 * flops / sb * 1e-9, pb * 1e3, 2 * flops / pb * 1e-9);
}

void bench_batch_gradient() {
  data::SynthConfig sc;
  sc.n_per_class = 5;
  sc.seed = 1;
  const auto ds = data::generate_set_a(sc);
  const FNODEModel m = make_model(ArchConfig{}, 1, 10, 2);
  Rng rng = make_rng(3);
  std::vector<const data::Trajectory*> batch;
  std::vector<NoiseDraw> draws;
  for (const auto& x : ds.trajectories) {
    batch.push_back(&x);
    draws.push_back(draw_noise(m, rng));
  }
  const double s = seconds_per_call([&] { (void)batch_gradient(m, batch, draws, 1.0); }, 5);
  std::printf("batch_gradient (50 trajectories)  %9.3f ms\n", s * 1e3);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::stoi(argv[1]) : 20;
  std::printf("threads: %d\n", omp_get_max_threads());
  bench_linear("hyper out 50x128->11908", {50, 128, 11908}, reps);
  bench_linear("hyper hidden 50x128->128", {50, 128, 128}, reps * 20);
  bench_linear("field 1x100->100", {1, 100, 100}, reps * 1000);
  bench_linear("field 1x9->100", {1, 9, 100}, reps * 1000);
  bench_batch_gradient();
}
