#include "fnode/odeint.hpp"

#include <cmath>
#include <sstream>

namespace fnode::ode {

void SolverConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("solver step_size must be > 0");
}

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.empty()) throw std::invalid_argument("time grid must hold at least one time");
  for (std::size_t i = 0; i < times_.size(); ++i) {
    if (!std::isfinite(times_[i])) throw std::invalid_argument("time grid holds a non-finite time");
    if (i > 0 && !(times_[i] > times_[i - 1])) {
      std::ostringstream os;
      os << "time grid not strictly increasing at index " << i << " (" << times_[i - 1] << " then " << times_[i]
         << ")";
      throw std::invalid_argument(os.str());
    }
  }
}

std::vector<double> step_plan(double from, double to, double step_size) {
  std::vector<double> steps;
  const double span = to - from;
  // Full steps are measured from `from` to avoid drift; the tolerance keeps a
  // rounding-sized sliver from becoming its own step.
  const double slack = 1e-9 * step_size;
  std::size_t k = 0;
  while (span - static_cast<double>(k + 1) * step_size > slack) {
    steps.push_back(step_size);
    ++k;
  }
  steps.push_back(to - (from + static_cast<double>(k) * step_size));
  return steps;
}

namespace {

tg::Var rk4_step(const VectorField& f, tg::Var z, double t, double h) {
  tg::Tape& tape = *z.tape;
  const tg::Var k1 = f(z, t);
  if (k1.shape() != z.shape()) {
    throw tg::Error("vector field output shape " + tg::shape_str(k1.shape()) + " differs from state shape " +
                    tg::shape_str(z.shape()));
  }
  const tg::Var k2 = f(tape.add_scaled(z, k1, 0.5 * h), t + 0.5 * h);
  const tg::Var k3 = f(tape.add_scaled(z, k2, 0.5 * h), t + 0.5 * h);
  const tg::Var k4 = f(tape.add_scaled(z, k3, h), t + h);
  tg::Var acc = tape.add_scaled(k1, k2, 2.0);
  acc = tape.add_scaled(acc, k3, 2.0);
  acc = tape.add(acc, k4);
  return tape.add_scaled(z, acc, h / 6.0);
}

}  // namespace

std::vector<tg::Var> integrate(const VectorField& field, tg::Var z0, const TimeGrid& grid,
                               const SolverConfig& cfg) {
  cfg.validate();
  std::vector<tg::Var> states{z0};
  states.reserve(grid.size());
  tg::Var z = z0;
  const auto& ts = grid.times();
  for (std::size_t i = 1; i < ts.size(); ++i) {
    double t = ts[i - 1];
    for (double h : step_plan(ts[i - 1], ts[i], cfg.step_size)) {
      try {
        z = rk4_step(field, z, t, h);
      } catch (const tg::NonFiniteError& e) {
        std::ostringstream os;
        os << "ODE state blew up in the step starting at t=" << t << ": " << e.what();
        throw BlowUpError(os.str(), t);
      }
      t += h;
    }
    states.push_back(z);
  }
  return states;
}

}  // namespace fnode::ode
