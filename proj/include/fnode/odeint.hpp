#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "fnode/tape.hpp"

namespace fnode::ode {

enum class Method { RK4 };

struct SolverConfig {
  Method method = Method::RK4;
  double step_size = 0.1;

  void validate() const;
};

// Strictly increasing observation times.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times);
  const std::vector<double>& times() const { return times_; }
  std::size_t size() const { return times_.size(); }
  double front() const { return times_.front(); }
  double back() const { return times_.back(); }

 private:
  std::vector<double> times_;
};

class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(const std::string& msg, double time) : std::runtime_error(msg), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

// Vector field dz/dt = f(z, t), recorded on z's tape.
using VectorField = std::function<tg::Var(tg::Var z, double t)>;

// States at every grid time; grid.front() is the time of z0. Between grid
// times the solver takes full steps of cfg.step_size and one shortened step
// that lands exactly on the next grid time. The returned nodes live on z0's
// tape, so the solution is differentiable through every step.
std::vector<tg::Var> integrate(const VectorField& field, tg::Var z0, const TimeGrid& grid,
                               const SolverConfig& cfg = {});

// Step sizes the solver uses between two times; exposed for tests.
std::vector<double> step_plan(double from, double to, double step_size);

}  // namespace fnode::ode
