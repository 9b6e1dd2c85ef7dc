#include "dtpbc/errors.hpp"

#include <sstream>

namespace dtpbc {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

NotAssignable::NotAssignable(double residual, double threshold)
    : Error("equilibrium not assignable: residual " + num(residual) + " exceeds " + num(threshold)),
      residual_(residual),
      threshold_(threshold) {}

SingularStepMatrix::SingularStepMatrix(double rcond)
    : Error("midpoint step matrix is singular (rcond " + num(rcond) + ")"), rcond_(rcond) {}

SingularJacobian::SingularJacobian(double rcond)
    : Error("Newton Jacobian is singular (rcond " + num(rcond) + ")"), rcond_(rcond) {}

NoConvergence::NoConvergence(int iterations, double residual)
    : Error("Newton did not converge after " + std::to_string(iterations) + " iterations, residual " + num(residual)),
      iterations_(iterations),
      residual_(residual) {}

SolverFailure::SolverFailure(std::size_t step, double wall_seconds, const std::string& what)
    : Error("step " + std::to_string(step) + " (" + num(wall_seconds) + " s): " + what),
      step_(step),
      wall_seconds_(wall_seconds) {}

ConfigError::ConfigError(std::string key, const std::string& message)
    : Error(key.empty() ? message : "'" + key + "': " + message), key_(std::move(key)) {}

}  // namespace dtpbc
