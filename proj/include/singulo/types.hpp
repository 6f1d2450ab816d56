#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace singulo {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class Errc {
  invalid_problem,
  invalid_argument,
  commutativity_violated,
  not_psd,
  order_exceeded,
  ill_conditioned,
  not_stabilizable,
  no_stabilizing_solution,
  non_convergent,
  rank_deficient_basis,
  residual_too_large,
  grid_too_coarse,
  singular_matrix,
  degenerate_gaps,
  schedule_violated,
  steering_invalid,
  blowup,
  flavor_mismatch,
  parse_error,
  io_error,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_problem: return "InvalidProblem";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::commutativity_violated: return "CommutativityViolated";
    case Errc::not_psd: return "NotPSD";
    case Errc::order_exceeded: return "OrderExceeded";
    case Errc::ill_conditioned: return "IllConditioned";
    case Errc::not_stabilizable: return "NotStabilizable";
    case Errc::no_stabilizing_solution: return "NoStabilizingSolution";
    case Errc::non_convergent: return "NonConvergent";
    case Errc::rank_deficient_basis: return "RankDeficientBasis";
    case Errc::residual_too_large: return "ResidualTooLarge";
    case Errc::grid_too_coarse: return "GridTooCoarse";
    case Errc::singular_matrix: return "SingularM";
    case Errc::degenerate_gaps: return "DegenerateGaps";
    case Errc::schedule_violated: return "ScheduleViolated";
    case Errc::steering_invalid: return "SteeringInvalid";
    case Errc::blowup: return "Blowup";
    case Errc::flavor_mismatch: return "FlavorMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::io_error: return "IOError";
  }
  return "Unknown";
}

/// Error carrying a machine-readable code; what() is "<Code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Numerical thresholds. Scales are multiplied by problem-dependent norms.
struct Tolerances {
  double psd = 1e-9;          // relative to max(1, lambda_max)
  double asymmetry = 1e-8;    // symmetrization warning threshold
  double comm_scale = 1e-8;   // times (1 + |Q||B|)
  double bvp_scale = 1e-8;    // times (1 + |x0| + |xT|)
  double zero_scale = 1e-7;   // times (|x0| + |xT| + 1)
  double jump_scale = 1e-7;   // times (1 + |x0| + |xT|)
  double cond_max = 1e12;
  double blowup = 1e12;
};

}  // namespace singulo
