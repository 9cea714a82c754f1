#include "neuralscale/errors.hpp"

namespace neuralscale {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Structural: return "structural error";
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::InsufficientData: return "insufficient data";
        case ErrorKind::SingularDesign: return "singular design";
        case ErrorKind::Numerical: return "numerical error";
        case ErrorKind::StepSize: return "step-size error";
        case ErrorKind::NoBracket: return "no bracket";
        case ErrorKind::TrainingDivergence: return "training divergence";
        case ErrorKind::EmptyTrajectory: return "empty trajectory";
        case ErrorKind::InfeasibleBudget: return "infeasible budget";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Io: return "i/o error";
    }
    return "error";
}

}  // namespace neuralscale
