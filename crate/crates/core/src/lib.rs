//! Online minimax multiobjective learning: a surrogate-loss learner with
//! exponential coordinate weights, and the learners built on it.

pub mod adversaries;
pub mod amf_core;
pub mod blackwell;
pub mod error;
pub mod game_solver;
pub mod groups;
pub mod calibeat;
pub mod lp;
pub mod multical;
pub mod numfmt;
pub mod oracle;
pub mod subsequence;

pub use amf_core::{
    learning_rate, play_round, regret_bound, Adversary, AdversarySet, AdversaryView, AmfRng,
    MinimaxSolver, RoundEnvironment, RoundRecord, SurrogateState, Transcript,
};
pub use error::{AmfError, Result};
pub use game_solver::{solve_zero_sum, LpSolver, MatrixGame, SolverCertificate};
