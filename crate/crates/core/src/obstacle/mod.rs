//! The zero-obstacle problem, contact sets, and infimal convolutions.

mod infconv;
mod solver;

pub use infconv::{
    check_supersolution_defect, distance_to_set, inf_convolution, infconv_gradient,
    InfConvolution, SupersolutionDefect,
};
pub use solver::{
    contact_measure, solve_obstacle, ContactMeasure, ObstacleParams, ObstacleSolution,
    SolverMethod,
};
