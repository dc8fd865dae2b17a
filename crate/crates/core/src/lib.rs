pub mod algebra;
pub mod cli;
pub mod fields;
pub mod flows;
pub mod functionals;
pub mod gauge;
pub mod initial;
pub mod matrix;
pub mod orbit;
pub mod par;
pub mod reductions;
