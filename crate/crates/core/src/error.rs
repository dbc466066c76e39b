use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },

    #[error("n = {n} exceeds the enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("assignment produced {0} empty clause(s)")]
    Contradiction(usize),

    #[error("invalid random model: {0}")]
    InvalidModel(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("DIMACS line {line}: {msg}")]
    Dimacs { line: usize, msg: String },

    #[error("no input to aggregate")]
    EmptyInput,

    #[error("product over admissible clauses is zero")]
    DegenerateProduct,

    #[error("exhaustive audit needs {needed} evaluations, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain { what, value })
    }
}
