mod checks;

pub use checks::*;
