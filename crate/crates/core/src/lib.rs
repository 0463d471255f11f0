//! Symbolic execution, bounded model checking and encoding for the stateful
//! applied pi calculus (SAPIC and StatVerif dialects).

pub mod computational;
pub mod deduction;
pub mod explorer;
pub mod sapic;
pub mod statverif;
pub mod syntax;
pub mod terms;
