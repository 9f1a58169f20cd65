pub mod assess;
pub mod export;
pub mod gen;
pub mod report;
pub mod validate;
