pub mod groups;
pub mod spaces;
pub mod projections;
pub mod chains;
mod fit;
pub mod morse;
pub mod hhs;
pub mod boundary;
pub mod experiments;
