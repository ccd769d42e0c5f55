//! Skeleton-valued singular maps on cube grids and the numerics around them.

pub mod balls;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lattice;
pub mod maps;
pub mod quadrature;
pub mod topology;
pub mod transport;
