//! Hyperspherical product-space variational autoencoders.
//!
//! The crate is layered bottom-up: [`special_math`] and [`sphere_geom`] feed
//! the von Mises-Fisher layer in [`vmf`]; [`product_space`] composes shells
//! into a product latent; [`nn_core`] and [`vae`] train and evaluate models;
//! [`data_io`] loads binarized image data; [`cli`] drives it all.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data_io;
pub mod error;
pub mod nn_core;
pub mod product_space;
pub mod rng;
pub mod special_math;
pub mod sphere_geom;
pub mod vae;
pub mod vmf;

pub use error::{Error, Result};
pub use product_space::{CompositionSpec, ProductKl, ProductSample, ProductVmf};
pub use sphere_geom::UnitVector;
pub use vmf::VmfDistribution;
