#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cot;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod graphdata;
pub mod numcore;
pub mod pretrain;
pub mod rng;

pub use error::{Error, Result};
