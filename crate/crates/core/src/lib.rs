// negated comparisons below are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod duhamel;
pub mod error;
pub mod fvp;
pub mod linalg;
pub mod neumann;
pub mod output;
pub mod quadrature;
pub mod sampling;
pub mod semigroup;
pub mod source;
pub mod trajectory;
pub mod triple;
