//! Learning to solve arithmetic word problems from final answers alone.
//!
//! A tree-structured policy decodes candidate expressions under size
//! constraints ([`tree_reg`]), wrong candidates are repaired by propagating the
//! expected answer down the tree ([`fixer`]), and the repaired expressions are
//! kept per problem in a memory buffer that serves as pseudo labels
//! ([`learner`]).

pub mod data;
pub mod eval;
pub mod experiment;
pub mod expr;
pub mod fixer;
pub mod learner;
pub mod policy;
pub mod tree_reg;
pub mod vocab;

pub use expr::{answers_match, parse_prefix, EvalError, ExprTree, Op, ParseError, Token};
pub use vocab::Vocab;
