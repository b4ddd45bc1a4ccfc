//! Co-safe temporal formulas, their automata, and product constructions.

mod dfa;
mod formula;
mod product;

pub use dfa::{formula_to_dfa, minimize, Dfa, MAX_LETTERS};
pub use formula::{parse_cosafe, Formula};
pub use product::{
    build_product_mdp, build_product_structure, min_time_reference, product_dfa, product_with_dfa,
    structural_closed_set, LabelledProduct, ProductDfa, ProductMdp, ReferencePolicy,
};
