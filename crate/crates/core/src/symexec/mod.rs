//! Symbolic execution of one machine step over finite sorts.
//!
//! Every location of interest starts out as a fresh symbol (see
//! [`SymInit`]); [`symbolic_step`] enumerates the feasible guard outcomes and
//! returns a path condition plus a symbolic successor map for each.
//! Formulas are kept small by [`simplify`] and checked by the brute-force
//! oracle in [`oracle`].

mod exec;
mod expr;
pub mod oracle;
mod simplify;

use serde_json::{json, Value as Json};
use thiserror::Error;

pub use exec::{
    merge_successors, substitute_initial_terms, symbolic_step, symbolic_term, SymInit, SymOutcome,
    SymPath,
};
pub use expr::{LocMap, SymExpr, SymId, SymOrigin, Symbol, SymbolTable, FALSE, TRUE};
pub use oracle::{equivalent, equivalent_terms, satisfiable, DomainTooLarge, Equivalence};
pub use simplify::{elim_symbol, simplify};

use crate::ast::{Domain, Location, Term};
use crate::parser::print_term;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymError {
    #[error("parallel writes to {location} may disagree")]
    SymbolicInconsistency { location: Location },
    #[error("unsupported construct: {0}")]
    UnsupportedConstruct(String),
    #[error("symbol `{0}` has no location in the initial state")]
    UnhousedSymbol(String),
    #[error("location {0} is not covered by the symbolic state")]
    UnknownLocation(Location),
    #[error(transparent)]
    TooLarge(#[from] DomainTooLarge),
}

fn domain_json(d: &Domain) -> Json {
    match d {
        Domain::Bool => json!("bool"),
        Domain::Int { lo, hi } => json!(format!("int[{lo}..{hi}]")),
        Domain::Enum(ls) => json!(ls.iter().map(|l| l.to_string()).collect::<Vec<_>>()),
    }
}

fn origin_json(o: &SymOrigin) -> Json {
    match o {
        SymOrigin::Location(l) => json!(l.to_string()),
        SymOrigin::CtlNext => json!("next control state"),
        SymOrigin::Choice(v) => json!(format!("choose {v}")),
        SymOrigin::Placeholder => json!("placeholder"),
    }
}

/// Analysis report: paths with printed conditions and successor maps, the
/// derived safe-state predicate if any, and the symbol table.
pub fn report(table: &SymbolTable, paths: &[SymPath], condx: Option<&Term>) -> Json {
    let paths: Vec<Json> = paths
        .iter()
        .map(|p| {
            let loc_map: serde_json::Map<String, Json> = p
                .loc_map
                .iter()
                .map(|(l, v)| (l.to_string(), json!(v.display(table))))
                .collect();
            json!({
                "cond": p.cond.display(table),
                "locMap": loc_map,
                "mergedFrom": p.merged_from,
                "fired": p.fired.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let symbols: Vec<Json> = table
        .iter()
        .map(|(_, s)| {
            json!({
                "name": s.name,
                "domain": domain_json(&s.domain),
                "origin": origin_json(&s.origin),
            })
        })
        .collect();
    json!({
        "paths": paths,
        "condX": condx.map(print_term),
        "symbols": symbols,
    })
}
