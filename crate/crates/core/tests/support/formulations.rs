//! Random well-formed formulations for round-trip tests.

use formulink_core::formulation::{
    ConstraintDecl, Domain, IndexSet, KindCatalog, Objective, OptimizationFormulation, Sense,
    Shape, VariableDecl,
};
use rand::seq::IndexedRandom;
use rand::Rng;

const NAME_HEADS: &[&str] = &["w", "rho", "theta", "c", "p", "x", "beta", "_aux"];
const SETS: &[&str] = &["K", "M", "Users", "N_t"];
const EXPR_ATOMS: &[&str] = &[
    "R_k", "c_k", "P_tx", "||w_k||^2", "sum_k c_k", "min_k R_c_k", "eta * (1 - rho_k)",
    "|exp(j * theta_m)|", "log2(1 + SINR_k)", "P_max", "E_min", "0.5", "1e-3",
];
const RELATIONS: &[&str] = &["<=", ">=", "="];
const DESCRIPTION_BITS: &[&str] = &[
    "precoder", "ratio", "phase", "a \"quoted\" word", "back\\slash", "hash # inside",
    "unicode θ ρ", "tab\tseparated", "", "  padded  ",
];

fn ident(rng: &mut impl Rng, taken: &mut Vec<String>) -> String {
    loop {
        let head = NAME_HEADS.choose(rng).unwrap();
        let name = if rng.random_bool(0.5) {
            head.to_string()
        } else {
            format!("{head}{}", rng.random_range(0..100))
        };
        if !taken.contains(&name) {
            taken.push(name.clone());
            return name;
        }
    }
}

fn expression(rng: &mut impl Rng) -> String {
    let terms = rng.random_range(1..4);
    let lhs: Vec<&str> = (0..terms).map(|_| *EXPR_ATOMS.choose(rng).unwrap()).collect();
    format!(
        "{} {} {}",
        lhs.join(" + "),
        RELATIONS.choose(rng).unwrap(),
        EXPR_ATOMS.choose(rng).unwrap()
    )
}

fn domain(rng: &mut impl Rng) -> Domain {
    match rng.random_range(0..4) {
        0 => Domain::Complex,
        1 => Domain::RealNonneg,
        2 => Domain::Angle,
        _ => {
            let a: f64 = rng.random_range(-1e3..1e3);
            let b: f64 = rng.random_range(-1e3..1e3);
            Domain::RealIn {
                lo: a.min(b),
                hi: a.max(b),
            }
        }
    }
}

/// A formulation whose constraints are already in catalog order, so that
/// parsing its serialisation must give it back unchanged.
pub fn random_formulation(rng: &mut impl Rng) -> OptimizationFormulation {
    let catalog = KindCatalog::default();
    let mut names = Vec::new();
    let mut sets = Vec::new();
    let variables: Vec<VariableDecl> = (0..rng.random_range(1..7))
        .map(|_| {
            let shape = match rng.random_range(0..3) {
                0 => Shape::Scalar,
                1 => Shape::Vector(rng.random_range(1..64)),
                _ => {
                    let set = SETS.choose(rng).unwrap().to_string();
                    sets.push(set.clone());
                    Shape::IndexedBy(set)
                }
            };
            let words: Vec<&str> = (0..rng.random_range(0..3))
                .map(|_| *DESCRIPTION_BITS.choose(rng).unwrap())
                .collect();
            VariableDecl {
                name: ident(rng, &mut names),
                shape,
                domain: domain(rng),
                description: words.join(" "),
            }
        })
        .collect();
    let mut constraint_names = Vec::new();
    let mut constraints: Vec<ConstraintDecl> = (0..rng.random_range(0..9))
        .map(|_| ConstraintDecl {
            name: ident(rng, &mut constraint_names),
            kind: catalog.kinds().choose(rng).unwrap().clone(),
            expression: expression(rng),
            index_set: if !sets.is_empty() && rng.random_bool(0.5) {
                Some(IndexSet {
                    index: ["k", "m", "i"].choose(rng).unwrap().to_string(),
                    set: sets.choose(rng).unwrap().clone(),
                })
            } else {
                None
            },
        })
        .collect();
    constraints.sort_by_key(|c| catalog.position(&c.kind));
    OptimizationFormulation {
        variables,
        sense: if rng.random_bool(0.5) { Sense::Max } else { Sense::Min },
        objective: Objective {
            name: ["EE", "SumRate", "obj_1"].choose(rng).unwrap().to_string(),
            expression: expression(rng).replace(" <= ", " / ").replace(" >= ", " * ").replace(" = ", " - "),
        },
        constraints,
    }
}
