//! Seeded random expression sampling for property tests and diagnostics.

use rand::Rng;

use crate::expr::{self, Expr};

/// Draw a random expression tree of depth at most `max_depth`.
///
/// Integer literals are kept small and `root` degrees are always integer
/// literals in 2..=4, so the trees respect the structural conventions of
/// generated corpora.
pub fn random_expr<R: Rng>(rng: &mut R, max_depth: usize) -> Expr {
    if max_depth == 0 {
        return random_leaf(rng);
    }
    match rng.random_range(0..10u32) {
        0..=2 => random_leaf(rng),
        3 => {
            let op = rng.random_range(0..9u32);
            let child = random_expr(rng, max_depth - 1);
            match op {
                0 => expr::neg(child),
                1 => expr::sqrt(child),
                2 => expr::sin(child),
                3 => expr::cos(child),
                4 => expr::tan(child),
                5 => expr::sec(child),
                6 => expr::csc(child),
                7 => expr::cot(child),
                _ => expr::ln(child),
            }
        }
        4..=5 => expr::add(random_expr(rng, max_depth - 1), random_expr(rng, max_depth - 1)),
        6..=7 => expr::mul(random_expr(rng, max_depth - 1), random_expr(rng, max_depth - 1)),
        8 => expr::div(random_expr(rng, max_depth - 1), random_expr(rng, max_depth - 1)),
        _ => {
            if rng.random_bool(0.5) {
                expr::pow(random_expr(rng, max_depth - 1), expr::int(rng.random_range(-4..=4)))
            } else {
                expr::root(expr::int(rng.random_range(2..=4)), random_expr(rng, max_depth - 1))
            }
        }
    }
}

fn random_leaf<R: Rng>(rng: &mut R) -> Expr {
    match rng.random_range(0..6u32) {
        0 | 1 => expr::x(),
        2 => expr::constant_n(),
        3 => expr::euler(),
        _ => expr::int(rng.random_range(-20..=20)),
    }
}

/// A random expression already in canonical form.
pub fn random_normalized<R: Rng>(rng: &mut R, max_depth: usize) -> Expr {
    expr::normalize(&random_expr(rng, max_depth))
}
