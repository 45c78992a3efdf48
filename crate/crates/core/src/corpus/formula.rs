//! Bounded-depth LaTeX expression synthesis.

use rand::Rng;

const SYMBOLS: &[&str] = &[
    "x", "y", "z", "a", "b", "n", "k", "\\alpha", "\\beta", "\\lambda", "\\theta", "\\pi",
];
const OPERATORS: &[&str] = &["+", "-", "\\cdot", "=", "\\leq"];

/// A random expression over fractions, superscripts, subscripts and sums.
/// Depth 0 yields a single atom.
pub fn synthesize_formula<R: Rng>(rng: &mut R, depth: u32) -> String {
    if depth == 0 {
        return atom(rng);
    }
    match rng.random_range(0..6) {
        0 => format!(
            "\\frac{{{}}}{{{}}}",
            synthesize_formula(rng, depth - 1),
            synthesize_formula(rng, depth - 1)
        ),
        1 => format!("{}^{{{}}}", atom(rng), synthesize_formula(rng, depth - 1)),
        2 => format!("{}_{{{}}}", atom(rng), atom(rng)),
        3 => {
            let idx = ["i", "j", "k"][rng.random_range(0..3)];
            format!(
                "\\sum_{{{idx}=1}}^{{{}}} {}",
                atom(rng),
                synthesize_formula(rng, depth - 1)
            )
        }
        _ => format!(
            "{} {} {}",
            synthesize_formula(rng, depth - 1),
            OPERATORS[rng.random_range(0..OPERATORS.len())],
            synthesize_formula(rng, depth - 1)
        ),
    }
}

fn atom<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.3) {
        rng.random_range(1..10).to_string()
    } else {
        SYMBOLS[rng.random_range(0..SYMBOLS.len())].to_string()
    }
}
