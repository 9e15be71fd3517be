//! Bundled example programs.

use super::{parse_ir, IrGraph};

const DISTANCE_CALC: &str = include_str!("../../fixtures/distance_calc.json");
const FFT_LIKE: &str = include_str!("../../fixtures/fft_like.json");

/// Squared 3-D distance: three subtractions, three squares, two adds.
/// One SDF with three entry instructions.
pub fn distance_calc() -> IrGraph {
    parse_ir(DISTANCE_CALC).expect("bundled fixture is valid")
}

/// Approximation of an FFT inner loop split into four SDFs: address
/// generation, twiddle multiply, butterfly, and loop control. Component
/// sizes are 7, 6, 5 and 3 nodes; node-level contents are illustrative.
pub fn fft_like() -> IrGraph {
    parse_ir(FFT_LIKE).expect("bundled fixture is valid")
}
