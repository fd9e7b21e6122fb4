//! Matrix exponential by scaling and squaring with a fixed [13/13] Padé
//! approximant (Higham 2005). Intended for the tiny dense matrices of the
//! per-mode propagators, where eigendecomposition is unsafe because
//! coinciding velocities can make the generator defective.

use nalgebra::{allocator::Allocator, ComplexField, DefaultAllocator, Dim, DimMin, OMatrix};

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371_920_351_148_152;

fn one_norm<T, D>(a: &OMatrix<T, D, D>) -> f64
where
    T: ComplexField<RealField = f64>,
    D: Dim,
    DefaultAllocator: Allocator<D, D>,
{
    a.column_iter()
        .map(|c| c.iter().map(|z| z.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(A) for a square matrix.
///
/// Panics if the Padé denominator is singular, which cannot happen once
/// ‖A‖₁ has been scaled below θ₁₃.
pub fn expm<T, D>(a: &OMatrix<T, D, D>) -> OMatrix<T, D, D>
where
    T: ComplexField<RealField = f64>,
    D: Dim + DimMin<D, Output = D>,
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    let (nrows, ncols) = a.shape_generic();
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scale = T::from_real(2f64.powi(-squarings));
    let a = a * scale;
    let ident = OMatrix::<T, D, D>::identity_generic(nrows, ncols);
    let b = |i: usize| T::from_real(PADE13[i]);

    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &ident * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &ident * b(0);

    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
