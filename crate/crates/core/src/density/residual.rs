use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{DensityError, DensityField};

/// (x-order, t-order) of the derivative multiplying c1..c8 in the
/// input–output equation; the leading N^(0,3) has coefficient one.
pub const IO_TERMS: [(u32, u32); 8] = [
    (1, 2),
    (2, 1),
    (3, 0),
    (0, 2),
    (1, 1),
    (2, 0),
    (0, 1),
    (1, 0),
];

/// Relative residual of
///
/// ```text
/// N^(0,3) + c1 N^(1,2) + c2 N^(2,1) + c3 N^(3,0) + c4 N^(0,2) + c5 N^(1,1)
///   + c6 N^(2,0) + c7 N^(0,1) + c8 N^(1,0) = 0
/// ```
///
/// with N^(i,j) = ∂xⁱ ∂tʲ N evaluated exactly per Fourier mode.
///
/// Returns max |residual| over all snapshots divided by the largest
/// max |term|; zero when every term vanishes.
pub fn io_equation_residual(field: &DensityField, coeffs: &[f64; 8]) -> Result<f64, DensityError> {
    let modes = field
        .spectral_modes()
        .ok_or(DensityError::RequiresSpectralField)?;
    let n = modes.n_modes();
    let inverse = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let weights: Vec<(f64, u32, u32)> = std::iter::once((1.0, 0, 3))
        .chain(coeffs.iter().zip(IO_TERMS).map(|(&c, (i, j))| (c, i, j)))
        .collect();

    let mut worst_residual = 0.0f64;
    let mut largest_term = 0.0f64;
    for amps in &modes.amplitudes {
        let mut terms: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; weights.len()];
        for (m, (a, &k)) in amps.iter().zip(&modes.wavenumbers).enumerate() {
            let gen = modes.generator(k);
            // 1ᵀ Mʲ a for j = 0..3 gives ∂tʲ of the total mode amplitude.
            let mut v = *a;
            let mut dt = [Complex64::new(0.0, 0.0); 4];
            for d in dt.iter_mut() {
                *d = v.sum();
                v = gen * v;
            }
            let ik = Complex64::new(0.0, k);
            for (term, &(c, i, j)) in terms.iter_mut().zip(&weights) {
                term[m] = ik.powu(i) * dt[j as usize] * c;
            }
        }
        let mut residual = vec![0.0; n];
        for term in &mut terms {
            inverse.process(term);
            let mut peak = 0.0f64;
            for (r, z) in residual.iter_mut().zip(term.iter()) {
                let value = z.re / n as f64;
                *r += value;
                peak = peak.max(value.abs());
            }
            largest_term = largest_term.max(peak);
        }
        worst_residual = worst_residual.max(residual.iter().fold(0.0, |m, r| m.max(r.abs())));
    }
    if largest_term == 0.0 {
        return Ok(0.0);
    }
    Ok(worst_residual / largest_term)
}
