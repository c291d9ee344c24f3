//! Minimal 2-d FFT helpers on the periodic torus grid.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::sync::Arc;

use rayon::prelude::*;

/// In-place 2-d FFT of a row-major `n x n` complex buffer.
pub(crate) fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n * n);
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    run_rows(data, n, &fft);
    transpose_square(data, n);
    run_rows(data, n, &fft);
    transpose_square(data, n);
    if inverse {
        let scale = 1.0 / (n * n) as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }
}

fn run_rows(data: &mut [Complex64], n: usize, fft: &Arc<dyn rustfft::Fft<f64>>) {
    data.par_chunks_mut(n).for_each_init(
        || vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
        |scratch, row| fft.process_with_scratch(row, scratch),
    );
}

fn transpose_square(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Forward transform of a real field.
pub(crate) fn forward_real(values: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, n, false);
    buf
}

/// Inverse transform, dropping the (numerically tiny) imaginary parts.
pub(crate) fn inverse_to_real(mut spectrum: Vec<Complex64>, n: usize) -> Vec<f64> {
    fft2(&mut spectrum, n, true);
    spectrum.into_iter().map(|v| v.re).collect()
}

/// Circular convolution of a real field with unit-mass discrete weights.
pub(crate) fn convolve(field_hat: &[Complex64], kernel_hat: &[Complex64], n: usize) -> Vec<f64> {
    let spec: Vec<Complex64> = field_hat
        .iter()
        .zip(kernel_hat)
        .map(|(a, b)| a * b)
        .collect();
    inverse_to_real(spec, n)
}
