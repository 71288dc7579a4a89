//! Scalar abstraction and vector kernels shared by the matrix-free solvers.
//!
//! Reductions are chunked with a fixed chunk size and summed sequentially, so
//! results do not depend on the number of worker threads.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

const CHUNK: usize = 1 << 12;

/// Field of amplitudes: `f64` for real symmetric sector blocks, `Complex64` otherwise.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Default + Send + Sync + 'static {
    fn lift(x: f64) -> Self;
    /// A random entry with independent standard-uniform components in (-0.5, 0.5).
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Largest absolute imaginary part, zero for real scalars.
    fn imag_abs(self) -> f64;
    fn into_complex(self) -> C64;
}

impl Scalar for f64 {
    fn lift(x: f64) -> Self {
        x
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>() - 0.5
    }
    fn imag_abs(self) -> f64 {
        0.0
    }
    fn into_complex(self) -> C64 {
        C64::new(self, 0.0)
    }
}

impl Scalar for C64 {
    fn lift(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    }
    fn imag_abs(self) -> f64 {
        self.im.abs()
    }
    fn into_complex(self) -> C64 {
        self
    }
}

/// A Hermitian operator that can be applied to a vector without being stored.
pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[T], y: &mut [T]);
}

impl<T: Scalar, A: LinearOperator<T> + ?Sized> LinearOperator<T> for &A {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        (**self).apply(x, y)
    }
}

/// ⟨x|y⟩ with the conjugate on the left.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let partial: Vec<T> = x
        .par_chunks(CHUNK)
        .zip(y.par_chunks(CHUNK))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .fold(T::zero(), |acc, (&p, &q)| acc + p.conjugate() * q)
        })
        .collect();
    partial.into_iter().fold(T::zero(), |acc, v| acc + v)
}

pub fn norm<T: Scalar>(x: &[T]) -> f64 {
    let partial: Vec<f64> = x
        .par_chunks(CHUNK)
        .map(|a| a.iter().map(|v| v.modulus_squared()).sum::<f64>())
        .collect();
    partial.into_iter().sum::<f64>().sqrt()
}

/// `y += a x`
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(yc, xc)| {
            for (yi, &xi) in yc.iter_mut().zip(xc) {
                *yi += a * xi;
            }
        });
}

pub fn scale<T: Scalar>(a: T, x: &mut [T]) {
    x.par_chunks_mut(CHUNK).for_each(|c| {
        for v in c {
            *v *= a;
        }
    });
}

/// Normalizes in place and returns the previous norm.
pub fn normalize<T: Scalar>(x: &mut [T]) -> f64 {
    let n = norm(x);
    if n > 0.0 {
        scale(T::lift(1.0 / n), x);
    }
    n
}

/// Dense matrix assembled column by column from the matrix-free action.
pub fn assemble_dense<T: Scalar, A: LinearOperator<T> + ?Sized>(op: &A) -> DMatrix<T> {
    let dim = op.dim();
    let mut m = DMatrix::<T>::zeros(dim, dim);
    let mut e = vec![T::zero(); dim];
    let mut col = vec![T::zero(); dim];
    for k in 0..dim {
        e[k] = T::one();
        op.apply(&e, &mut col);
        e[k] = T::zero();
        for (i, &v) in col.iter().enumerate() {
            m[(i, k)] = v;
        }
    }
    m
}

/// A weighted sum of operators sharing one space.
pub struct LinearCombination<'a, T: Scalar> {
    pub parts: Vec<(f64, &'a (dyn LinearOperator<T> + 'a))>,
}

impl<T: Scalar> LinearOperator<T> for LinearCombination<'_, T> {
    fn dim(&self) -> usize {
        self.parts.first().map_or(0, |(_, op)| op.dim())
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        y.iter_mut().for_each(|v| *v = T::zero());
        let mut tmp = vec![T::zero(); x.len()];
        for (w, op) in &self.parts {
            if *w == 0.0 {
                continue;
            }
            op.apply(x, &mut tmp);
            axpy(T::lift(*w), &tmp, y);
        }
    }
}
