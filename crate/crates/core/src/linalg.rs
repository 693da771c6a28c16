//! Dense Hermitian helpers on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, DVector};
use rand::Rng;

use crate::real::{c, cx, czero, Cx, Real};

/// Eigen-decomposition of a complex Hermitian matrix, eigenvalues ascending.
/// Ties keep the solver's original order (stable sort).
pub fn eigh<T: Real>(m: &DMatrix<Cx<T>>) -> (Vec<T>, DMatrix<Cx<T>>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::from_element(0, 0, czero()));
    }
    let eig = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::from_element(n, n, czero());
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Real symmetric eigen-decomposition, eigenvalues ascending.
pub fn eigh_real<T: Real>(m: &DMatrix<T>) -> (Vec<T>, DMatrix<T>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// `e^{-i t H}` for Hermitian `H`.
pub fn expm_hermitian<T: Real>(h: &DMatrix<Cx<T>>, t: T) -> DMatrix<Cx<T>> {
    let (vals, vecs) = eigh(h);
    let n = h.nrows();
    let mut scaled = vecs.clone();
    for k in 0..n {
        let th = vals[k] * t;
        let ph = cx(th.clone().cos(), -th.sin());
        for r in 0..n {
            scaled[(r, k)] *= ph;
        }
    }
    scaled * vecs.adjoint()
}

/// Spectral norm of a Hermitian matrix.
pub fn hermitian_norm<T: Real>(h: &DMatrix<Cx<T>>) -> T {
    let (vals, _) = eigh(h);
    vals.into_iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Largest deviation from Hermiticity.
pub fn hermiticity_defect<T: Real>(h: &DMatrix<Cx<T>>) -> T {
    let mut worst = T::zero();
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).modulus());
        }
    }
    worst
}

pub fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Cx<T>> {
    m.map(|x| cx(x, T::zero()))
}

/// `A·B − B·A`
pub fn commutator<T: Real>(a: &DMatrix<Cx<T>>, b: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    a * b - b * a
}

pub fn apply<T: Real>(m: &DMatrix<Cx<T>>, v: &[Cx<T>]) -> Vec<Cx<T>> {
    let dv = DVector::from_column_slice(v);
    (m * dv).iter().copied().collect()
}

/// Uniform entries in [-1, 1], Hermitian.
pub fn random_hermitian<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<Cx<T>> {
    let mut m = DMatrix::from_element(n, n, czero());
    for i in 0..n {
        m[(i, i)] = cx(c(rng.gen_range(-1.0..1.0)), T::zero());
        for j in 0..i {
            let z = cx(c(rng.gen_range(-1.0..1.0)), c(rng.gen_range(-1.0..1.0)));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Uniform entries in [-1, 1], real symmetric.
pub fn random_symmetric<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<T> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let x: T = c(rng.gen_range(-1.0..1.0));
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}

/// Random unitary as the exponential of a random Hermitian generator.
pub fn random_unitary<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<Cx<T>> {
    let k = random_hermitian::<T>(n, rng);
    expm_hermitian(&k, c(2.0))
}

/// Random real orthogonal matrix (Q factor of a random matrix).
pub fn random_orthogonal<T: Real>(n: usize, rng: &mut impl Rng) -> DMatrix<T> {
    let a = DMatrix::from_fn(n, n, |_, _| c::<T>(rng.gen_range(-1.0..1.0)));
    a.qr().q()
}

/// Random normalized state.
pub fn random_state<T: Real>(dim: usize, rng: &mut impl Rng) -> Vec<Cx<T>> {
    let mut v: Vec<Cx<T>> = (0..dim)
        .map(|_| cx(c(rng.gen_range(-1.0..1.0)), c(rng.gen_range(-1.0..1.0))))
        .collect();
    let nrm = crate::fock::norm(&v);
    v.iter_mut().for_each(|z| *z /= cx(nrm, T::zero()));
    v
}
