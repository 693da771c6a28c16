//! Low-rank factorizations of the two-body tensor and LCU 1-norms.
//!
//! LCU coefficient convention (shared with the resource estimator). Writing
//! `N_k = Σ_σ n_kσ` for a (possibly rotated) spatial mode and `z = 1 − 2n` for
//! the spin-orbital reflection, a diagonal two-body block
//! `½ Σ_kl Z_kl N_k N_l − Σ_k (Σ_l Z_kl) N_k` equals
//! `const + ⅛ Σ_{(kσ)≠(lτ)} Z_kl z_kσ z_lτ`, so it contributes
//! `½ Σ_{k≠l} |Z_kl| + ¼ Σ_k |Z_kk|` to λ. The leftover one-body part is folded
//! into the effective one-body matrix
//! `T_eff = t − ½ Σ_r v_prrq + Σ_r v_pqrr`, whose eigenvalues `ε` contribute
//! `Σ |ε|`. The identity coefficient is not counted; it is the global energy
//! shift reported by `identity_shift`.

pub mod lm;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Result};
use crate::hamiltonian_io::ActiveSpaceHamiltonian;
use crate::linalg::eigh_real;
use crate::real::{c, f, Real};
use lm::LmOptions;

/// THC form `v_pqrs ≈ Σ_μν X_pμ X_qμ Z_μν X_rν X_sν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThcFactorization<T: Real> {
    #[serde(with = "crate::serde_mat")]
    pub x: DMatrix<T>,
    #[serde(with = "crate::serde_mat")]
    pub z: DMatrix<T>,
    pub rank: usize,
    pub frob_error: T,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct CdfFragment<T: Real> {
    #[serde(with = "crate::serde_mat")]
    pub u: DMatrix<T>,
    #[serde(with = "crate::serde_mat")]
    pub z: DMatrix<T>,
}

/// `H = e_core + Σ_k z0_k N_k(u0) + Σ_ℓ [½ Σ_kl Z_kl N_k N_l − Σ_k S_k N_k](U^ℓ)`
/// with `S_k = Σ_l Z_kl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfFactorization<T: Real> {
    #[serde(with = "crate::serde_mat")]
    pub u0: DMatrix<T>,
    pub z0: Vec<T>,
    pub fragments: Vec<CdfFragment<T>>,
    pub n_frag: usize,
    pub e_core: T,
    pub frob_error: T,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedLcu {
    pub lambda: f64,
    pub e_th: f64,
    pub lambda_prime: f64,
}

pub fn shift_lcu(lambda: f64, e_th: f64) -> Result<ShiftedLcu> {
    if !(lambda >= 0.0) || !e_th.is_finite() {
        return Err(Error::domain(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(ShiftedLcu { lambda, e_th, lambda_prime: lambda + e_th.abs() })
}

/// Either factorization, for code paths that accept both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Factorization<T: Real> {
    Thc(ThcFactorization<T>),
    Cdf(CdfFactorization<T>),
}

/// `Σ|ε(one_body)|` plus the two-body contribution of `fac`.
pub fn one_norm<T: Real>(fac: &Factorization<T>, one_body: &DMatrix<T>) -> T {
    let two = match fac {
        Factorization::Thc(x) => block_norm(&x.z),
        Factorization::Cdf(x) => x.fragments.iter().fold(T::zero(), |a, fr| a + block_norm(&fr.z)),
    };
    spectral_one_norm(one_body) + two
}

fn spectral_one_norm<T: Real>(m: &DMatrix<T>) -> T {
    eigh_real(m).0.into_iter().fold(T::zero(), |a, e| a + e.abs())
}

/// `½ Σ_{k≠l} |Z_kl| + ¼ Σ_k |Z_kk|`
pub fn block_norm<T: Real>(z: &DMatrix<T>) -> T {
    let mut s = T::zero();
    for k in 0..z.nrows() {
        for l in 0..z.ncols() {
            let w: T = if k == l { c(0.25) } else { c(0.5) };
            s += w * z[(k, l)].abs();
        }
    }
    s
}

/// Identity coefficient of a diagonal block, `−½ Σ_kl Z_kl + ¼ Σ_k Z_kk`.
fn block_constant<T: Real>(z: &DMatrix<T>) -> T {
    let mut s = T::zero();
    for k in 0..z.nrows() {
        s += c::<T>(0.25) * z[(k, k)];
        for l in 0..z.ncols() {
            s -= c::<T>(0.5) * z[(k, l)];
        }
    }
    s
}

/// `t − ½ Σ_r v_prrq + Σ_r v_pqrr` for a dense `N⁴` tensor.
pub fn effective_one_body<T: Real>(t: &DMatrix<T>, v: &[T]) -> DMatrix<T> {
    let n = t.nrows();
    let at = |p: usize, q: usize, r: usize, s: usize| v[((p * n + q) * n + r) * n + s];
    DMatrix::from_fn(n, n, |p, q| {
        let mut x = t[(p, q)];
        for r in 0..n {
            x += at(p, q, r, r) - c::<T>(0.5) * at(p, r, r, q);
        }
        x
    })
}

fn frob(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn tensor_f64<T: Real>(h: &ActiveSpaceHamiltonian<T>) -> Vec<f64> {
    h.v.iter().map(|&x| f(x)).collect()
}

fn cast_mat<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(c::<T>)
}

fn mat_f64<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(f)
}

// ---------------------------------------------------------------- THC

impl<T: Real> ThcFactorization<T> {
    pub fn n_orb(&self) -> usize {
        self.x.nrows()
    }

    /// Explicit `N⁴` rebuild.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.n_orb();
        let m = self.rank;
        let mut out = vec![T::zero(); n.pow(4)];
        for mu in 0..m {
            for nu in 0..m {
                let zz = self.z[(mu, nu)];
                if zz == T::zero() {
                    continue;
                }
                for p in 0..n {
                    for q in 0..n {
                        let a = zz * self.x[(p, mu)] * self.x[(q, mu)];
                        for r in 0..n {
                            for s in 0..n {
                                out[((p * n + q) * n + r) * n + s] += a * self.x[(r, nu)] * self.x[(s, nu)];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Hamiltonian with the two-body tensor replaced by its THC rebuild.
    pub fn to_hamiltonian(&self, h: &ActiveSpaceHamiltonian<T>) -> ActiveSpaceHamiltonian<T> {
        ActiveSpaceHamiltonian { v: self.reconstruct(), ..h.clone() }
    }

    /// λ for the Hamiltonian `(t, THC rebuild)`.
    pub fn one_norm(&self, t: &DMatrix<T>) -> T {
        let teff = effective_one_body(t, &self.reconstruct());
        spectral_one_norm(&teff) + block_norm(&self.z)
    }

    /// Identity coefficient of the LCU of `(e_core, t, THC rebuild)`.
    pub fn identity_shift(&self, t: &DMatrix<T>, e_core: T) -> T {
        e_core + effective_one_body(t, &self.reconstruct()).trace() + block_constant(&self.z)
    }

    pub fn cast<U: Real>(&self) -> ThcFactorization<U> {
        ThcFactorization {
            x: cast_mat(&mat_f64(&self.x)),
            z: cast_mat(&mat_f64(&self.z)),
            rank: self.rank,
            frob_error: c(f(self.frob_error)),
            flags: self.flags.clone(),
        }
    }
}

/// Ranks tried by `thc_factorize`: `max(1, N/2)` doubling while below
/// `N(N+1)/2` (where an exact fit always exists), then `N(N+1)/2`, all capped
/// at `max_rank`.
pub fn thc_rank_ladder(n: usize, max_rank: usize) -> Vec<usize> {
    let full = n * (n + 1) / 2;
    let mut out = Vec::new();
    let mut r = (n / 2).max(1);
    while r < full {
        out.push(r);
        r *= 2;
    }
    out.push(full);
    let mut capped: Vec<usize> = out.into_iter().map(|r| r.min(max_rank)).filter(|&r| r > 0).collect();
    capped.dedup();
    capped
}

/// Khatri–Rao matrix `W[(pq), μ] = X_pμ X_qμ`.
fn khatri_rao(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n * n, x.ncols(), |pq, mu| x[(pq / n, mu)] * x[(pq % n, mu)])
}

fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-12 * smax.max(1e-300) * (a.nrows().max(a.ncols()) as f64);
    svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), a.nrows()))
}

/// Least-squares `Z` for fixed `X`.
fn thc_core(vm: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let wp = pinv(&khatri_rao(x));
    let z = &wp * vm * wp.transpose();
    (&z + z.transpose()) * 0.5
}

fn thc_residual(vm: &DMatrix<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let w = khatri_rao(x);
    let z = thc_core(vm, x);
    let r = vm - &w * z * w.transpose();
    DVector::from_column_slice(r.as_slice())
}

/// Candidate THC vectors from the eigenvectors of the Cholesky-like factors
/// of `V`, ranked by their weight in the expansion.
fn thc_seed_vectors(vm: &DMatrix<f64>, n: usize) -> Vec<DVector<f64>> {
    let (sig, vecs) = eigh_real(vm);
    let mut cand: Vec<(f64, DVector<f64>)> = Vec::new();
    for (k, &s) in sig.iter().enumerate() {
        if s.abs() < 1e-14 {
            continue;
        }
        let l = DMatrix::from_column_slice(n, n, vecs.column(k).as_slice());
        let l = (&l + l.transpose()) * 0.5;
        let (w, y) = eigh_real(&l);
        for j in 0..n {
            cand.push((s.abs() * w[j] * w[j], y.column(j).into_owned()));
        }
    }
    cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut chosen: Vec<DVector<f64>> = Vec::new();
    for (_, v) in cand {
        if chosen.iter().all(|u| u.dot(&v).abs() < 0.999) {
            chosen.push(v);
        }
    }
    chosen
}

/// Exact spanning set `{e_i} ∪ {(e_i + e_j)/√2}`.
fn thc_exact_init(n: usize) -> DMatrix<f64> {
    let full = n * (n + 1) / 2;
    let mut x = DMatrix::zeros(n, full);
    let mut col = 0;
    for i in 0..n {
        x[(i, col)] = 1.0;
        col += 1;
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in i + 1..n {
            x[(i, col)] = s;
            x[(j, col)] = s;
            col += 1;
        }
    }
    x
}

/// Normalize columns, rescale `Z`, drop null columns.
fn thc_normalize(x: &DMatrix<f64>, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let keep: Vec<usize> = (0..x.ncols()).filter(|&m| x.column(m).norm() > 1e-12).collect();
    let norms: Vec<f64> = keep.iter().map(|&m| x.column(m).norm()).collect();
    let xn = DMatrix::from_fn(x.nrows(), keep.len(), |p, a| x[(p, keep[a])] / norms[a]);
    let zn = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
        z[(keep[a], keep[b])] * norms[a] * norms[a] * norms[b] * norms[b]
    });
    (xn, zn)
}

fn thc_fit_rank(vm: &DMatrix<f64>, n: usize, m: usize, thr: f64, seeds: &[DVector<f64>]) -> (DMatrix<f64>, f64) {
    let mut inits: Vec<DMatrix<f64>> = Vec::new();
    if m >= n * (n + 1) / 2 {
        let mut x = DMatrix::zeros(n, m);
        x.columns_mut(0, n * (n + 1) / 2).copy_from(&thc_exact_init(n));
        inits.push(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7c);
    let mut seeded = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    for (k, v) in seeds.iter().take(m).enumerate() {
        seeded.set_column(k, v);
    }
    inits.push(seeded);
    for _ in 0..4 {
        inits.push(DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)));
    }
    let opts = LmOptions { max_iter: 150, target_cost: 0.5 * (0.05 * thr).powi(2), rel_tol: 1e-12 };
    let mut best: Option<(DMatrix<f64>, f64)> = None;
    for x0 in inits {
        let r0 = thc_residual(vm, &x0).norm();
        let (xv, _) = if r0 <= 0.05 * thr {
            (DVector::from_column_slice(x0.as_slice()), 0.0)
        } else {
            lm::minimize(
                |p| thc_residual(vm, &DMatrix::from_column_slice(n, m, p.as_slice())),
                DVector::from_column_slice(x0.as_slice()),
                &opts,
            )
        };
        let x = DMatrix::from_column_slice(n, m, xv.as_slice());
        let err = thc_residual(vm, &x).norm();
        if best.as_ref().map_or(true, |b| err < b.1) {
            best = Some((x, err));
        }
        if err <= thr {
            break;
        }
    }
    best.expect("at least one initialization")
}

/// THC factorization with the smallest rank on the ladder meeting
/// `frob_threshold`. When `max_rank` is exhausted the best fit is returned
/// with a `rank_exhausted` flag.
pub fn thc_factorize<T: Real>(h: &ActiveSpaceHamiltonian<T>, frob_threshold: f64, max_rank: usize) -> Result<ThcFactorization<T>> {
    if !(frob_threshold > 0.0) {
        return Err(Error::domain("frob_threshold must be positive"));
    }
    let n = h.n_orb;
    let v = tensor_f64(h);
    let vm = DMatrix::from_row_slice(n * n, n * n, &v);
    let vnorm = vm.norm();
    let empty = |err: f64, flags: Vec<Flag>| ThcFactorization {
        x: DMatrix::zeros(n, 0),
        z: DMatrix::zeros(0, 0),
        rank: 0,
        frob_error: c(err),
        flags,
    };
    if vnorm <= frob_threshold {
        return Ok(empty(vnorm, vec![]));
    }
    if max_rank == 0 {
        return Ok(empty(vnorm, vec![Flag::new("rank_exhausted", format!("max_rank 0, error {vnorm:e}"))]));
    }
    let seeds = thc_seed_vectors(&vm, n);
    let mut best: Option<ThcFactorization<f64>> = None;
    for m in thc_rank_ladder(n, max_rank) {
        let (x, _) = thc_fit_rank(&vm, n, m, frob_threshold, &seeds);
        let z = thc_core(&vm, &x);
        let (x, z) = thc_normalize(&x, &z);
        let mut fac = ThcFactorization { rank: x.ncols(), x, z, frob_error: 0.0, flags: vec![] };
        fac.frob_error = frob(&fac.reconstruct(), &v);
        let done = fac.frob_error <= frob_threshold;
        if best.as_ref().map_or(true, |b| fac.frob_error < b.frob_error) {
            best = Some(fac);
        }
        if done {
            return Ok(best.expect("set above").cast());
        }
    }
    let mut b = best.expect("ladder is non-empty");
    b.flags.push(Flag::new(
        "rank_exhausted",
        format!("max_rank {max_rank} reached with error {:e} above {frob_threshold:e}", b.frob_error),
    ));
    Ok(b.cast())
}

// ---------------------------------------------------------------- CDF

impl<T: Real> CdfFactorization<T> {
    pub fn n_orb(&self) -> usize {
        self.u0.nrows()
    }

    /// Two-body tensor represented by the fragments.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.n_orb();
        let mut out = vec![T::zero(); n.pow(4)];
        for fr in &self.fragments {
            for k in 0..n {
                for l in 0..n {
                    let zz = fr.z[(k, l)];
                    if zz == T::zero() {
                        continue;
                    }
                    for p in 0..n {
                        for q in 0..n {
                            let a = zz * fr.u[(p, k)] * fr.u[(q, k)];
                            for r in 0..n {
                                for s in 0..n {
                                    out[((p * n + q) * n + r) * n + s] += a * fr.u[(r, l)] * fr.u[(s, l)];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `u0 · diag(z0) · u0ᵀ`
    pub fn one_body(&self) -> DMatrix<T> {
        let d = DMatrix::from_diagonal(&DVector::from_vec(self.z0.clone()));
        &self.u0 * d * self.u0.transpose()
    }

    /// Chemist-notation Hamiltonian equal to the factorized operator.
    pub fn to_hamiltonian(&self) -> ActiveSpaceHamiltonian<T> {
        let n = self.n_orb();
        let v = self.reconstruct();
        // invert T_eff = t − ½ Σ v_prrq + Σ v_pqrr
        let zero_t = DMatrix::zeros(n, n);
        let corr = effective_one_body(&zero_t, &v);
        let mut h = ActiveSpaceHamiltonian::zeros(n);
        h.t = self.one_body() - corr;
        h.v = v;
        h.e_core = self.e_core;
        h
    }

    pub fn one_norm(&self) -> T {
        self.z0.iter().fold(T::zero(), |a, z| a + z.abs())
            + self.fragments.iter().fold(T::zero(), |a, fr| a + block_norm(&fr.z))
    }

    pub fn identity_shift(&self) -> T {
        self.z0.iter().fold(self.e_core, |a, &z| a + z)
            + self.fragments.iter().fold(T::zero(), |a, fr| a + block_constant(&fr.z))
    }

    /// Largest `‖UᵀU − 1‖_max` over all rotations.
    pub fn orthogonality_defect(&self) -> T {
        std::iter::once(&self.u0)
            .chain(self.fragments.iter().map(|fr| &fr.u))
            .map(|u| {
                let d = u.transpose() * u - DMatrix::identity(u.ncols(), u.ncols());
                d.iter().fold(T::zero(), |m, x| m.max(x.abs()))
            })
            .fold(T::zero(), |m, x| m.max(x))
    }

    pub fn cast<U: Real>(&self) -> CdfFactorization<U> {
        CdfFactorization {
            u0: cast_mat(&mat_f64(&self.u0)),
            z0: self.z0.iter().map(|&x| c(f(x))).collect(),
            fragments: self
                .fragments
                .iter()
                .map(|fr| CdfFragment { u: cast_mat(&mat_f64(&fr.u)), z: cast_mat(&mat_f64(&fr.z)) })
                .collect(),
            n_frag: self.n_frag,
            e_core: c(f(self.e_core)),
            frob_error: c(f(self.frob_error)),
            flags: self.flags.clone(),
        }
    }
}

/// Columns of the joint least-squares problem for the cores of fixed rotations.
fn cdf_design(us: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let per = n * (n + 1) / 2;
    let mut g = DMatrix::zeros(n.pow(4), us.len() * per);
    for (f_i, u) in us.iter().enumerate() {
        let mut col = f_i * per;
        for k in 0..n {
            for l in k..n {
                for p in 0..n {
                    for q in 0..n {
                        let a = u[(p, k)] * u[(q, k)];
                        let b = u[(p, l)] * u[(q, l)];
                        for r in 0..n {
                            for s in 0..n {
                                let mut x = a * u[(r, l)] * u[(s, l)];
                                if k != l {
                                    x += b * u[(r, k)] * u[(s, k)];
                                }
                                g[(((p * n + q) * n + r) * n + s, col)] = x;
                            }
                        }
                    }
                }
                col += 1;
            }
        }
    }
    g
}

fn cdf_cores(us: &[DMatrix<f64>], n: usize, v: &DVector<f64>) -> (Vec<DMatrix<f64>>, f64) {
    let g = cdf_design(us, n);
    let coef = pinv(&g) * v;
    let err = (&g * &coef - v).norm();
    let per = n * (n + 1) / 2;
    let zs = (0..us.len())
        .map(|f_i| {
            let mut z = DMatrix::zeros(n, n);
            let mut col = f_i * per;
            for k in 0..n {
                for l in k..n {
                    z[(k, l)] = coef[col];
                    z[(l, k)] = coef[col];
                    col += 1;
                }
            }
            z
        })
        .collect();
    (zs, err)
}

fn antisym_exp(base: &DMatrix<f64>, p: &[f64], n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    let mut i = 0;
    for a in 0..n {
        for b in a + 1..n {
            k[(a, b)] = p[i];
            k[(b, a)] = -p[i];
            i += 1;
        }
    }
    base * k.exp()
}

/// Numerical rank threshold for the eigenvalues of `V`.
const RANK_TOL: f64 = 1e-12;

/// CDF with the fewest fragments (ladder `L = 1, 2, …, rank V`) meeting
/// `threshold`. Fragments start from the eigen-decomposition of `V`; cores
/// are refit jointly and the rotations refined when that alone is not enough.
pub fn cdf_factorize<T: Real>(h: &ActiveSpaceHamiltonian<T>, threshold: f64) -> Result<CdfFactorization<T>> {
    if !(threshold > 0.0) {
        return Err(Error::domain("threshold must be positive"));
    }
    let n = h.n_orb;
    let v = tensor_f64(h);
    let vvec = DVector::from_vec(v.clone());
    let vm = DMatrix::from_row_slice(n * n, n * n, &v);
    let vnorm = vm.norm();

    let mut fragments_f64: Vec<CdfFragment<f64>> = Vec::new();
    let mut flags = Vec::new();
    let mut err = vnorm;
    if vnorm > threshold {
        let (sig, vecs) = eigh_real(&vm);
        let smax = sig.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let mut order: Vec<usize> = (0..sig.len()).filter(|&k| sig[k].abs() > RANK_TOL * smax).collect();
        order.sort_by(|&a, &b| sig[b].abs().partial_cmp(&sig[a].abs()).unwrap_or(std::cmp::Ordering::Equal));
        let rot_of = |k: usize| {
            let l = DMatrix::from_column_slice(n, n, vecs.column(k).as_slice());
            eigh_real(&((&l + l.transpose()) * 0.5)).1
        };
        let mut best: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, f64)> = None;
        for l in 1..=order.len() {
            let us: Vec<DMatrix<f64>> = order[..l].iter().map(|&k| rot_of(k)).collect();
            let (zs, e0) = cdf_cores(&us, n, &vvec);
            let (us, zs, e) = if e0 <= threshold || n < 2 {
                (us, zs, e0)
            } else {
                let np = n * (n - 1) / 2;
                let opts = LmOptions { max_iter: 40, target_cost: 0.5 * (0.5 * threshold).powi(2), rel_tol: 1e-10 };
                let resid = |p: &DVector<f64>| {
                    let rots: Vec<DMatrix<f64>> =
                        us.iter().enumerate().map(|(i, b)| antisym_exp(b, &p.as_slice()[i * np..(i + 1) * np], n)).collect();
                    let g = cdf_design(&rots, n);
                    let coef = pinv(&g) * &vvec;
                    &g * coef - &vvec
                };
                let (p, _) = lm::minimize(resid, DVector::zeros(l * np), &opts);
                let rots: Vec<DMatrix<f64>> =
                    us.iter().enumerate().map(|(i, b)| antisym_exp(b, &p.as_slice()[i * np..(i + 1) * np], n)).collect();
                let (zs2, e2) = cdf_cores(&rots, n, &vvec);
                if e2 < e0 {
                    (rots, zs2, e2)
                } else {
                    (us, zs, e0)
                }
            };
            let done = e <= threshold;
            if best.as_ref().map_or(true, |b| e < b.2) {
                best = Some((us, zs, e));
            }
            if done {
                break;
            }
        }
        if let Some((us, zs, e)) = best {
            fragments_f64 = us.into_iter().zip(zs).map(|(u, z)| CdfFragment { u, z }).collect();
            err = e;
        }
        if err > threshold {
            flags.push(Flag::new(
                "rank_exhausted",
                format!("numerical rank {} reached with error {err:e} above {threshold:e}", order.len()),
            ));
        }
    }

    let mut fac = CdfFactorization {
        u0: DMatrix::identity(n, n),
        z0: vec![0.0; n],
        n_frag: fragments_f64.len(),
        fragments: fragments_f64,
        e_core: f(h.e_core),
        frob_error: err,
        flags,
    };
    let rebuilt = fac.reconstruct();
    fac.frob_error = frob(&rebuilt, &v);
    let teff = effective_one_body(&mat_f64(&h.t), &rebuilt);
    let (z0, u0) = eigh_real(&((&teff + teff.transpose()) * 0.5));
    fac.z0 = z0;
    fac.u0 = u0;
    Ok(fac.cast())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthogonal, random_symmetric};
    use crate::manybody::{sector_hamiltonian, Sector};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Pauli-Z string coefficients of a diagonal operator over `2n` modes via
    /// the Walsh–Hadamard transform; returns the non-identity 1-norm.
    fn walsh_one_norm(diag: &[f64]) -> f64 {
        let mut a = diag.to_vec();
        let len = a.len();
        let mut h = 1;
        while h < len {
            for i in (0..len).step_by(2 * h) {
                for j in i..i + h {
                    let (x, y) = (a[j], a[j + h]);
                    a[j] = x + y;
                    a[j + h] = x - y;
                }
            }
            h *= 2;
        }
        a.iter().skip(1).map(|x| (x / len as f64).abs()).sum()
    }

    /// Diagonal of `Σ_kl c_kl N_k N_l + Σ_k d_k N_k` over occupation strings.
    fn number_diag(n: usize, zz: &DMatrix<f64>, lin: &[f64]) -> Vec<f64> {
        (0..1usize << (2 * n))
            .map(|b| {
                let occ: Vec<f64> = (0..n).map(|k| (((b >> k) & 1) + ((b >> (n + k)) & 1)) as f64).collect();
                let mut e = 0.0;
                for k in 0..n {
                    e += lin[k] * occ[k];
                    for l in 0..n {
                        e += zz[(k, l)] * occ[k] * occ[l];
                    }
                }
                e
            })
            .collect()
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift_lcu(3.0, -0.5).unwrap().lambda_prime, 3.5);
        assert_eq!(shift_lcu(3.0, 0.0).unwrap().lambda_prime, 3.0);
        assert_eq!(shift_lcu(0.0, 0.2).unwrap().lambda_prime, 0.2);
        assert!(matches!(shift_lcu(-1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_tensor_gives_empty_factors() {
        let h = ActiveSpaceHamiltonian::<f64>::zeros(3);
        let thc = thc_factorize(&h, 1e-6, 10).unwrap();
        assert_eq!(thc.rank, 0);
        assert_eq!(thc.frob_error, 0.0);
        let cdf = cdf_factorize(&h, 1e-6).unwrap();
        assert!(cdf.fragments.is_empty());
        let fac = Factorization::Thc(thc);
        assert_eq!(one_norm(&fac, &DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn recovers_synthetic_rank_two_thc() {
        let mut r = rng(11);
        let n = 4;
        let x = DMatrix::from_fn(n, 2, |_, _| r.gen_range(-1.0..1.0));
        let z = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, -0.6]);
        let (x, z) = thc_normalize(&x, &z);
        let truth = ThcFactorization { x, z, rank: 2, frob_error: 0.0, flags: vec![] };
        let mut h = ActiveSpaceHamiltonian::zeros(n);
        h.v = truth.reconstruct();
        let fac = thc_factorize(&h, 1e-9, 8).unwrap();
        assert!(fac.rank <= 2, "rank {}", fac.rank);
        assert!(fac.frob_error <= 1e-8);
        assert!(fac.flags.is_empty());
        assert!((fac.frob_error - frob(&fac.reconstruct(), &h.v)).abs() < 1e-12);
        for m in 0..fac.rank {
            assert!((fac.x.column(m).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn random_tensor_meets_threshold() {
        let mut r = rng(5);
        let n = 4;
        let mut h = ActiveSpaceHamiltonian::zeros(n);
        for p in 0..n {
            for q in 0..=p {
                for s in 0..n {
                    for t in 0..=s {
                        h.set_v_sym(p, q, s, t, r.gen_range(-0.5..0.5));
                    }
                }
            }
        }
        let fac = thc_factorize(&h, 1e-3, 64).unwrap();
        let rebuilt = fac.reconstruct();
        assert!(frob(&rebuilt, &h.v) <= 1e-3);
        assert!((fac.z.clone() - fac.z.transpose()).amax() < 1e-10);
    }

    #[test]
    fn exhausted_rank_is_flagged() {
        let mut r = rng(6);
        let mut h = ActiveSpaceHamiltonian::zeros(3);
        for p in 0..3 {
            for q in 0..=p {
                for s in 0..3 {
                    for t in 0..=s {
                        h.set_v_sym(p, q, s, t, r.gen_range(-0.5..0.5));
                    }
                }
            }
        }
        let fac = thc_factorize(&h, 1e-10, 1).unwrap();
        assert_eq!(fac.flags[0].code, "rank_exhausted");
        assert!(fac.frob_error > 1e-10);
    }

    #[test]
    fn single_thc_term_matches_pauli_expansion() {
        // t = 0, v_0000 = 4 at N = 2: the operator is diagonal in occupations
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(2);
        h.set_v_sym(0, 0, 0, 0, 4.0);
        let m = sector_hamiltonian(&h, &Sector::full(2));
        let diag: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].re).collect();
        let oracle = walsh_one_norm(&diag);
        let mut x = DMatrix::zeros(2, 1);
        x[(0, 0)] = 1.0;
        let thc = ThcFactorization { x, z: DMatrix::from_element(1, 1, 4.0), rank: 1, frob_error: 0.0, flags: vec![] };
        assert!((thc.one_norm(&h.t) - oracle).abs() < 1e-12);
        assert!((oracle - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_norm_matches_fragmentwise_pauli_expansion() {
        let mut r = rng(21);
        let n = 2;
        let fragments: Vec<CdfFragment<f64>> = (0..3)
            .map(|_| CdfFragment { u: random_orthogonal(n, &mut r), z: random_symmetric(n, &mut r) })
            .collect();
        let z0 = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let fac = CdfFactorization {
            u0: random_orthogonal(n, &mut r),
            z0: z0.clone(),
            n_frag: 3,
            fragments: fragments.clone(),
            e_core: 0.0,
            frob_error: 0.0,
            flags: vec![],
        };
        let mut oracle = walsh_one_norm(&number_diag(n, &DMatrix::zeros(n, n), &z0));
        for fr in &fragments {
            let s: Vec<f64> = (0..n).map(|k| -fr.z.row(k).sum()).collect();
            oracle += walsh_one_norm(&number_diag(n, &(&fr.z * 0.5), &s));
        }
        assert!((fac.one_norm() - oracle).abs() < 1e-10);
    }

    #[test]
    fn cdf_hamiltonian_is_bounded_by_lambda() {
        let mut r = rng(8);
        let n = 3;
        let fac = CdfFactorization {
            u0: random_orthogonal(n, &mut r),
            z0: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
            n_frag: 2,
            fragments: (0..2)
                .map(|_| CdfFragment { u: random_orthogonal(n, &mut r), z: random_symmetric(n, &mut r) })
                .collect(),
            e_core: 0.7,
            frob_error: 0.0,
            flags: vec![],
        };
        let h = fac.to_hamiltonian();
        let m = sector_hamiltonian(&h, &Sector::full(n));
        let (vals, _) = crate::linalg::eigh(&m);
        let shift = fac.identity_shift();
        let range = vals.iter().fold(0.0f64, |a: f64, e: &f64| a.max((*e - shift).abs()));
        assert!(range <= fac.one_norm() + 1e-10);
        // refactorizing the rebuilt Hamiltonian reproduces the same operator
        let again = cdf_factorize(&h, 1e-9).unwrap();
        assert!(again.frob_error <= 1e-9);
        assert!((again.one_body() - fac.one_body()).amax() < 1e-8);
    }

    #[test]
    fn cdf_diagonal_one_body_and_single_fragment() {
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(3);
        h.t = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.25, 0.5]));
        let fac = cdf_factorize(&h, 1e-8).unwrap();
        assert_eq!(fac.z0, vec![-1.0, 0.25, 0.5]);
        for k in 0..3 {
            assert!((fac.u0.column(k).amax() - 1.0).abs() < 1e-12);
        }

        let mut r = rng(9);
        let truth = CdfFactorization {
            u0: DMatrix::identity(3, 3),
            z0: vec![0.0; 3],
            n_frag: 1,
            fragments: vec![CdfFragment { u: random_orthogonal(3, &mut r), z: random_symmetric(3, &mut r) }],
            e_core: 0.0,
            frob_error: 0.0,
            flags: vec![],
        };
        h.v = truth.reconstruct();
        let fac = cdf_factorize(&h, 1e-8).unwrap();
        assert_eq!(fac.n_frag, 1);
        assert!(fac.frob_error <= 1e-8);
        assert!(fac.orthogonality_defect() < 1e-10);
    }

    #[test]
    fn factorization_json_round_trip() {
        let mut h = ActiveSpaceHamiltonian::<f64>::zeros(2);
        h.set_v_sym(0, 0, 1, 1, 0.3);
        h.set_v_sym(0, 0, 0, 0, 0.8);
        let fac = Factorization::Cdf(cdf_factorize(&h, 1e-9).unwrap());
        let s = serde_json::to_string(&fac).unwrap();
        let back: Factorization<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, fac);
    }
}
