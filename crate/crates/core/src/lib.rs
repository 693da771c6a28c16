//! Desk-scale numerics and logical resource estimates for photosensitizer
//! screening algorithms: threshold-projection window absorption, spin-orbit
//! evolution proxies for intersystem crossing, Trotterized spectroscopy and
//! vibronic dynamics.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases below fix it to `f64`.

pub mod error;
pub mod factorization;
pub mod fock;
pub mod hamiltonian_io;
pub mod isc_proxy;
pub mod linalg;
pub mod manybody;
pub mod presets;
pub mod qsp_filter;
pub mod real;
pub mod resource_estimator;
pub(crate) mod serde_mat;
pub mod trotter_engine;
pub mod vibronic_engine;
pub mod window_simulator;
pub mod cli;

pub use error::{Error, Flag, Result};
pub use real::Real;

pub type Hamiltonian = hamiltonian_io::ActiveSpaceHamiltonian<f64>;
pub type Dipole = hamiltonian_io::DipoleOperator<f64>;
pub type Soc = hamiltonian_io::SOCOperator<f64>;
pub type Solvent = hamiltonian_io::SolventModel<f64>;
pub type System = hamiltonian_io::LoadedSystem<f64>;
pub type Thc = factorization::ThcFactorization<f64>;
pub type Cdf = factorization::CdfFactorization<f64>;
pub type Filter = qsp_filter::FilterPolynomial<f64>;
pub type Window = window_simulator::SpectralWindow<f64>;
pub type Complex = num_complex::Complex<f64>;

/// Hartree per nanometre-inverse: `E[Ha] = HC_HARTREE_NM / λ[nm]`.
pub const HC_HARTREE_NM: f64 = 45.5633525316;

pub fn nm_to_hartree(nm: f64) -> f64 {
    HC_HARTREE_NM / nm
}

/// Write via a sibling temporary file and rename.
pub fn atomic_write(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let io = |e| Error::Io { path: path.display().to_string(), source: e };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(std::path::Path::new("."));
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut fh = std::fs::File::create(&tmp).map_err(io)?;
    fh.write_all(bytes).map_err(io)?;
    fh.sync_all().map_err(io)?;
    drop(fh);
    std::fs::rename(&tmp, path).map_err(io)
}
