//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 computation failed or flagged, 2 usage, 3 I/O or
//! unreadable input. Failures print `{"error": {...}}` on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Flag};
use crate::factorization::{cdf_factorize, shift_lcu, thc_factorize, Factorization};
use crate::hamiltonian_io::{load_hamiltonian, FileFormat, SocChannel, SolventModel};
use crate::isc_proxy::{modified_hadamard, pick_spin_state, proxy_rate, sample_hadamard, FastForward};
use crate::manybody::{sector_hamiltonian, sector_one_body, Sector};
use crate::presets;
use crate::qsp_filter::{fit_degree, synthesize_heaviside, window_filters, Orientation};
use crate::resource_estimator::{
    evolution_proxy_estimate, threshold_projection_estimate, trotter_qpe_estimate, DegreeSource,
    ResourceEstimate,
};
use crate::trotter_engine::audit;
use crate::vibronic_engine::{build_vibronic_capped, vibronic_resources, extract_rate, propagate, VibronicModel, DENSE_CAP, DIM_CAP};
use crate::window_simulator::{build_sampling_plan, simulate_shots, Filters, SpectralWindow, WindowSystem};
use crate::{System, HC_HARTREE_NM};

/// Environment override for the dense diagonalization cap.
pub const ENV_DENSE_CAP: &str = "PHOTOREACT_DENSE_CAP";
/// Environment override for the vibronic grid dimension cap.
pub const ENV_GRID_CAP: &str = "PHOTOREACT_GRID_CAP";

#[derive(Parser, Debug)]
#[command(name = "photoreact", version, about = "Photosensitizer screening numerics and resource estimates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the result here (atomically) instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Thc,
    Cdf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Channel {
    Zero,
    Flip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimateKind {
    Absorption,
    Isc,
    Trotter,
    Vibronic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DegreeArg {
    Fit,
    Synthesized,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Factorize the two-electron tensor and report the LCU 1-norm.
    Factorize {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "cdf")]
        method: Method,
        /// THC: Frobenius target. CDF: discarded-weight threshold.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
        #[arg(long)]
        max_rank: Option<usize>,
        /// Threshold energy for the shifted 1-norm.
        #[arg(long, allow_hyphen_values = true)]
        e_th: Option<f64>,
        #[arg(long)]
        solvent: Option<PathBuf>,
    },
    /// Filter degrees over `lo:hi:count` values of λ′/Δ.
    FitDegree {
        #[arg(long, default_value = "50:2000:6")]
        range: String,
        /// Also synthesize certified filters at this precision.
        #[arg(long)]
        synthesize: bool,
        #[arg(long, default_value_t = 0.01)]
        eps_h: f64,
    },
    /// Exact and shot-sampled window absorption of a small system.
    SimulateWindow {
        input: PathBuf,
        /// Excitation window, `lo,hi` in Hartree or `lo,hi nm`.
        #[arg(long, default_value = "700,850nm")]
        window: String,
        /// Transition width in Hartree.
        #[arg(long, default_value_t = 0.002)]
        delta: f64,
        #[arg(long, default_value_t = 0.01)]
        eps_h: f64,
        #[arg(long, default_value_t = 0.1)]
        eps_samp: f64,
        #[arg(long, default_value_t = 0.01)]
        delta_samp: f64,
        #[arg(long)]
        seed: u64,
        /// Use the ideal window indicator instead of synthesized filters.
        #[arg(long)]
        exact_filters: bool,
        #[arg(long)]
        n_elec: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        ms2: Option<i64>,
        #[arg(long)]
        solvent: Option<PathBuf>,
    },
    /// Short-time spin-orbit transition proxy between two spin states.
    IscProxy {
        input: PathBuf,
        /// `S<k>` or `T<k>`; S0 is the ground singlet, T1 the lowest triplet.
        #[arg(long, default_value = "S1")]
        initial: String,
        #[arg(long = "final", default_value = "T1")]
        final_state: String,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        final_ms2: i32,
        #[arg(long, value_enum, default_value = "zero")]
        channel: Channel,
        #[arg(long, default_value_t = 1e-3)]
        t: f64,
        #[arg(long, default_value_t = crate::isc_proxy::S_HAD_DEFAULT)]
        s_had: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        n_elec: Option<usize>,
    },
    /// Trotter step budget and dense bias check.
    TrotterAudit {
        input: PathBuf,
        #[arg(long, default_value = "700,850nm")]
        window: String,
        #[arg(long, default_value_t = 0.1)]
        xi: f64,
        #[arg(long, default_value_t = 1e-8)]
        threshold: f64,
        #[arg(long)]
        n_elec: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        ms2: Option<i64>,
    },
    /// Grid propagation of a vibronic model and initial-slope rate.
    VibronicRun {
        model: PathBuf,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        steps: usize,
        /// Initially populated electronic state.
        #[arg(long, default_value_t = 0)]
        initial: usize,
        /// Initial wavepacket centres per mode, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        centers: Option<String>,
        /// `t0,t1` for the rate fit (default: first tenth of the trace).
        #[arg(long)]
        fit_window: Option<String>,
    },
    /// Logical cost of a vibronic simulation.
    VibronicResources {
        #[arg(long, default_value_t = 5)]
        n_el: u64,
        #[arg(long, default_value_t = 19)]
        modes: u64,
        #[arg(long, default_value_t = 128)]
        grid_k: u64,
        #[arg(long, default_value_t = 2)]
        degree: u32,
        #[arg(long, default_value_t = 370_000)]
        steps: u64,
    },
    /// Resource tables over bundled or user presets.
    Estimate {
        #[arg(value_enum)]
        kind: EstimateKind,
        /// Preset names or files (default: all bundled presets).
        #[arg(long)]
        preset: Vec<String>,
        #[arg(long, default_value_t = presets::DEFAULT_XI)]
        xi: f64,
        #[arg(long, value_enum, default_value = "fit")]
        degree_source: DegreeArg,
        #[arg(long, default_value_t = 1)]
        batch: u64,
    },
}

/// A command's result before formatting.
pub struct Payload {
    pub json: Value,
    pub csv: Option<String>,
    pub flagged: bool,
    pub default_format: Format,
}

impl Payload {
    fn json(value: Value, flagged: bool) -> Self {
        Payload { json: value, csv: None, flagged, default_format: Format::Json }
    }
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn to_value<S: Serialize>(s: &S) -> Value {
    serde_json::to_value(s).expect("serializable result")
}

/// `lo,hi` in Hartree, or `lo,hi nm` converted with `E = hc/λ`
/// (the larger wavelength becomes the lower edge).
pub fn parse_window(arg: &str) -> Result<(f64, f64), Failure> {
    let s = arg.trim().to_ascii_lowercase();
    let (body, nm) = match s.strip_suffix("nm") {
        Some(b) => (b.trim().to_string(), true),
        None => (s.strip_suffix("ha").unwrap_or(&s).trim().to_string(), false),
    };
    let parts: Vec<f64> = body
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("cannot parse window '{arg}'")))?;
    let [a, b] = parts[..] else {
        return Err(usage(format!("window '{arg}' needs two edges")));
    };
    let (lo, hi) = if nm {
        if !(a > 0.0 && b > 0.0) {
            return Err(usage("wavelengths must be positive"));
        }
        let (x, y) = (HC_HARTREE_NM / a, HC_HARTREE_NM / b);
        (x.min(y), x.max(y))
    } else {
        (a, b)
    };
    if !(lo < hi) {
        return Err(usage(format!("window '{arg}' is empty after conversion")));
    }
    Ok((lo, hi))
}

/// `lo:hi:count`, evenly spaced and inclusive.
pub fn parse_range(arg: &str) -> Result<Vec<f64>, Failure> {
    let p: Vec<&str> = arg.split(':').collect();
    let bad = || usage(format!("range '{arg}' must be lo:hi:count"));
    if p.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = p[0].parse().map_err(|_| bad())?;
    let hi: f64 = p[1].parse().map_err(|_| bad())?;
    let n: usize = p[2].parse().map_err(|_| bad())?;
    if n == 0 || !(lo > 0.0) || hi < lo {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn parse_list(arg: &str) -> Result<Vec<f64>, Failure> {
    arg.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| usage(format!("cannot parse number list '{arg}'"))))
        .collect()
}

fn env_cap(var: &str, default: usize) -> Result<usize, Failure> {
    match std::env::var(var) {
        Ok(v) => v.parse().map_err(|_| usage(format!("{var}={v} is not a count"))),
        Err(_) => Ok(default),
    }
}

fn load_system(input: &Path, solvent: Option<&PathBuf>) -> Result<System, Failure> {
    let mut sys = load_hamiltonian::<f64>(input, FileFormat::guess(input))?;
    if let Some(s) = solvent {
        sys.hamiltonian = SolventModel::<f64>::load(s)?.apply(&sys.hamiltonian)?;
    }
    Ok(sys)
}

fn sector_of(sys: &System, n_elec: Option<usize>, ms2: Option<i64>) -> Result<Sector, Failure> {
    let h = &sys.hamiltonian;
    let ne = n_elec.or(h.n_elec).ok_or_else(|| usage("electron count missing: give --n-elec or NELEC"))?;
    let ms2 = ms2.or(h.ms2).unwrap_or((ne % 2) as i64);
    let na = (ne as i64 + ms2) / 2;
    let nb = ne as i64 - na;
    if (ne as i64 + ms2) % 2 != 0 || na < 0 || nb < 0 || na as usize > h.n_orb || nb as usize > h.n_orb {
        return Err(usage(format!("no sector with {ne} electrons and MS2 = {ms2} in {} orbitals", h.n_orb)));
    }
    Ok(Sector::spin(h.n_orb, na as usize, nb as usize))
}

fn spin_label(s: &str) -> Result<(u32, usize), Failure> {
    let bad = || usage(format!("state label '{s}' must look like S1 or T1"));
    let (kind, idx) = s.split_at(1);
    let k: usize = idx.parse().map_err(|_| bad())?;
    match kind {
        "S" | "s" => Ok((0, k)),
        "T" | "t" if k >= 1 => Ok((1, k - 1)),
        _ => Err(bad()),
    }
}

fn flags_of(v: &[Flag]) -> bool {
    !v.is_empty()
}

fn cmd_factorize(
    input: &Path,
    method: Method,
    threshold: f64,
    max_rank: Option<usize>,
    e_th: Option<f64>,
    solvent: Option<&PathBuf>,
) -> Result<Payload, Failure> {
    let sys = load_system(input, solvent)?;
    let h = &sys.hamiltonian;
    let n = h.n_orb;
    let (fac, lambda, shift, flags) = match method {
        Method::Thc => {
            let thc = thc_factorize(h, threshold, max_rank.unwrap_or(n * (n + 1) / 2 + 2 * n))?;
            let lam = thc.one_norm(&h.t);
            let shift = thc.identity_shift(&h.t, h.e_core);
            let flags = thc.flags.clone();
            (Factorization::Thc(thc), lam, shift, flags)
        }
        Method::Cdf => {
            let cdf = cdf_factorize(h, threshold)?;
            let (lam, shift, flags) = (cdf.one_norm(), cdf.identity_shift(), cdf.flags.clone());
            (Factorization::Cdf(cdf), lam, shift, flags)
        }
    };
    let shifted = e_th.map(|e| shift_lcu(lambda, e)).transpose()?;
    Ok(Payload::json(
        json!({
            "n_orb": n,
            "lambda": lambda,
            "identity_shift": shift,
            "shifted": shifted,
            "factorization": fac,
        }),
        flags_of(&flags),
    ))
}

fn cmd_fit_degree(range: &str, synthesize: bool, eps_h: f64) -> Result<Payload, Failure> {
    let xs = parse_range(range)?;
    let mut rows = Vec::new();
    let mut csv = String::from(if synthesize { "lambda_over_delta,fit_degree,synthesized_degree\n" } else { "lambda_over_delta,fit_degree\n" });
    for &x in &xs {
        let d = fit_degree(x)?;
        let synth = if synthesize { Some(synthesize_heaviside(1.0 / x, eps_h, Orientation::RightStep)?.degree) } else { None };
        match synth {
            Some(s) => csv.push_str(&format!("{x},{d},{s}\n")),
            None => csv.push_str(&format!("{x},{d}\n")),
        }
        rows.push(json!({"lambda_over_delta": x, "fit_degree": d, "synthesized_degree": synth}));
    }
    Ok(Payload { json: json!({ "eps_h": eps_h, "rows": rows }), csv: Some(csv), flagged: false, default_format: Format::Csv })
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate_window(
    input: &Path,
    window: &str,
    delta: f64,
    eps_h: f64,
    eps_samp: f64,
    delta_samp: f64,
    seed: u64,
    exact_filters: bool,
    n_elec: Option<usize>,
    ms2: Option<i64>,
    solvent: Option<&PathBuf>,
) -> Result<Payload, Failure> {
    let (lo, hi) = parse_window(window)?;
    let sys = load_system(input, solvent)?;
    let dip = sys.dipole.as_ref().ok_or_else(|| Error::Validation("input carries no dipole operator".into()))?;
    let sector = sector_of(&sys, n_elec, ms2)?;
    let cap = env_cap(ENV_DENSE_CAP, crate::window_simulator::DENSE_CAP)?;
    if sector.dim() > cap {
        return Err(Error::Capacity { dim: sector.dim(), cap }.into());
    }
    let h = sector_hamiltonian(&sys.hamiltonian, &sector);
    let dips: Vec<_> = dip.d.iter().map(|d| sector_one_body(d, &sector)).collect();
    let ws = WindowSystem::with_cap(&h, &dips, cap)?;
    let e0 = ws.energies[0];
    let e_top = *ws.energies.last().unwrap();
    let win = SpectralWindow::new(e0 + lo, e0 + hi, e0.min(e0 + lo), e_top.max(e0 + hi), delta)?;
    let exact = ws.absorption(&win);
    let plan = build_sampling_plan(eps_samp, delta_samp)?;
    let (filters, degrees) = if exact_filters {
        (None, Value::Null)
    } else {
        let (l, r) = window_filters(&win, eps_h)?;
        let d = json!({"left": l.degree, "right": r.degree});
        (Some((l, r)), d)
    };
    let f = match &filters {
        Some((l, r)) => Filters::Polynomial { left: l, right: r },
        None => Filters::Exact,
    };
    let est = simulate_shots(&ws, &win, &f, &plan, seed)?;
    let flagged = flags_of(&est.flags) || flags_of(&exact.flags);
    Ok(Payload::json(
        json!({
            "window_ha": {"e_lo": win.e_lo, "e_hi": win.e_hi, "e_min": win.e_min, "e_max": win.e_max, "delta": win.delta},
            "ground_energy": e0,
            "exact": {"a_window": exact.a_window, "p_window": exact.p_window, "norm_d": exact.norm_d, "flags": exact.flags},
            "plan": plan,
            "filter_degrees": degrees,
            "estimate": est,
            "seed": seed,
        }),
        flagged,
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_isc_proxy(
    input: &Path,
    initial: &str,
    final_state: &str,
    final_ms2: i32,
    channel: Channel,
    t: f64,
    s_had: u64,
    seed: u64,
    n_elec: Option<usize>,
) -> Result<Payload, Failure> {
    let sys = load_system(input, None)?;
    let soc = sys.soc.as_ref().ok_or_else(|| Error::Validation("input carries no SOC operator".into()))?;
    let h = &sys.hamiltonian;
    let ne = n_elec.or(h.n_elec).ok_or_else(|| usage("electron count missing: give --n-elec or NELEC"))?;
    let (si, ki) = spin_label(initial)?;
    let (sf, kf) = spin_label(final_state)?;
    let i_state = pick_spin_state(h, ne, si, 0, ki)?;
    let f_state = pick_spin_state(h, ne, sf, final_ms2, kf)?;
    let ch = match channel {
        Channel::Zero => SocChannel::Zero,
        Channel::Flip => SocChannel::Flip,
    };
    let ff = FastForward::new(&soc.channel_generator(ch))?;
    let res = proxy_rate(&ff, &i_state.state, &f_state.state, t)?;
    let one = Complex::new(1.0, 0.0);
    let readout = modified_hadamard(&ff, &i_state.state, &f_state.state, t, one, one)?;
    let (x, y) = sample_hadamard(&readout, s_had, seed)?;
    let sampled = crate::isc_proxy::HadamardReadout { x_exp: x, y_exp: y, ..readout.clone() }.recombine();
    Ok(Payload::json(
        json!({
            "initial": {"label": initial, "energy": i_state.energy, "s_squared": i_state.s_squared},
            "final": {"label": final_state, "energy": f_state.energy, "s_squared": f_state.s_squared, "ms2": final_ms2},
            "channel": ch,
            "proxy": res,
            "hadamard": {"s_had": s_had, "seed": seed, "exact": readout, "sampled_x": x, "sampled_y": y,
                         "sampled_proxy_rate": sampled.norm_sqr()},
        }),
        false,
    ))
}

fn cmd_trotter_audit(
    input: &Path,
    window: &str,
    xi: f64,
    threshold: f64,
    n_elec: Option<usize>,
    ms2: Option<i64>,
) -> Result<Payload, Failure> {
    let (lo, hi) = parse_window(window)?;
    let sys = load_system(input, None)?;
    let sector = sector_of(&sys, n_elec, ms2)?;
    let cap = env_cap(ENV_DENSE_CAP, crate::window_simulator::DENSE_CAP)?;
    if sector.dim() > cap {
        return Err(Error::Capacity { dim: sector.dim(), cap }.into());
    }
    let e0 = crate::linalg::eigh(&sector_hamiltonian(&sys.hamiltonian, &sector)).0[0];
    let cdf = cdf_factorize(&sys.hamiltonian, threshold)?;
    // the LCU bounds the whole Fock-space spectrum
    let (c0, lam) = (cdf.identity_shift(), cdf.one_norm());
    let (e_lo, e_hi) = (e0 + lo, e0 + hi);
    let win = SpectralWindow::new(e_lo, e_hi, (c0 - lam).min(e_lo), (c0 + lam).max(e_hi), (hi - lo) / 4.0)?;
    let rep = audit(&cdf, &win, xi)?;
    let mut flagged = flags_of(&rep.flags);
    if let (Some(b), Some(m)) = (rep.bias_bound, rep.measured_max_bias) {
        flagged |= m > b;
    }
    Ok(Payload::json(json!({"ground_energy": e0, "n_frag": cdf.n_frag, "audit": rep}), flagged))
}

fn cmd_vibronic_run(
    model: &Path,
    dt: f64,
    steps: usize,
    initial: usize,
    centers: Option<&str>,
    fit_window: Option<&str>,
) -> Result<Payload, Failure> {
    let text = std::fs::read_to_string(model).map_err(|e| Error::Io { path: model.display().to_string(), source: e })?;
    let m = VibronicModel::from_json(&text)?;
    if initial >= m.n_el() {
        return Err(usage(format!("initial state {initial} outside 0..{}", m.n_el())));
    }
    let grid = build_vibronic_capped(&m, env_cap(ENV_GRID_CAP, DIM_CAP)?)?;
    let mut amps = vec![Complex::new(0.0, 0.0); m.n_el()];
    amps[initial] = Complex::new(1.0, 0.0);
    let centers = centers.map(parse_list).transpose()?;
    let psi = grid.product_state(&amps, centers.as_deref())?;
    let (trace, _) = propagate(&grid, &psi, dt, steps)?;
    let t_end = *trace.times.last().unwrap();
    let (t0, t1) = match fit_window {
        Some(s) => {
            let v = parse_list(s)?;
            let [a, b] = v[..] else {
                return Err(usage("fit window needs t0,t1"));
            };
            (a, b)
        }
        None => (0.0, (t_end / 10.0).max(trace.times.get(1).copied().unwrap_or(t_end))),
    };
    let rate = extract_rate(&trace, (t0, t1))?;
    let ground = if grid.dim() <= DENSE_CAP { Some(grid.ground_energy()?) } else { None };
    let mut csv = String::from("time,p_t\n");
    for (t, p) in trace.times.iter().zip(&trace.p_t) {
        csv.push_str(&format!("{t},{p}\n"));
    }
    Ok(Payload {
        json: json!({"ground_energy": ground, "dt": dt, "steps": steps, "rate": rate, "trace": trace}),
        csv: Some(csv),
        flagged: flags_of(&rate.flags),
        default_format: Format::Json,
    })
}

fn estimate_table(rows: &[(String, u64, ResourceEstimate)]) -> Payload {
    let mut csv = format!("{}\n", ResourceEstimate::csv_header());
    for (label, n, e) in rows {
        csv.push_str(&e.csv_row(label, *n));
        csv.push('\n');
    }
    let json = Value::Array(rows.iter().map(|(l, n, e)| json!({"label": l, "n_orb": n, "estimate": e})).collect());
    let flagged = rows.iter().any(|(_, _, e)| !e.flags.is_empty());
    Payload { json, csv: Some(csv), flagged, default_format: Format::Json }
}

fn cmd_estimate(kind: EstimateKind, names: &[String], xi: f64, source: DegreeArg, batch: u64) -> Result<Payload, Failure> {
    if kind == EstimateKind::Vibronic {
        let e = vibronic_resources(5, 19, 128, 2, 370_000)?;
        return Ok(estimate_table(&[("vibronic/N5-M19".into(), 5, e)]));
    }
    let list: Vec<presets::Preset> = if names.is_empty() {
        presets::all()
    } else {
        names.iter().map(|n| presets::load(n)).collect::<Result<_, _>>()?
    };
    let source = match source {
        DegreeArg::Fit => DegreeSource::Fit,
        DegreeArg::Synthesized => DegreeSource::Synthesized,
    };
    let mut rows = Vec::new();
    for p in &list {
        for inst in p.instances() {
            let mut tp = inst.threshold_inputs();
            tp.batch_b = batch;
            tp.degree_source = source;
            let est = match kind {
                EstimateKind::Absorption => threshold_projection_estimate(&tp)?,
                EstimateKind::Isc => {
                    let mut ev = inst.evolution_inputs();
                    ev.base = tp;
                    evolution_proxy_estimate(&ev)?
                }
                EstimateKind::Trotter => trotter_qpe_estimate(&inst.trotter_inputs(xi)?)?,
                EstimateKind::Vibronic => unreachable!(),
            };
            rows.push((inst.label.clone(), inst.n_orb, est));
        }
    }
    Ok(estimate_table(&rows))
}

pub fn execute(cli: &Cli) -> Result<Payload, Failure> {
    match &cli.command {
        Command::Factorize { input, method, threshold, max_rank, e_th, solvent } => {
            cmd_factorize(input, *method, *threshold, *max_rank, *e_th, solvent.as_ref())
        }
        Command::FitDegree { range, synthesize, eps_h } => cmd_fit_degree(range, *synthesize, *eps_h),
        Command::SimulateWindow {
            input,
            window,
            delta,
            eps_h,
            eps_samp,
            delta_samp,
            seed,
            exact_filters,
            n_elec,
            ms2,
            solvent,
        } => cmd_simulate_window(
            input,
            window,
            *delta,
            *eps_h,
            *eps_samp,
            *delta_samp,
            *seed,
            *exact_filters,
            *n_elec,
            *ms2,
            solvent.as_ref(),
        ),
        Command::IscProxy { input, initial, final_state, final_ms2, channel, t, s_had, seed, n_elec } => {
            cmd_isc_proxy(input, initial, final_state, *final_ms2, *channel, *t, *s_had, *seed, *n_elec)
        }
        Command::TrotterAudit { input, window, xi, threshold, n_elec, ms2 } => {
            cmd_trotter_audit(input, window, *xi, *threshold, *n_elec, *ms2)
        }
        Command::VibronicRun { model, dt, steps, initial, centers, fit_window } => {
            cmd_vibronic_run(model, *dt, *steps, *initial, centers.as_deref(), fit_window.as_deref())
        }
        Command::VibronicResources { n_el, modes, grid_k, degree, steps } => Ok(Payload::json(
            to_value(&vibronic_resources(*n_el, *modes, *grid_k, *degree, *steps)?),
            false,
        )),
        Command::Estimate { kind, preset, xi, degree_source, batch } => {
            cmd_estimate(*kind, preset, *xi, *degree_source, *batch)
        }
    }
}

fn render(p: &Payload, format: Option<Format>) -> String {
    match (format.unwrap_or(p.default_format), &p.csv) {
        (Format::Csv, Some(csv)) => csv.clone(),
        _ => serde_json::to_string_pretty(&p.json).expect("json") + "\n",
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Format(_) => 3,
        _ => 1,
    }
}

fn report_error(kind: &str, message: &str, code: i32) {
    eprintln!("{}", json!({"error": {"kind": kind, "message": message, "exit_code": code}}));
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let payload = match execute(&cli) {
        Ok(p) => p,
        Err(Failure::Usage(msg)) => {
            report_error("usage", &msg, 2);
            return 2;
        }
        Err(Failure::Lib(e)) => {
            let code = exit_code(&e);
            report_error(e.kind(), &e.to_string(), code);
            return code;
        }
    };
    let text = render(&payload, cli.format);
    match &cli.out {
        Some(path) => {
            if let Err(e) = crate::atomic_write(path, text.as_bytes()) {
                report_error(e.kind(), &e.to_string(), 3);
                return 3;
            }
        }
        None => print!("{text}"),
    }
    if payload.flagged {
        1
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_conversion() {
        let (lo, hi) = parse_window("700,850nm").unwrap();
        assert!((lo - 45.5633525316 / 850.0).abs() < 1e-12 && (hi - 45.5633525316 / 700.0).abs() < 1e-12);
        assert!((lo - 0.05360).abs() < 1e-5 && (hi - 0.06509).abs() < 1e-5);
        assert_eq!(parse_window("0.05,0.06").unwrap(), (0.05, 0.06));
        assert!(parse_window("0.06,0.05").is_err());
        assert!(parse_window("700nm").is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("50:2000:6").unwrap(), vec![50.0, 440.0, 830.0, 1220.0, 1610.0, 2000.0]);
        assert!(parse_range("50:2000").is_err());
        assert!(parse_range("0:10:3").is_err());
    }

    #[test]
    fn fit_degree_csv_rows() {
        let p = cmd_fit_degree("50:2000:6", false, 0.01).unwrap();
        let csv = p.csv.unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[1], format!("50,{}", fit_degree(50.0).unwrap()));
    }

    #[test]
    fn labels() {
        assert_eq!(spin_label("S1").unwrap(), (0, 1));
        assert_eq!(spin_label("T1").unwrap(), (1, 0));
        assert!(spin_label("T0").is_err());
        assert!(spin_label("Q2").is_err());
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["photoreact", "fit-degree", "--bogus"]), 2);
        assert_eq!(run(["photoreact", "fit-degree", "--range", "1:2"]), 2);
    }
}
