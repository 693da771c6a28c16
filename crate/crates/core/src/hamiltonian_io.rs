//! Active-space Hamiltonians, dipole and spin-orbit operators: file I/O,
//! validation and static solvent corrections.
//!
//! The text grammar is documented in `docs/integral-format.md`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{c, cx, czero, f, Cx, Real};

/// Tolerance for symmetry conflicts between explicit file entries.
pub const INPUT_TOL: f64 = 1e-10;

/// Electronic Hamiltonian in chemist notation:
/// `H = e_core + Σ t_pq E_pq + ½ Σ v_pqrs (E_pq E_rs − δ_qr E_ps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSpaceHamiltonian<T: Real> {
    pub n_orb: usize,
    pub t: DMatrix<T>,
    /// Dense `N⁴` tensor, index `((p·N + q)·N + r)·N + s`.
    pub v: Vec<T>,
    pub e_core: T,
    /// Electron count from the header, when given.
    pub n_elec: Option<usize>,
    /// Twice the spin projection from the header, when given.
    pub ms2: Option<i64>,
}

impl<T: Real> ActiveSpaceHamiltonian<T> {
    pub fn zeros(n_orb: usize) -> Self {
        ActiveSpaceHamiltonian {
            n_orb,
            t: DMatrix::zeros(n_orb, n_orb),
            v: vec![T::zero(); n_orb.pow(4)],
            e_core: T::zero(),
            n_elec: None,
            ms2: None,
        }
    }

    #[inline]
    pub fn idx(&self, p: usize, q: usize, r: usize, s: usize) -> usize {
        let n = self.n_orb;
        ((p * n + q) * n + r) * n + s
    }

    #[inline]
    pub fn v(&self, p: usize, q: usize, r: usize, s: usize) -> T {
        self.v[self.idx(p, q, r, s)]
    }

    /// Set `v_pqrs` and all of its 8-fold partners.
    pub fn set_v_sym(&mut self, p: usize, q: usize, r: usize, s: usize, val: T) {
        for (a, b, cc, d) in partners(p, q, r, s) {
            let i = self.idx(a, b, cc, d);
            self.v[i] = val;
        }
    }

    /// Largest violation of the symmetry invariants.
    pub fn symmetry_defect(&self) -> T {
        let n = self.n_orb;
        let mut worst = T::zero();
        for p in 0..n {
            for q in 0..n {
                worst = worst.max((self.t[(p, q)] - self.t[(q, p)]).abs());
                for r in 0..n {
                    for s in 0..n {
                        let x = self.v(p, q, r, s);
                        for (a, b, cc, d) in partners(p, q, r, s) {
                            worst = worst.max((x - self.v(a, b, cc, d)).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Convert to another scalar type.
    pub fn cast<U: Real>(&self) -> ActiveSpaceHamiltonian<U> {
        ActiveSpaceHamiltonian {
            n_orb: self.n_orb,
            t: self.t.map(|x| c::<U>(f(x))),
            v: self.v.iter().map(|&x| c::<U>(f(x))).collect(),
            e_core: c(f(self.e_core)),
            n_elec: self.n_elec,
            ms2: self.ms2,
        }
    }

    /// `v` reshaped as the `N² × N²` matrix `V[(pq),(rs)]`.
    pub fn v_matrix(&self) -> DMatrix<T> {
        let n2 = self.n_orb * self.n_orb;
        DMatrix::from_row_slice(n2, n2, &self.v)
    }
}

/// The eight index permutations preserving a real chemist-notation integral.
pub fn partners(p: usize, q: usize, r: usize, s: usize) -> [(usize, usize, usize, usize); 8] {
    [
        (p, q, r, s),
        (q, p, r, s),
        (p, q, s, r),
        (q, p, s, r),
        (r, s, p, q),
        (s, r, p, q),
        (r, s, q, p),
        (s, r, q, p),
    ]
}

/// Cartesian dipole components `d[0..3]`, each real symmetric `N×N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DipoleOperator<T: Real> {
    pub d: [DMatrix<T>; 3],
}

/// Spin-tensor component label `(S, M)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpinTensor {
    #[serde(rename = "(0,0)")]
    S00,
    #[serde(rename = "(1,0)")]
    S10,
    #[serde(rename = "(1,+1)")]
    S1P1,
    #[serde(rename = "(1,-1)")]
    S1M1,
}

impl SpinTensor {
    pub const ALL: [SpinTensor; 4] = [SpinTensor::S00, SpinTensor::S10, SpinTensor::S1P1, SpinTensor::S1M1];

    pub fn label(self) -> &'static str {
        match self {
            SpinTensor::S00 => "(0,0)",
            SpinTensor::S10 => "(1,0)",
            SpinTensor::S1P1 => "(1,+1)",
            SpinTensor::S1M1 => "(1,-1)",
        }
    }
}

/// Spin-orbit one-body operator over `2N` spin orbitals (alpha block first).
#[derive(Clone, Debug, PartialEq)]
pub struct SOCOperator<T: Real> {
    pub h_soc: DMatrix<Cx<T>>,
    pub components: BTreeMap<SpinTensor, DMatrix<Cx<T>>>,
}

impl<T: Real> SOCOperator<T> {
    /// Split by spin blocks: diagonal blocks give the M=0 parts (sum → (0,0),
    /// difference → (1,0)); the alpha-beta block raises M (→ (1,+1)) and the
    /// beta-alpha block lowers it (→ (1,-1)).
    pub fn new(h_soc: DMatrix<Cx<T>>) -> Result<Self> {
        let n2 = h_soc.nrows();
        if n2 % 2 != 0 || h_soc.ncols() != n2 {
            return Err(Error::Validation(format!("SOC matrix must be 2N×2N, got {}×{}", n2, h_soc.ncols())));
        }
        let defect = crate::linalg::hermiticity_defect(&h_soc);
        if f(defect) > INPUT_TOL {
            return Err(Error::Validation(format!("SOC matrix not Hermitian (defect {:e})", f(defect))));
        }
        let n = n2 / 2;
        let half = cx(c::<T>(0.5), T::zero());
        let mut c00 = DMatrix::from_element(n2, n2, czero());
        let mut c10 = c00.clone();
        let mut cp = c00.clone();
        let mut cm = c00.clone();
        for p in 0..n {
            for q in 0..n {
                let aa = h_soc[(p, q)];
                let bb = h_soc[(n + p, n + q)];
                let sum = (aa + bb) * half;
                let diff = (aa - bb) * half;
                c00[(p, q)] = sum;
                c00[(n + p, n + q)] = sum;
                c10[(p, q)] = diff;
                c10[(n + p, n + q)] = -diff;
                cp[(p, n + q)] = h_soc[(p, n + q)];
                cm[(n + p, q)] = h_soc[(n + p, q)];
            }
        }
        let mut components = BTreeMap::new();
        components.insert(SpinTensor::S00, c00);
        components.insert(SpinTensor::S10, c10);
        components.insert(SpinTensor::S1P1, cp);
        components.insert(SpinTensor::S1M1, cm);
        Ok(SOCOperator { h_soc, components })
    }

    pub fn n_orb(&self) -> usize {
        self.h_soc.nrows() / 2
    }

    pub fn component(&self, k: SpinTensor) -> &DMatrix<Cx<T>> {
        &self.components[&k]
    }

    /// Hermitian generator for an evolution channel. The M=±1 parts are not
    /// Hermitian on their own; the spin-flip channel evolves under their sum.
    pub fn channel_generator(&self, ch: SocChannel) -> DMatrix<Cx<T>> {
        match ch {
            SocChannel::Zero => self.component(SpinTensor::S10).clone(),
            SocChannel::Flip => self.component(SpinTensor::S1P1) + self.component(SpinTensor::S1M1),
        }
    }
}

/// Evolution channel of the ISC proxy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SocChannel {
    /// `(1,0)`
    Zero,
    /// `(1,+1) + (1,-1)`
    Flip,
}

/// Solvent correction model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolventModel<T: Real> {
    None,
    PcmStatic {
        epsilon: T,
        #[serde(with = "crate::serde_mat")]
        reaction_field: DMatrix<T>,
    },
    Bosonic { modes: Vec<BosonMode<T>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BosonMode<T: Real> {
    pub omega: T,
    #[serde(with = "crate::serde_mat")]
    pub g: DMatrix<T>,
}

impl<T: Real + serde::de::DeserializeOwned> SolventModel<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("solvent model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

impl<T: Real> SolventModel<T> {
    /// Apply the correction selected by `kind`.
    pub fn apply(&self, h: &ActiveSpaceHamiltonian<T>) -> Result<ActiveSpaceHamiltonian<T>> {
        match self {
            SolventModel::None => Ok(h.clone()),
            SolventModel::PcmStatic { .. } => apply_pcm(h, self),
            SolventModel::Bosonic { .. } => integrate_out_bosons(h, self),
        }
    }
}

/// Static dielectric screening: `t' = t + R`, `v' = v/ε`.
pub fn apply_pcm<T: Real>(h: &ActiveSpaceHamiltonian<T>, s: &SolventModel<T>) -> Result<ActiveSpaceHamiltonian<T>> {
    let SolventModel::PcmStatic { epsilon, reaction_field } = s else {
        return Err(Error::domain("apply_pcm needs a pcm_static solvent model"));
    };
    if !(*epsilon >= T::one()) {
        return Err(Error::domain(format!("dielectric constant {} < 1", f(*epsilon))));
    }
    if reaction_field.shape() != (h.n_orb, h.n_orb) {
        return Err(Error::Validation("reaction field shape does not match n_orb".into()));
    }
    check_symmetric(reaction_field, "reaction field")?;
    let mut out = h.clone();
    out.t += reaction_field;
    let eps = *epsilon;
    out.v.iter_mut().for_each(|x| *x /= eps);
    Ok(out)
}

/// Second-order elimination of linearly coupled bosons:
/// `t'_pq = t_pq − Σ_k (g_k^{pq})² / ω_k`.
pub fn integrate_out_bosons<T: Real>(
    h: &ActiveSpaceHamiltonian<T>,
    s: &SolventModel<T>,
) -> Result<ActiveSpaceHamiltonian<T>> {
    let SolventModel::Bosonic { modes } = s else {
        return Err(Error::domain("integrate_out_bosons needs a bosonic solvent model"));
    };
    let mut out = h.clone();
    for (k, m) in modes.iter().enumerate() {
        if !(m.omega > T::zero()) {
            return Err(Error::domain(format!("mode {k} has non-positive frequency {}", f(m.omega))));
        }
        if m.g.shape() != (h.n_orb, h.n_orb) {
            return Err(Error::Validation(format!("mode {k} coupling shape does not match n_orb")));
        }
        check_symmetric(&m.g, "boson coupling")?;
        for p in 0..h.n_orb {
            for q in 0..h.n_orb {
                let g = m.g[(p, q)];
                out.t[(p, q)] -= g * g / m.omega;
            }
        }
    }
    Ok(out)
}

fn check_symmetric<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..i {
            if f((m[(i, j)] - m[(j, i)]).abs()) > INPUT_TOL {
                return Err(Error::Validation(format!("{what} not symmetric at ({}, {})", i + 1, j + 1)));
            }
        }
    }
    Ok(())
}

/// Everything a file can carry.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSystem<T: Real> {
    pub hamiltonian: ActiveSpaceHamiltonian<T>,
    pub dipole: Option<DipoleOperator<T>>,
    pub soc: Option<SOCOperator<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    /// FCIDUMP-style text with tagged extension sections.
    IntegralText,
    /// JSON document.
    StructuredConfig,
}

impl FileFormat {
    pub fn guess(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => FileFormat::StructuredConfig,
            _ => FileFormat::IntegralText,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

pub fn load_hamiltonian<T: Real>(path: &Path, format: FileFormat) -> Result<LoadedSystem<T>> {
    let text = read(path)?;
    match format {
        FileFormat::IntegralText => parse_integral_text(&text),
        FileFormat::StructuredConfig => parse_structured(&text),
    }
}

/// Symmetric-fill accumulator: explicit entries are kept with their line
/// numbers, conflicts between explicit partners are rejected, then missing
/// partners are filled.
struct Filler {
    explicit: HashMap<Vec<usize>, (f64, usize)>,
}

impl Filler {
    fn new() -> Self {
        Filler { explicit: HashMap::new() }
    }

    fn put(&mut self, key: Vec<usize>, val: f64, line: usize) -> Result<()> {
        if let Some((old, l0)) = self.explicit.get(&key) {
            if (old - val).abs() > INPUT_TOL {
                return Err(Error::Validation(format!(
                    "entry {:?} given twice with different values (lines {l0} and {line})",
                    one_based(&key)
                )));
            }
        }
        self.explicit.insert(key, (val, line));
        Ok(())
    }

    /// `partner(key) -> (partner_key, sign)`; antisymmetric partners use sign −1.
    fn resolve(
        &self,
        what: &str,
        partner_fn: impl Fn(&[usize]) -> Vec<(Vec<usize>, f64)>,
        mut sink: impl FnMut(&[usize], f64),
    ) -> Result<()> {
        let mut keys: Vec<&Vec<usize>> = self.explicit.keys().collect();
        keys.sort();
        for key in keys {
            let (val, line) = self.explicit[key];
            for (pk, sign) in partner_fn(key) {
                if let Some((pv, pline)) = self.explicit.get(&pk) {
                    if (pv - sign * val).abs() > INPUT_TOL {
                        return Err(Error::Validation(format!(
                            "{what} symmetry violated: {:?} = {val} (line {line}) vs {:?} = {pv} (line {pline})",
                            one_based(key),
                            one_based(&pk)
                        )));
                    }
                }
            }
        }
        // explicit values first, then fill the gaps from them
        for (key, (val, _)) in &self.explicit {
            sink(key, *val);
        }
        for (key, (val, _)) in &self.explicit {
            for (pk, sign) in partner_fn(key) {
                if !self.explicit.contains_key(&pk) {
                    sink(&pk, sign * val);
                }
            }
        }
        Ok(())
    }
}

fn one_based(k: &[usize]) -> Vec<usize> {
    k.iter().map(|x| x + 1).collect()
}

fn pair_sym(k: &[usize]) -> Vec<(Vec<usize>, f64)> {
    vec![(vec![k[1], k[0]], 1.0)]
}

fn pair_antisym(k: &[usize]) -> Vec<(Vec<usize>, f64)> {
    vec![(vec![k[1], k[0]], -1.0)]
}

fn quad_sym(k: &[usize]) -> Vec<(Vec<usize>, f64)> {
    partners(k[0], k[1], k[2], k[3])
        .iter()
        .map(|&(a, b, cc, d)| (vec![a, b, cc, d], 1.0))
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Section {
    Integrals,
    Dipole(usize),
    SocRe,
    SocIm,
}

fn section_tag(tok: &str) -> Option<Section> {
    match tok.to_ascii_uppercase().as_str() {
        "DIPOLE_X" => Some(Section::Dipole(0)),
        "DIPOLE_Y" => Some(Section::Dipole(1)),
        "DIPOLE_Z" => Some(Section::Dipole(2)),
        "SOC_RE" => Some(Section::SocRe),
        "SOC_IM" => Some(Section::SocIm),
        _ => None,
    }
}

struct Header {
    norb: usize,
    nelec: Option<usize>,
    ms2: Option<i64>,
}

fn parse_header(text: &str) -> Result<(Header, usize)> {
    let mut buf = String::new();
    let mut started = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if !started {
            if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
                continue;
            }
            if !line.to_ascii_uppercase().starts_with("&FCI") {
                return Err(Error::Format(format!("missing &FCI header (line {})", i + 1)));
            }
            started = true;
            buf.push_str(&line[4..]);
        } else {
            buf.push(' ');
            buf.push_str(line);
        }
        let up = buf.to_ascii_uppercase();
        if let Some(end) = up.find("&END").or_else(|| up.rfind('/')) {
            let body = &buf[..end];
            return Ok((header_fields(body)?, i + 1));
        }
    }
    Err(Error::Format(if started { "unterminated &FCI header (no &END)".into() } else { "missing &FCI header".into() }))
}

fn header_fields(body: &str) -> Result<Header> {
    // KEY=v1,v2,... ; values may continue over commas until the next KEY=
    let mut fields: HashMap<String, Vec<String>> = HashMap::new();
    let mut current: Option<String> = None;
    for tok in body.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|t| !t.is_empty()) {
        if let Some((k, v)) = tok.split_once('=') {
            let k = k.trim().to_ascii_uppercase();
            let e = fields.entry(k.clone()).or_default();
            if !v.is_empty() {
                e.push(v.to_string());
            }
            current = Some(k);
        } else if let Some(k) = &current {
            fields.get_mut(k).unwrap().push(tok.to_string());
        }
    }
    let get_int = |k: &str| -> Result<Option<i64>> {
        match fields.get(k).and_then(|v| v.first()) {
            None => Ok(None),
            Some(s) => s
                .parse::<i64>()
                .map(Some)
                .map_err(|_| Error::Format(format!("header field {k} is not an integer: {s}"))),
        }
    };
    let norb = get_int("NORB")?.ok_or_else(|| Error::Format("header lacks NORB".into()))?;
    if norb < 1 {
        return Err(Error::Format("NORB must be at least 1".into()));
    }
    let nelec = get_int("NELEC")?;
    if let Some(ne) = nelec {
        if ne < 0 || ne > 2 * norb {
            return Err(Error::Format(format!("NELEC={ne} incompatible with NORB={norb}")));
        }
    }
    Ok(Header { norb: norb as usize, nelec: nelec.map(|x| x as usize), ms2: get_int("MS2")? })
}

/// Parse the FCIDUMP-style text format.
pub fn parse_integral_text<T: Real>(text: &str) -> Result<LoadedSystem<T>> {
    let (hdr, body_start) = parse_header(text)?;
    let n = hdr.norb;
    let mut e_core: Option<(f64, usize)> = None;
    let mut t = Filler::new();
    let mut v = Filler::new();
    let mut dip = [Filler::new(), Filler::new(), Filler::new()];
    let mut dip_seen = [false; 3];
    let mut soc_re = Filler::new();
    let mut soc_im = Filler::new();
    let mut soc_seen = false;
    let mut section = Section::Integrals;

    for (i, raw) in text.lines().enumerate().skip(body_start) {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() == 1 {
            if let Some(s) = section_tag(toks[0]) {
                section = s;
                match s {
                    Section::Dipole(k) => dip_seen[k] = true,
                    Section::SocRe | Section::SocIm => soc_seen = true,
                    Section::Integrals => {}
                }
                continue;
            }
        }
        let bad = |msg: String| Error::Parse { line: lineno, msg };
        let val: f64 = parse_float(toks[0]).ok_or_else(|| bad(format!("cannot read value '{}'", toks[0])))?;
        if !val.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        let idx: Vec<usize> = toks[1..]
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| bad(format!("cannot read index '{s}'"))))
            .collect::<Result<_>>()?;
        match section {
            Section::Integrals => {
                if idx.len() != 4 {
                    return Err(bad(format!("expected 'value i j k l', got {} indices", idx.len())));
                }
                check_range(&idx, n, lineno)?;
                match (idx[0], idx[1], idx[2], idx[3]) {
                    (0, 0, 0, 0) => {
                        if let Some((old, l0)) = e_core {
                            if (old - val).abs() > INPUT_TOL {
                                return Err(Error::Validation(format!(
                                    "core energy given twice (lines {l0} and {lineno})"
                                )));
                            }
                        }
                        e_core = Some((val, lineno));
                    }
                    (a, b, 0, 0) if a > 0 && b > 0 => t.put(vec![a - 1, b - 1], val, lineno)?,
                    (a, b, cc, d) if a > 0 && b > 0 && cc > 0 && d > 0 => {
                        v.put(vec![a - 1, b - 1, cc - 1, d - 1], val, lineno)?
                    }
                    _ => return Err(bad("index pattern is neither core, one-body nor two-body".into())),
                }
            }
            Section::Dipole(k) => {
                if idx.len() != 2 {
                    return Err(bad("expected 'value i j' in dipole section".into()));
                }
                check_range_pos(&idx, n, lineno)?;
                dip[k].put(vec![idx[0] - 1, idx[1] - 1], val, lineno)?;
            }
            Section::SocRe | Section::SocIm => {
                if idx.len() != 2 {
                    return Err(bad("expected 'value i j' in SOC section".into()));
                }
                check_range_pos(&idx, 2 * n, lineno)?;
                let target = if section == Section::SocRe { &mut soc_re } else { &mut soc_im };
                target.put(vec![idx[0] - 1, idx[1] - 1], val, lineno)?;
            }
        }
    }

    let mut h = ActiveSpaceHamiltonian::<T>::zeros(n);
    h.n_elec = hdr.nelec;
    h.ms2 = hdr.ms2;
    h.e_core = c(e_core.map_or(0.0, |x| x.0));
    t.resolve("one-electron", pair_sym, |k, x| h.t[(k[0], k[1])] = c(x))?;
    {
        let vv = &mut h.v;
        v.resolve("two-electron", quad_sym, |k, x| vv[((k[0] * n + k[1]) * n + k[2]) * n + k[3]] = c(x))?;
    }

    let dipole = if dip_seen.iter().any(|&s| s) {
        let mut d: [DMatrix<T>; 3] = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for k in 0..3 {
            let m = &mut d[k];
            dip[k].resolve("dipole", pair_sym, |ix, x| m[(ix[0], ix[1])] = c(x))?;
        }
        Some(DipoleOperator { d })
    } else {
        None
    };

    let soc = if soc_seen {
        let mut re = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut im = DMatrix::<f64>::zeros(2 * n, 2 * n);
        soc_re.resolve("SOC real part", pair_sym, |ix, x| re[(ix[0], ix[1])] = x)?;
        soc_im.resolve("SOC imaginary part", pair_antisym, |ix, x| im[(ix[0], ix[1])] = x)?;
        for i in 0..2 * n {
            if im[(i, i)].abs() > INPUT_TOL {
                return Err(Error::Validation(format!("SOC diagonal ({}, {}) has imaginary part", i + 1, i + 1)));
            }
        }
        let m = DMatrix::from_fn(2 * n, 2 * n, |i, j| cx(c::<T>(re[(i, j)]), c::<T>(im[(i, j)])));
        Some(SOCOperator::new(m)?)
    } else {
        None
    };

    Ok(LoadedSystem { hamiltonian: h, dipole, soc })
}

fn parse_float(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().or_else(|| s.replace(['d', 'D'], "e").parse().ok())
}

fn check_range(idx: &[usize], n: usize, line: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&x| x > n) {
        return Err(Error::Parse { line, msg: format!("index {bad} exceeds NORB={n}") });
    }
    Ok(())
}

fn check_range_pos(idx: &[usize], n: usize, line: usize) -> Result<()> {
    if let Some(&bad) = idx.iter().find(|&&x| x == 0 || x > n) {
        return Err(Error::Parse { line, msg: format!("index {bad} outside 1..={n}") });
    }
    Ok(())
}

#[derive(Deserialize)]
struct StructuredFile {
    n_orb: usize,
    #[serde(default)]
    e_core: f64,
    #[serde(default)]
    n_elec: Option<usize>,
    #[serde(default)]
    ms2: Option<i64>,
    #[serde(default)]
    t: Vec<Vec<f64>>,
    /// Sparse 1-based entries `[p, q, r, s, value]`.
    #[serde(default)]
    v: Vec<(usize, usize, usize, usize, f64)>,
    #[serde(default)]
    dipole: Option<[Vec<Vec<f64>>; 3]>,
    #[serde(default)]
    soc_re: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    soc_im: Option<Vec<Vec<f64>>>,
}

/// Parse the JSON layout (dense `t`, sparse `v`, optional dense dipole/SOC).
pub fn parse_structured<T: Real>(text: &str) -> Result<LoadedSystem<T>> {
    let sf: StructuredFile = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    let n = sf.n_orb;
    if n == 0 {
        return Err(Error::Format("n_orb must be at least 1".into()));
    }
    let mut h = ActiveSpaceHamiltonian::<T>::zeros(n);
    h.e_core = c(sf.e_core);
    h.n_elec = sf.n_elec;
    h.ms2 = sf.ms2;
    let dense = |rows: &Vec<Vec<f64>>, dim: usize, what: &str| -> Result<DMatrix<f64>> {
        let m = crate::serde_mat::from_rows(rows, dim)
            .ok_or_else(|| Error::Format(format!("{what}: ragged rows")))?;
        if m.shape() != (dim, dim) {
            return Err(Error::Format(format!("{what}: expected {dim}×{dim}")));
        }
        Ok(m)
    };
    if !sf.t.is_empty() {
        let t = dense(&sf.t, n, "t")?;
        check_symmetric(&t, "one-electron integrals")?;
        h.t = t.map(c);
    }
    let mut v = Filler::new();
    for (k, &(p, q, r, s, val)) in sf.v.iter().enumerate() {
        let idx = [p, q, r, s];
        if idx.iter().any(|&x| x == 0 || x > n) {
            return Err(Error::Validation(format!("v entry {k} has index outside 1..={n}")));
        }
        v.put(vec![p - 1, q - 1, r - 1, s - 1], val, k + 1)?;
    }
    {
        let vv = &mut h.v;
        v.resolve("two-electron", quad_sym, |k, x| vv[((k[0] * n + k[1]) * n + k[2]) * n + k[3]] = c(x))?;
    }
    let dipole = match &sf.dipole {
        Some(ds) => {
            let mut out: [DMatrix<T>; 3] = [DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
            for k in 0..3 {
                let m = dense(&ds[k], n, "dipole")?;
                check_symmetric(&m, "dipole")?;
                out[k] = m.map(c);
            }
            Some(DipoleOperator { d: out })
        }
        None => None,
    };
    let soc = if sf.soc_re.is_some() || sf.soc_im.is_some() {
        let zero = vec![vec![0.0; 2 * n]; 2 * n];
        let re = dense(sf.soc_re.as_ref().unwrap_or(&zero), 2 * n, "soc_re")?;
        let im = dense(sf.soc_im.as_ref().unwrap_or(&zero), 2 * n, "soc_im")?;
        Some(SOCOperator::new(DMatrix::from_fn(2 * n, 2 * n, |i, j| cx(c(re[(i, j)]), c(im[(i, j)]))))?)
    } else {
        None
    };
    Ok(LoadedSystem { hamiltonian: h, dipole, soc })
}

/// Serialize to the text format. Only canonical index orderings are written;
/// zero entries are skipped.
pub fn write_hamiltonian<T: Real>(sys: &LoadedSystem<T>) -> String {
    let h = &sys.hamiltonian;
    let n = h.n_orb;
    let mut out = String::new();
    let _ = write!(out, "&FCI NORB={n},");
    if let Some(ne) = h.n_elec {
        let _ = write!(out, " NELEC={ne},");
    }
    if let Some(ms) = h.ms2 {
        let _ = write!(out, " MS2={ms},");
    }
    out.push_str("\n&END\n");
    for p in 0..n {
        for q in 0..=p {
            for r in 0..n {
                for s in 0..=r {
                    if p * n + q < r * n + s {
                        continue;
                    }
                    let x = f(h.v(p, q, r, s));
                    if x != 0.0 {
                        let _ = writeln!(out, "{x:e} {} {} {} {}", p + 1, q + 1, r + 1, s + 1);
                    }
                }
            }
        }
    }
    for p in 0..n {
        for q in 0..=p {
            let x = f(h.t[(p, q)]);
            if x != 0.0 {
                let _ = writeln!(out, "{x:e} {} {} 0 0", p + 1, q + 1);
            }
        }
    }
    let _ = writeln!(out, "{:e} 0 0 0 0", f(h.e_core));
    if let Some(d) = &sys.dipole {
        for (k, tag) in ["DIPOLE_X", "DIPOLE_Y", "DIPOLE_Z"].iter().enumerate() {
            let _ = writeln!(out, "{tag}");
            for p in 0..n {
                for q in 0..=p {
                    let x = f(d.d[k][(p, q)]);
                    if x != 0.0 {
                        let _ = writeln!(out, "{x:e} {} {}", p + 1, q + 1);
                    }
                }
            }
        }
    }
    if let Some(soc) = &sys.soc {
        let m = &soc.h_soc;
        out.push_str("SOC_RE\n");
        for i in 0..2 * n {
            for j in 0..=i {
                let x = f(m[(i, j)].re);
                if x != 0.0 {
                    let _ = writeln!(out, "{x:e} {} {}", i + 1, j + 1);
                }
            }
        }
        out.push_str("SOC_IM\n");
        for i in 0..2 * n {
            for j in 0..i {
                let x = f(m[(i, j)].im);
                if x != 0.0 {
                    let _ = writeln!(out, "{x:e} {} {}", i + 1, j + 1);
                }
            }
        }
    }
    out
}

/// Write to disk atomically.
pub fn save_hamiltonian<T: Real>(sys: &LoadedSystem<T>, path: &Path) -> Result<()> {
    crate::atomic_write(path, write_hamiltonian(sys).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIAG2: &str = "&FCI NORB=2, NELEC=2, MS2=0,\n&END\n1.0 1 1 0 0\n2.0 2 2 0 0\n0.0 0 0 0 0\n";

    #[test]
    fn diagonal_two_orbital_file() {
        let s = parse_integral_text::<f64>(DIAG2).unwrap();
        let h = s.hamiltonian;
        assert_eq!(h.n_orb, 2);
        assert_eq!(h.e_core, 0.0);
        assert_eq!(h.t, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        assert!(h.v.iter().all(|&x| x == 0.0));
        assert_eq!(h.n_elec, Some(2));
    }

    #[test]
    fn missing_partner_is_filled() {
        let txt = "&FCI NORB=2 &END\n0.3 1 1 2 2\n";
        let h = parse_integral_text::<f64>(txt).unwrap().hamiltonian;
        assert_eq!(h.v(1, 1, 0, 0), 0.3);
        assert_eq!(h.v(0, 0, 1, 1), 0.3);
    }

    #[test]
    fn asymmetric_one_body_rejected() {
        let txt = "&FCI NORB=2 &END\n0.5 1 2 0 0\n0.6 2 1 0 0\n";
        assert!(matches!(parse_integral_text::<f64>(txt), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let txt = "&FCI NORB=2\n&END\n0.5 1 1 0 0\n0.2 1 x 0 0\n";
        match parse_integral_text::<f64>(txt) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_header_is_format_error() {
        assert!(matches!(parse_integral_text::<f64>("0.5 1 1 0 0\n"), Err(Error::Format(_))));
    }

    #[test]
    fn index_beyond_norb_rejected() {
        let txt = "&FCI NORB=2 &END\n0.5 3 1 0 0\n";
        assert!(matches!(parse_integral_text::<f64>(txt), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn soc_decomposition_reassembles() {
        let txt = "&FCI NORB=2 &END\n1.0 1 1 0 0\nSOC_RE\n0.1 1 1\n-0.1 3 3\n0.02 3 2\nSOC_IM\n0.05 2 1\n0.03 4 1\n";
        let s = parse_integral_text::<f64>(txt).unwrap();
        let soc = s.soc.unwrap();
        let sum = soc.components.values().fold(DMatrix::from_element(4, 4, czero()), |a, b| a + b);
        assert!((sum - &soc.h_soc).norm() < 1e-12);
        assert!(crate::linalg::hermiticity_defect(&soc.channel_generator(SocChannel::Flip)) < 1e-15);
        assert_eq!(soc.h_soc[(0, 1)].im, -0.05);
    }

    #[test]
    fn solvent_json_round_trip() {
        let js = r#"{"kind":"bosonic","modes":[{"omega":1.0,"g":[[0.1,0.0],[0.0,0.0]]}]}"#;
        let s: SolventModel<f64> = SolventModel::from_json(js).unwrap();
        let h = parse_integral_text::<f64>(DIAG2).unwrap().hamiltonian;
        let out = s.apply(&h).unwrap();
        assert_eq!(out.t[(0, 0)], 1.0 - 0.1 * 0.1);
        let again: SolventModel<f64> = SolventModel::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn pcm_rejects_weak_dielectric() {
        let h = ActiveSpaceHamiltonian::<f64>::zeros(1);
        let s = SolventModel::PcmStatic { epsilon: 0.5, reaction_field: DMatrix::zeros(1, 1) };
        assert!(matches!(apply_pcm(&h, &s), Err(Error::Domain(_))));
    }

    #[test]
    fn nonpositive_boson_frequency_rejected() {
        let h = ActiveSpaceHamiltonian::<f64>::zeros(1);
        let s = SolventModel::Bosonic { modes: vec![BosonMode { omega: 0.0, g: DMatrix::zeros(1, 1) }] };
        assert!(matches!(integrate_out_bosons(&h, &s), Err(Error::Domain(_))));
    }

    #[test]
    fn single_precision_load() {
        let s = parse_integral_text::<f32>(DIAG2).unwrap();
        assert_eq!(s.hamiltonian.t[(1, 1)], 2.0f32);
    }
}
