//! Symbolic basis lift `f(x)` in which every measurement channel is linear,
//! and the coefficient matrix `A` with `h(x) = A f(x)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::powerflow::{Channel, MeasurementSchema, StateVector};

/// One lifted coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    /// `V_i`
    V(usize),
    /// `V_i V_k cos(θ_i - θ_k)`
    C(usize, usize),
    /// `V_i V_k sin(θ_i - θ_k)`
    S(usize, usize),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::V(i) => write!(f, "V({i})"),
            Term::C(i, k) => write!(f, "C({i},{k})"),
            Term::S(i, k) => write!(f, "S({i},{k})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMode {
    /// Every ordered bus pair, including `S(i,i)`: `p = n + 2n^2`.
    Dense,
    /// `V(i)`, `C(i,i)` and `C/S(i,k)` for adjacent buses only.
    Sparse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecRepr {
    mode: BasisMode,
    n: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct LiftedBasisSpec {
    n: usize,
    mode: BasisMode,
    terms: Vec<Term>,
    #[serde(skip)]
    index: HashMap<Term, usize>,
}

impl TryFrom<SpecRepr> for LiftedBasisSpec {
    type Error = Error;
    fn try_from(r: SpecRepr) -> Result<Self> {
        Self::from_terms(r.n, r.mode, r.terms)
    }
}

impl From<LiftedBasisSpec> for SpecRepr {
    fn from(s: LiftedBasisSpec) -> Self {
        SpecRepr { mode: s.mode, n: s.n, terms: s.terms }
    }
}

impl LiftedBasisSpec {
    pub fn from_terms(n: usize, mode: BasisMode, terms: Vec<Term>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (j, &t) in terms.iter().enumerate() {
            let ok = match t {
                Term::V(i) => i < n,
                Term::C(i, k) | Term::S(i, k) => i < n && k < n,
            };
            if !ok {
                return Err(Error::Config(format!("basis term {t} is out of range for {n} buses")));
            }
            if index.insert(t, j).is_some() {
                return Err(Error::Config(format!("duplicate basis term {t}")));
            }
        }
        Ok(Self { n, mode, terms, index })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn position(&self, term: Term) -> Option<usize> {
        self.index.get(&term).copied()
    }
}

/// Enumerates the basis: all `V` terms, then `C` terms, then `S` terms, each
/// in row-major `(i, k)` order.
pub fn build_basis_spec(net: &Network, mode: BasisMode) -> LiftedBasisSpec {
    let n = net.n();
    let mut terms: Vec<Term> = (0..n).map(Term::V).collect();
    match mode {
        BasisMode::Dense => {
            terms.extend((0..n).flat_map(|i| (0..n).map(move |k| Term::C(i, k))));
            terms.extend((0..n).flat_map(|i| (0..n).map(move |k| Term::S(i, k))));
        }
        BasisMode::Sparse => {
            for i in 0..n {
                let mut row: Vec<usize> = net.adjacency[i].iter().copied().filter(|&k| k != i).collect();
                row.push(i);
                row.sort_unstable();
                terms.extend(row.into_iter().map(|k| Term::C(i, k)));
            }
            for i in 0..n {
                terms.extend(net.adjacency[i].iter().filter(|&&k| k != i).map(|&k| Term::S(i, k)));
            }
        }
    }
    LiftedBasisSpec::from_terms(n, mode, terms).expect("enumeration is duplicate free")
}

fn check_state(spec: &LiftedBasisSpec, state: &StateVector) -> Result<()> {
    state.check(spec.n)
}

pub fn eval_basis(spec: &LiftedBasisSpec, state: &StateVector) -> Result<DVector<f64>> {
    check_state(spec, state)?;
    let mut out = DVector::zeros(spec.p());
    eval_basis_into(spec, state, out.as_mut_slice());
    Ok(out)
}

fn bus_trig(va: &[f64]) -> Vec<(f64, f64)> {
    va.iter().map(|a| a.sin_cos()).collect()
}

/// `(sin, cos)` of `θ_i - θ_k` from per-bus values.
#[inline]
fn diff_trig(t: &[(f64, f64)], i: usize, k: usize) -> (f64, f64) {
    let ((si, ci), (sk, ck)) = (t[i], t[k]);
    (si * ck - ci * sk, ci * ck + si * sk)
}

/// Writes `f(x)` into `out` (length `p`); the state length is not checked.
pub fn eval_basis_into(spec: &LiftedBasisSpec, state: &StateVector, out: &mut [f64]) {
    let vm = &state.vm;
    let trig = bus_trig(&state.va);
    for (o, t) in out.iter_mut().zip(&spec.terms) {
        *o = match *t {
            Term::V(i) => vm[i],
            Term::C(i, k) => vm[i] * vm[k] * diff_trig(&trig, i, k).1,
            Term::S(i, k) => vm[i] * vm[k] * diff_trig(&trig, i, k).0,
        };
    }
}

/// `p x 2n` Jacobian of the basis with columns `[va_0..va_n, vm_0..vm_n]`.
pub fn basis_jacobian(spec: &LiftedBasisSpec, state: &StateVector) -> Result<DMatrix<f64>> {
    check_state(spec, state)?;
    let n = spec.n;
    let (vm, va) = (&state.vm, &state.va);
    let mut jac = DMatrix::zeros(spec.p(), 2 * n);
    for (r, t) in spec.terms.iter().enumerate() {
        match *t {
            Term::V(i) => jac[(r, n + i)] = 1.0,
            Term::C(i, k) if i == k => jac[(r, n + i)] = 2.0 * vm[i],
            Term::S(i, k) if i == k => {}
            Term::C(i, k) => {
                let (sin, cos) = (va[i] - va[k]).sin_cos();
                let vv = vm[i] * vm[k];
                jac[(r, i)] = -vv * sin;
                jac[(r, k)] = vv * sin;
                jac[(r, n + i)] = vm[k] * cos;
                jac[(r, n + k)] = vm[i] * cos;
            }
            Term::S(i, k) => {
                let (sin, cos) = (va[i] - va[k]).sin_cos();
                let vv = vm[i] * vm[k];
                jac[(r, i)] = vv * cos;
                jac[(r, k)] = -vv * cos;
                jac[(r, n + i)] = vm[k] * sin;
                jac[(r, n + k)] = vm[i] * sin;
            }
        }
    }
    Ok(jac)
}

/// Vector–Jacobian product `J_f(x)' g`, laid out as `[va | vm]`, without
/// forming the Jacobian.
pub fn basis_vjp(spec: &LiftedBasisSpec, state: &StateVector, g: &[f64]) -> Result<Vec<f64>> {
    check_state(spec, state)?;
    if g.len() != spec.p() {
        return Err(Error::Dimension(format!("cotangent has {} entries, basis has {}", g.len(), spec.p())));
    }
    let mut out = vec![0.0; 2 * spec.n];
    basis_vjp_into(spec, state, g, &mut out);
    Ok(out)
}

/// Accumulates `J_f(x)' g` into `out` (length `2n`, zeroed first).
pub fn basis_vjp_into(spec: &LiftedBasisSpec, state: &StateVector, g: &[f64], out: &mut [f64]) {
    let n = spec.n;
    let vm = &state.vm;
    let trig = bus_trig(&state.va);
    out.fill(0.0);
    for (t, &w) in spec.terms.iter().zip(g) {
        if w == 0.0 {
            continue;
        }
        match *t {
            Term::V(i) => out[n + i] += w,
            Term::C(i, k) if i == k => out[n + i] += 2.0 * w * vm[i],
            Term::S(i, k) if i == k => {}
            Term::C(i, k) => {
                let (sin, cos) = diff_trig(&trig, i, k);
                let d = w * vm[i] * vm[k] * sin;
                out[i] -= d;
                out[k] += d;
                out[n + i] += w * vm[k] * cos;
                out[n + k] += w * vm[i] * cos;
            }
            Term::S(i, k) => {
                let (sin, cos) = diff_trig(&trig, i, k);
                let d = w * vm[i] * vm[k] * cos;
                out[i] += d;
                out[k] -= d;
                out[n + i] += w * vm[k] * sin;
                out[n + k] += w * vm[i] * sin;
            }
        }
    }
}

/// The coefficient matrix `A` (`m x p`), stored by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedMap {
    pub p: usize,
    /// Nonzero `(term index, coefficient)` pairs per channel, sorted by term.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl LiftedMap {
    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|row| row.iter().map(|&(j, a)| a * f[j]).sum()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m(), self.p);
        for (r, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[(r, j)] = v;
            }
        }
        a
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Terms owned by each bus: `V(i)`, `C(i,*)` and `S(i,*)`.
pub fn bus_blocks(spec: &LiftedBasisSpec) -> Vec<Vec<usize>> {
    let mut blocks = vec![Vec::new(); spec.n()];
    for (j, t) in spec.terms().iter().enumerate() {
        let (Term::V(i) | Term::C(i, _) | Term::S(i, _)) = *t;
        blocks[i].push(j);
    }
    blocks
}

/// Bus whose block carries a channel: the bus itself for injections and
/// magnitudes, the from-end bus for flows.
pub fn home_bus(net: &Network, channel: Channel) -> usize {
    match channel {
        Channel::PInj(i) | Channel::QInj(i) | Channel::VMag(i) => i,
        Channel::PFlow(b) | Channel::QFlow(b) => net.case.branches[b].from_bus,
    }
}

/// Block-diagonal sparsity pattern for a decoder: each channel may only use
/// the terms of its home bus. The exact lifted map always fits the pattern.
pub fn block_pattern(net: &Network, schema: &MeasurementSchema, spec: &LiftedBasisSpec) -> Vec<Vec<usize>> {
    let blocks = bus_blocks(spec);
    schema.channels().iter().map(|&ch| blocks[home_bus(net, ch)].clone()).collect()
}

/// Builds `A` so that `measure(x) = A eval_basis(x)` for every state.
///
/// Injection rows expand `conj(Y_ik) V_i conj(V_k)`; flow rows use the
/// branch two-port, so charging, taps and phase shifts are all carried by
/// the `C`/`S` coefficients.
pub fn assemble_lifted_map(net: &Network, schema: &MeasurementSchema, spec: &LiftedBasisSpec) -> Result<LiftedMap> {
    if spec.n != net.n() {
        return Err(Error::Dimension(format!("basis covers {} buses, network has {}", spec.n, net.n())));
    }
    let y = &net.ybus;
    let mut rows = Vec::with_capacity(schema.len());
    for &ch in schema.channels() {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut put = |term: Term, coef: f64| -> Result<()> {
            if coef == 0.0 {
                return Ok(());
            }
            let j = spec.position(term).ok_or_else(|| Error::MissingBasisTerm(term.to_string()))?;
            *acc.entry(j).or_insert(0.0) += coef;
            Ok(())
        };
        match ch {
            Channel::PInj(i) | Channel::QInj(i) => {
                let active = matches!(ch, Channel::PInj(_));
                for &k in &y.pattern[i] {
                    let (g, b) = (y.g[(i, k)], y.b[(i, k)]);
                    let (c_coef, s_coef) = if active { (g, b) } else { (-b, g) };
                    put(Term::C(i, k), c_coef)?;
                    if k != i {
                        put(Term::S(i, k), s_coef)?;
                    }
                }
            }
            Channel::PFlow(br) | Channel::QFlow(br) => {
                let tp = net.two_ports[br].as_ref().ok_or_else(|| Error::Config(format!("branch {br} is out of service")))?;
                let (f, t) = (tp.from, tp.to);
                let (gff, bff) = (tp.yff.re, tp.yff.im);
                let (gft, bft) = (tp.yft.re, tp.yft.im);
                if matches!(ch, Channel::PFlow(_)) {
                    put(Term::C(f, f), gff)?;
                    put(Term::C(f, t), gft)?;
                    put(Term::S(f, t), bft)?;
                } else {
                    put(Term::C(f, f), -bff)?;
                    put(Term::C(f, t), -bft)?;
                    put(Term::S(f, t), gft)?;
                }
            }
            Channel::VMag(i) => put(Term::V(i), 1.0)?,
        }
        rows.push(acc.into_iter().filter(|&(_, v)| v != 0.0).collect());
    }
    Ok(LiftedMap { p: spec.p(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;
    use crate::powerflow::{measure, measurement_jacobian_full};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(name: &str) -> Network {
        Network::new(bundled::load(name).unwrap()).unwrap()
    }

    fn random_state(n: usize, rng: &mut impl Rng) -> StateVector {
        StateVector {
            vm: (0..n).map(|_| rng.random_range(0.9..1.1)).collect(),
            va: (0..n).map(|_| rng.random_range(-0.3..0.3)).collect(),
        }
    }

    #[test]
    fn dimensions() {
        let n14 = net("case14");
        assert_eq!(build_basis_spec(&n14, BasisMode::Dense).p(), 406);
        // 3n + 2 * (2L) = 122 before dropping the n structurally zero S(i,i)
        assert_eq!(build_basis_spec(&n14, BasisMode::Sparse).p(), 122 - 14);
        let two = build_basis_spec(&net("twobus"), BasisMode::Sparse);
        assert_eq!(
            two.terms(),
            &[Term::V(0), Term::V(1), Term::C(0, 0), Term::C(0, 1), Term::C(1, 0), Term::C(1, 1), Term::S(0, 1), Term::S(1, 0)]
        );
    }

    #[test]
    fn flat_values_and_symmetries() {
        let n = net("case14");
        let spec = build_basis_spec(&n, BasisMode::Dense);
        let f = eval_basis(&spec, &StateVector::flat(14)).unwrap();
        for (t, v) in spec.terms().iter().zip(f.iter()) {
            let expect = if matches!(t, Term::S(..)) { 0.0 } else { 1.0 };
            assert_eq!(*v, expect, "{t}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_state(14, &mut rng);
        let f = eval_basis(&spec, &x).unwrap();
        for i in 0..14 {
            assert_eq!(f[spec.position(Term::S(i, i)).unwrap()], 0.0);
            for k in 0..14 {
                let (cik, cki) = (f[spec.position(Term::C(i, k)).unwrap()], f[spec.position(Term::C(k, i)).unwrap()]);
                let (sik, ski) = (f[spec.position(Term::S(i, k)).unwrap()], f[spec.position(Term::S(k, i)).unwrap()]);
                assert!((cik - cki).abs() < 1e-15);
                assert!((sik + ski).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let n = net("case14");
        let spec = build_basis_spec(&n, BasisMode::Sparse);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = random_state(14, &mut rng);
            let jac = basis_jacobian(&spec, &x).unwrap();
            let h = 1e-6;
            for c in 0..28 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                if c < 14 {
                    xp.va[c] += h;
                    xm.va[c] -= h;
                } else {
                    xp.vm[c - 14] += h;
                    xm.vm[c - 14] -= h;
                }
                let fd = (eval_basis(&spec, &xp).unwrap() - eval_basis(&spec, &xm).unwrap()) / (2.0 * h);
                for r in 0..spec.p() {
                    let (a, b) = (jac[(r, c)], fd[r]);
                    assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} col {c}: {a} vs {b}", spec.terms()[r]);
                }
            }
        }
    }

    #[test]
    fn flat_state_jacobian() {
        let n = net("case14");
        let spec = build_basis_spec(&n, BasisMode::Sparse);
        let jac = basis_jacobian(&spec, &StateVector::flat(14)).unwrap();
        for (r, t) in spec.terms().iter().enumerate() {
            match *t {
                Term::V(i) => {
                    let row: Vec<f64> = jac.row(r).iter().copied().collect();
                    assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
                    assert_eq!(row[14 + i], 1.0);
                }
                Term::C(..) => assert!((0..14).all(|c| jac[(r, c)] == 0.0)),
                Term::S(i, k) => {
                    assert_eq!(jac[(r, i)], 1.0);
                    assert_eq!(jac[(r, k)], -1.0);
                }
            }
        }
    }

    #[test]
    fn vjp_equals_transposed_jacobian_product() {
        let n = net("case30");
        let spec = build_basis_spec(&n, BasisMode::Dense);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_state(30, &mut rng);
        let g: Vec<f64> = (0..spec.p()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = basis_vjp(&spec, &x, &g).unwrap();
        let reference = basis_jacobian(&spec, &x).unwrap().transpose() * DVector::from_vec(g);
        for (a, b) in v.iter().zip(reference.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lifted_map_is_exact_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in ["twobus", "case14", "case39"] {
            let n = net(name);
            let schema = MeasurementSchema::default_schema(&n);
            for mode in [BasisMode::Dense, BasisMode::Sparse] {
                let spec = build_basis_spec(&n, mode);
                let a = assemble_lifted_map(&n, &schema, &spec).unwrap();
                for _ in 0..20 {
                    let x = random_state(n.n(), &mut rng);
                    let lhs = measure(&x, &n, &schema).unwrap();
                    let rhs = a.apply(&eval_basis(&spec, &x).unwrap());
                    assert!((lhs - rhs).amax() <= 1e-9, "{name} {mode:?}");
                }
            }
        }
    }

    #[test]
    fn lifted_map_is_exact_with_phase_shifters() {
        let mut case = bundled::load("case14").unwrap();
        case.branches[7].shift = 0.12;
        case.branches[9].shift = -0.05;
        case.branches[9].tap = 0.97;
        let n = Network::new(case).unwrap();
        let schema = MeasurementSchema::default_schema(&n);
        let spec = build_basis_spec(&n, BasisMode::Sparse);
        let a = assemble_lifted_map(&n, &schema, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let x = random_state(n.n(), &mut rng);
            let lhs = measure(&x, &n, &schema).unwrap();
            assert!((lhs - a.apply(&eval_basis(&spec, &x).unwrap())).amax() <= 1e-9);
        }
    }

    #[test]
    fn two_bus_injection_row() {
        let n = net("twobus");
        let schema = MeasurementSchema::default_schema(&n);
        let spec = build_basis_spec(&n, BasisMode::Sparse);
        let a = assemble_lifted_map(&n, &schema, &spec).unwrap();
        // B_12 = 10 and G = 0 with no shunts: only S(1,2) survives
        assert_eq!(a.rows[0].len(), 1);
        assert_eq!(a.rows[0][0].0, spec.position(Term::S(0, 1)).unwrap());
        assert!((a.rows[0][0].1 - 10.0).abs() < 1e-12);
        // voltage rows are unit rows on V terms
        let v0 = schema.position(Channel::VMag(0)).unwrap();
        assert_eq!(a.rows[v0], vec![(0, 1.0)]);
    }

    #[test]
    fn jacobian_chain_rule_matches_measurement_jacobian() {
        let n = net("case14");
        let schema = MeasurementSchema::default_schema(&n);
        let spec = build_basis_spec(&n, BasisMode::Sparse);
        let a = assemble_lifted_map(&n, &schema, &spec).unwrap().to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_state(14, &mut rng);
        let lhs = &a * basis_jacobian(&spec, &x).unwrap();
        let rhs = measurement_jacobian_full(&x, &n, &schema).unwrap();
        for (p, q) in lhs.iter().zip(rhs.iter()) {
            assert!((p - q).abs() <= 1e-6 * q.abs().max(1.0));
        }
    }

    #[test]
    fn missing_term_is_named() {
        let n = net("twobus");
        let schema = MeasurementSchema::default_schema(&n);
        let full = build_basis_spec(&n, BasisMode::Sparse);
        let terms: Vec<Term> = full.terms().iter().copied().filter(|t| *t != Term::S(0, 1)).collect();
        let spec = LiftedBasisSpec::from_terms(2, BasisMode::Sparse, terms).unwrap();
        let err = assemble_lifted_map(&n, &schema, &spec).unwrap_err();
        assert_eq!(err.to_string(), "basis spec lacks required term S(0,1)");
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = build_basis_spec(&net("case14"), BasisMode::Sparse);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.starts_with("{\"mode\":\"sparse\",\"n\":14,"));
        let back: LiftedBasisSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.position(Term::C(0, 1)), spec.position(Term::C(0, 1)));
        let dup = r#"{"mode":"dense","n":2,"terms":[{"V":0},{"V":0}]}"#;
        assert!(serde_json::from_str::<LiftedBasisSpec>(dup).is_err());
    }
}
