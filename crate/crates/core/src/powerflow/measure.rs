use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Channel, FreeStateLayout, MeasurementSchema, MeasurementVector, StateVector};
use crate::error::Result;
use crate::grid::{Network, TwoPort};

fn phasors(state: &StateVector) -> Vec<Complex64> {
    state.vm.iter().zip(&state.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
}

/// Complex bus injections `S_i = V_i conj(sum_k Y_ik V_k)`.
pub(crate) fn injections(state: &StateVector, net: &Network) -> Vec<Complex64> {
    let v = phasors(state);
    let y = &net.ybus;
    (0..net.n())
        .map(|i| {
            let current: Complex64 = y.pattern[i].iter().map(|&k| y.get(i, k) * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

fn from_end_flow(tp: &TwoPort, v: &[Complex64]) -> Complex64 {
    let current = tp.yff * v[tp.from] + tp.yft * v[tp.to];
    v[tp.from] * current.conj()
}

/// Evaluates `h(x)` for every channel of the schema.
pub fn measure(state: &StateVector, net: &Network, schema: &MeasurementSchema) -> Result<MeasurementVector> {
    state.check(net.n())?;
    let v = phasors(state);
    let needs_injections = schema.channels().iter().any(|c| matches!(c, Channel::PInj(_) | Channel::QInj(_)));
    let s = if needs_injections { injections(state, net) } else { Vec::new() };
    let flow = |b: usize| from_end_flow(net.two_ports[b].as_ref().expect("schema validated"), &v);
    Ok(DVector::from_iterator(
        schema.len(),
        schema.channels().iter().map(|ch| match *ch {
            Channel::PInj(i) => s[i].re,
            Channel::QInj(i) => s[i].im,
            Channel::PFlow(b) => flow(b).re,
            Channel::QFlow(b) => flow(b).im,
            Channel::VMag(i) => state.vm[i],
        }),
    ))
}

/// Partial derivatives of one channel with respect to every bus angle and
/// magnitude, written into `out` laid out as `[va_0..va_n, vm_0..vm_n]`.
pub struct ChannelDerivatives<'a> {
    net: &'a Network,
    state: &'a StateVector,
}

impl<'a> ChannelDerivatives<'a> {
    pub fn new(net: &'a Network, state: &'a StateVector) -> Self {
        Self { net, state }
    }

    pub fn fill(&self, channel: Channel, out: &mut [f64]) {
        let n = self.net.n();
        out.fill(0.0);
        let (vm, va) = (&self.state.vm, &self.state.va);
        let y = &self.net.ybus;
        match channel {
            Channel::PInj(i) | Channel::QInj(i) => {
                let active = matches!(channel, Channel::PInj(_));
                for &k in &y.pattern[i] {
                    let (g, b) = (y.g[(i, k)], y.b[(i, k)]);
                    if k == i {
                        let diag = if active { 2.0 * g * vm[i] } else { -2.0 * b * vm[i] };
                        out[n + i] += diag;
                        continue;
                    }
                    let (sin, cos) = (va[i] - va[k]).sin_cos();
                    // real part: G cos + B sin, imaginary part: G sin - B cos
                    let (re, im) = (g * cos + b * sin, g * sin - b * cos);
                    let vv = vm[i] * vm[k];
                    if active {
                        // d/dθ_i of V_i V_k (G cos + B sin) is V_i V_k (G sin - B cos)·(-1)
                        out[i] -= vv * im;
                        out[k] += vv * im;
                        out[n + i] += vm[k] * re;
                        out[n + k] += vm[i] * re;
                    } else {
                        out[i] += vv * re;
                        out[k] -= vv * re;
                        out[n + i] += vm[k] * im;
                        out[n + k] += vm[i] * im;
                    }
                }
            }
            Channel::PFlow(br) | Channel::QFlow(br) => {
                let tp = self.net.two_ports[br].as_ref().expect("schema validated");
                let (f, t) = (tp.from, tp.to);
                let (gft, bft) = (tp.yft.re, tp.yft.im);
                let (sin, cos) = (va[f] - va[t]).sin_cos();
                let (re, im) = (gft * cos + bft * sin, gft * sin - bft * cos);
                let vv = vm[f] * vm[t];
                if matches!(channel, Channel::PFlow(_)) {
                    // P_f = gff V_f^2 + V_f V_t (gft cos + bft sin)
                    out[f] -= vv * im;
                    out[t] += vv * im;
                    out[n + f] += 2.0 * tp.yff.re * vm[f] + vm[t] * re;
                    out[n + t] += vm[f] * re;
                } else {
                    // Q_f = -bff V_f^2 + V_f V_t (gft sin - bft cos)
                    out[f] += vv * re;
                    out[t] -= vv * re;
                    out[n + f] += -2.0 * tp.yff.im * vm[f] + vm[t] * im;
                    out[n + t] += vm[f] * im;
                }
            }
            Channel::VMag(i) => out[n + i] = 1.0,
        }
    }
}

/// Jacobian of `h` with respect to all `2n` bus variables, columns `[va | vm]`.
pub fn measurement_jacobian_full(
    state: &StateVector,
    net: &Network,
    schema: &MeasurementSchema,
) -> Result<DMatrix<f64>> {
    state.check(net.n())?;
    let cols = 2 * net.n();
    // built transposed so each channel is a contiguous column
    let mut jt = DMatrix::zeros(cols, schema.len());
    let deriv = ChannelDerivatives::new(net, state);
    for (j, &ch) in schema.channels().iter().enumerate() {
        deriv.fill(ch, jt.column_mut(j).as_mut_slice());
    }
    Ok(jt.transpose())
}

/// Jacobian of `h` with respect to the free states (non-slack angles, then
/// non-slack magnitudes).
pub fn measurement_jacobian(state: &StateVector, net: &Network, schema: &MeasurementSchema) -> Result<DMatrix<f64>> {
    state.check(net.n())?;
    let layout = FreeStateLayout::new(net);
    let cols = layout.full_columns();
    let mut jt = DMatrix::zeros(layout.dim(), schema.len());
    let mut buf = vec![0.0; 2 * net.n()];
    let deriv = ChannelDerivatives::new(net, state);
    for (j, &ch) in schema.channels().iter().enumerate() {
        deriv.fill(ch, &mut buf);
        let mut col = jt.column_mut(j);
        for (r, &c) in cols.iter().enumerate() {
            col[r] = buf[c];
        }
    }
    Ok(jt.transpose())
}
