use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::measure::{injections, ChannelDerivatives};
use super::{Channel, StateVector};
use crate::error::{Error, Result};
use crate::grid::{BusKind, Network};

/// Per-bus power-flow targets: net injections (generation minus load) and
/// voltage setpoints. P is enforced at PV/PQ buses, Q at PQ buses and the
/// magnitude at PV/slack buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub vm: Vec<f64>,
}

impl Dispatch {
    /// Loads and in-service generator outputs as written in the case.
    pub fn from_case(net: &Network) -> Self {
        let case = &net.case;
        let mut p: Vec<f64> = case.buses.iter().map(|b| -b.p_load).collect();
        let mut q: Vec<f64> = case.buses.iter().map(|b| -b.q_load).collect();
        for g in case.gens.iter().filter(|g| g.in_service) {
            p[g.bus] += g.pg;
            q[g.bus] += g.qg;
        }
        let vm = case.buses.iter().map(|b| b.v_setpoint).collect();
        Self { p, q, vm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { max_iterations: 20, tolerance: 1e-8 }
    }
}

/// Newton–Raphson power flow from a flat start. The slack bus absorbs the
/// residual active and reactive power; generator reactive limits are not
/// enforced.
pub fn solve_powerflow(net: &Network, dispatch: &Dispatch, opts: PowerFlowOptions) -> Result<StateVector> {
    let n = net.n();
    if dispatch.p.len() != n || dispatch.q.len() != n || dispatch.vm.len() != n {
        return Err(Error::Dimension(format!("dispatch does not cover {n} buses")));
    }
    let kinds: Vec<BusKind> = net.case.buses.iter().map(|b| b.kind).collect();
    let angle_buses: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let dim = angle_buses.len() + pq.len();

    let mut state = StateVector::flat(n);
    for i in 0..n {
        if kinds[i] != BusKind::Pq {
            state.vm[i] = dispatch.vm[i];
        }
    }

    let mut row = vec![0.0; 2 * n];
    for iteration in 0..=opts.max_iterations {
        let s = injections(&state, net);
        let mismatch = DVector::from_iterator(
            dim,
            angle_buses.iter().map(|&i| s[i].re - dispatch.p[i]).chain(pq.iter().map(|&i| s[i].im - dispatch.q[i])),
        );
        if mismatch.iter().any(|v| !v.is_finite()) {
            return Err(Error::PowerFlowDiverged(iteration));
        }
        let worst = mismatch.amax();
        if worst <= opts.tolerance {
            return Ok(state);
        }
        if iteration == opts.max_iterations {
            return Err(Error::PowerFlowNotConverged { iterations: iteration, mismatch: worst });
        }

        let mut jac = DMatrix::zeros(dim, dim);
        let deriv = ChannelDerivatives::new(net, &state);
        let channels = angle_buses.iter().map(|&i| Channel::PInj(i)).chain(pq.iter().map(|&i| Channel::QInj(i)));
        for (r, ch) in channels.enumerate() {
            deriv.fill(ch, &mut row);
            for (c, &i) in angle_buses.iter().enumerate() {
                jac[(r, c)] = row[i];
            }
            for (c, &i) in pq.iter().enumerate() {
                jac[(r, angle_buses.len() + c)] = row[n + i];
            }
        }
        let step = jac.lu().solve(&(-mismatch)).ok_or(Error::PowerFlowDiverged(iteration))?;
        for (c, &i) in angle_buses.iter().enumerate() {
            state.va[i] += step[c];
        }
        for (c, &i) in pq.iter().enumerate() {
            state.vm[i] += step[angle_buses.len() + c];
        }
    }
    unreachable!("loop returns on the final iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;
    use crate::powerflow::{measure, MeasurementSchema};

    fn net(name: &str) -> Network {
        Network::new(bundled::load(name).unwrap()).unwrap()
    }

    /// Two-bus oracle: with V1 = 1∠0, x = 0.1 and a purely active load P at
    /// bus 2, Q2 = 0 gives V2 = cos θ2 and P2 = 10 V2 sin θ2 = -P, so
    /// sin θ cos θ = -P/10. Solved by bisection independently of Newton.
    fn bisect_two_bus(p: f64) -> f64 {
        let g = |th: f64| th.sin() * th.cos() + p / 10.0;
        let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo) * g(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_bus_matches_bisection_oracle() {
        let n = net("twobus");
        let state = solve_powerflow(&n, &Dispatch::from_case(&n), PowerFlowOptions::default()).unwrap();
        let theta = bisect_two_bus(0.5);
        assert!((theta - -0.050_083_7).abs() < 1e-7);
        assert!((state.va[1] - theta).abs() < 1e-9);
        assert!((state.vm[1] - theta.cos()).abs() < 1e-9);
    }

    #[test]
    fn zero_injection_gives_flat_solution() {
        let mut case = bundled::load("case14").unwrap();
        for bus in &mut case.buses {
            bus.p_load = 0.0;
            bus.q_load = 0.0;
            bus.b_shunt = 0.0;
            bus.kind = if bus.kind == BusKind::Slack { BusKind::Slack } else { BusKind::Pq };
            bus.v_setpoint = 1.0;
        }
        for br in &mut case.branches {
            br.b_charging = 0.0;
            br.tap = 1.0;
        }
        for g in &mut case.gens {
            g.pg = 0.0;
            g.qg = 0.0;
            g.vg = 1.0;
        }
        let n = Network::new(case).unwrap();
        let state = solve_powerflow(&n, &Dispatch::from_case(&n), PowerFlowOptions::default()).unwrap();
        assert!(state.vm.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(state.va.iter().all(|&a| a.abs() < 1e-12));
    }

    #[test]
    fn solution_reproduces_pq_injections() {
        for name in bundled::NAMES {
            let n = net(name);
            let dispatch = Dispatch::from_case(&n);
            let state = solve_powerflow(&n, &dispatch, PowerFlowOptions::default()).unwrap();
            let schema = MeasurementSchema::default_schema(&n);
            let z = measure(&state, &n, &schema).unwrap();
            for (i, bus) in n.case.buses.iter().enumerate() {
                if bus.kind == BusKind::Pq {
                    let p = z[schema.position(Channel::PInj(i)).unwrap()];
                    let q = z[schema.position(Channel::QInj(i)).unwrap()];
                    assert!((p - dispatch.p[i]).abs() <= 1e-7, "{name} bus {}", bus.id);
                    assert!((q - dispatch.q[i]).abs() <= 1e-7, "{name} bus {}", bus.id);
                }
            }
        }
    }

    #[test]
    fn case14_matches_published_solution() {
        // voltage magnitudes stored in the case file are the solved values
        let n = net("case14");
        let state = solve_powerflow(&n, &Dispatch::from_case(&n), PowerFlowOptions::default()).unwrap();
        let src = bundled::load("case14").unwrap();
        let vm_file = [1.06, 1.045, 1.01, 1.019, 1.02, 1.07, 1.062, 1.09, 1.056, 1.051, 1.057, 1.055, 1.05, 1.036];
        for (i, v) in vm_file.iter().enumerate() {
            assert!((state.vm[i] - v).abs() < 1.5e-3, "bus {}: {} vs {v}", src.buses[i].id, state.vm[i]);
        }
        assert!((state.va[13].to_degrees() - -16.04).abs() < 0.05);
    }

    #[test]
    fn non_convergence_reports_mismatch() {
        let n = net("case14");
        let mut dispatch = Dispatch::from_case(&n);
        for p in &mut dispatch.p {
            *p *= 40.0;
        }
        let err = solve_powerflow(&n, &dispatch, PowerFlowOptions { max_iterations: 5, tolerance: 1e-8 }).unwrap_err();
        assert!(matches!(err, Error::PowerFlowNotConverged { .. } | Error::PowerFlowDiverged(_)));
    }
}
