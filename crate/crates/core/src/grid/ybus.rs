use nalgebra::DMatrix;
use num_complex::Complex64;

use super::NetworkCase;

/// Nodal admittance matrix `Y = G + jB`, stored densely with a row-wise
/// sparsity index.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Column indices of the structurally nonzero entries of each row,
    /// diagonal included, ascending.
    pub pattern: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        Complex64::new(self.g[(i, k)], self.b[(i, k)])
    }
}

/// Series and charging parameters of one in-service branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchParams {
    /// Index into `NetworkCase::branches`.
    pub branch: usize,
    pub from: usize,
    pub to: usize,
    pub g_series: f64,
    pub b_series: f64,
    pub b_half_charging: f64,
    pub tap: f64,
    pub shift: f64,
}

/// Standard pi-model branch as a two-port: `[I_f; I_t] = [[yff, yft], [ytf, ytt]] [V_f; V_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl BranchParams {
    pub fn series(&self) -> Complex64 {
        Complex64::new(self.g_series, self.b_series)
    }

    pub fn two_port(&self) -> TwoPort {
        let ys = self.series();
        let charging = Complex64::new(0.0, self.b_half_charging);
        let ratio = Complex64::from_polar(self.tap, self.shift);
        TwoPort {
            from: self.from,
            to: self.to,
            yff: (ys + charging) / (self.tap * self.tap),
            yft: -ys / ratio.conj(),
            ytf: -ys / ratio,
            ytt: ys + charging,
        }
    }
}

/// Per in-service branch series admittance `1/(r + jx)` and shunt terms, in
/// branch-list order.
pub fn branch_params(case: &NetworkCase) -> Vec<BranchParams> {
    case.in_service_branches()
        .map(|(index, br)| {
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
            BranchParams {
                branch: index,
                from: br.from_bus,
                to: br.to_bus,
                g_series: ys.re,
                b_series: ys.im,
                b_half_charging: br.b_charging / 2.0,
                tap: br.tap,
                shift: br.shift,
            }
        })
        .collect()
}

pub fn build_ybus(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.buses.len();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut pattern: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    let mut add = |i: usize, k: usize, y: Complex64| {
        g[(i, k)] += y.re;
        b[(i, k)] += y.im;
    };
    for params in branch_params(case) {
        let tp = params.two_port();
        add(tp.from, tp.from, tp.yff);
        add(tp.from, tp.to, tp.yft);
        add(tp.to, tp.from, tp.ytf);
        add(tp.to, tp.to, tp.ytt);
        pattern[tp.from].push(tp.to);
        pattern[tp.to].push(tp.from);
    }
    for (i, bus) in case.buses.iter().enumerate() {
        add(i, i, Complex64::new(bus.g_shunt, bus.b_shunt));
    }
    for row in &mut pattern {
        row.sort_unstable();
        row.dedup();
    }
    AdmittanceMatrix { n, g, b, pattern }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::bundled;
    use approx::assert_abs_diff_eq;

    fn two_bus() -> NetworkCase {
        bundled::load("twobus").unwrap()
    }

    #[test]
    fn two_bus_lossless() {
        let y = build_ybus(&two_bus());
        assert_abs_diff_eq!(y.b[(0, 0)], -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b[(0, 1)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b[(1, 0)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b[(1, 1)], -10.0, epsilon = 1e-12);
        assert!(y.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn branch_params_reciprocal() {
        let params = branch_params(&two_bus());
        assert_eq!(params.len(), 1);
        assert_abs_diff_eq!(params[0].g_series, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(params[0].b_series, -10.0, epsilon = 1e-12);

        let mut case = two_bus();
        case.branches[0].r = 0.01;
        case.branches[0].x = 0.0;
        let params = branch_params(&case);
        assert_abs_diff_eq!(params[0].g_series, 100.0, epsilon = 1e-10);
        assert_abs_diff_eq!(params[0].b_series, 0.0, epsilon = 1e-15);

        case.branches[0].in_service = false;
        assert!(branch_params(&case).is_empty());
    }

    #[test]
    fn empty_branch_list_gives_shunt_diagonal() {
        let mut case = two_bus();
        case.branches.clear();
        case.buses[1].g_shunt = 0.02;
        case.buses[1].b_shunt = 0.3;
        let y = build_ybus(&case);
        assert_eq!(y.g[(1, 1)], 0.02);
        assert_eq!(y.b[(1, 1)], 0.3);
        assert_eq!(y.g[(0, 1)], 0.0);
        assert_eq!(y.b[(0, 0)], 0.0);
    }

    #[test]
    fn row_sum_identity_on_bundled_cases() {
        // Diagonal = -(sum of off-diagonals) + every shunt contribution at the bus,
        // which for off-nominal taps includes the (1/t^2 - 1/t) series correction.
        for name in bundled::NAMES {
            let case = bundled::load(name).unwrap();
            let y = build_ybus(&case);
            let n = case.buses.len();
            let mut shunt = vec![Complex64::new(0.0, 0.0); n];
            for (i, bus) in case.buses.iter().enumerate() {
                shunt[i] += Complex64::new(bus.g_shunt, bus.b_shunt);
            }
            for p in branch_params(&case) {
                let ys = p.series();
                let bc = Complex64::new(0.0, p.b_half_charging);
                let t = Complex64::from_polar(p.tap, p.shift);
                // yff + yft and ytt + ytf are the shunt parts seen from each end
                shunt[p.from] += (ys + bc) / (p.tap * p.tap) - ys / t.conj();
                shunt[p.to] += ys + bc - ys / t;
            }
            for i in 0..n {
                let off: Complex64 = (0..n).filter(|&k| k != i).map(|k| y.get(i, k)).sum();
                let expected = -off + shunt[i];
                assert!((y.g[(i, i)] - expected.re).abs() < 1e-10, "{name} bus {i} G");
                assert!((y.b[(i, i)] - expected.im).abs() < 1e-10, "{name} bus {i} B");
            }
        }
    }

    #[test]
    fn symmetric_without_taps() {
        let case = bundled::load("case30").unwrap();
        assert!(case.branches.iter().all(|b| b.tap == 1.0 && b.shift == 0.0));
        let y = build_ybus(&case);
        assert_eq!(y.g, y.g.transpose());
        assert_eq!(y.b, y.b.transpose());
    }

    #[test]
    fn pattern_is_structurally_symmetric() {
        let case = bundled::load("case118").unwrap();
        let y = build_ybus(&case);
        for (i, row) in y.pattern.iter().enumerate() {
            for &k in row {
                assert!(y.pattern[k].contains(&i));
            }
        }
    }
}
