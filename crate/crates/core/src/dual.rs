//! Semi-discrete entropic optimal transport: the conjugate of the regularized
//! transport cost `W_{gamma,mu}(p)` as a function of one agent's dual block.
//!
//! For a measure `mu` and dual block `lam`,
//!
//! ```text
//! W*(lam)      = E_{Y~mu} gamma * log sum_l exp((lam_l - c_l(Y)) / gamma)
//! grad W*(lam) = E_{Y~mu} softmax((lam - c(Y)) / gamma)
//! ```
//!
//! The `-gamma E log q(Y)` term of the conjugate does not depend on `lam` and is
//! dropped from every reported value. All exponentials are max-shifted.

use rand::Rng;

use crate::error::{Error, Result};
use crate::measures::{CostFunction, MeasureOracle, Point, SupportGrid};

/// Entropic regularization strength, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParam(f64);

impl RegParam {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(RegParam(gamma))
        } else {
            Err(Error::param("gamma", format!("must be positive and finite, got {gamma}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `out = softmax((lam - costs) / gamma)`; returns `gamma * logsumexp((lam - costs) / gamma)`.
pub fn softmax_from_costs(lam: &[f64], costs: &[f64], gamma: f64, out: &mut [f64]) -> f64 {
    debug_assert_eq!(lam.len(), costs.len());
    debug_assert_eq!(lam.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for ((o, l), c) in out.iter_mut().zip(lam).zip(costs) {
        *o = (l - c) / gamma;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    gamma * (max + sum.ln())
}

/// `gamma * logsumexp((lam - costs) / gamma)` without forming the softmax.
pub fn log_sum_exp_from_costs(lam: &[f64], costs: &[f64], gamma: f64) -> f64 {
    let max = lam
        .iter()
        .zip(costs)
        .map(|(l, c)| (l - c) / gamma)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = lam.iter().zip(costs).map(|(l, c)| ((l - c) / gamma - max).exp()).sum();
    gamma * (max + sum.ln())
}

/// Everything needed to evaluate one agent's conjugate: support, cost and `gamma`.
#[derive(Debug, Clone)]
pub struct EntropicDual {
    grid: SupportGrid,
    cost: CostFunction,
    gamma: RegParam,
}

impl EntropicDual {
    pub fn new(grid: SupportGrid, cost: CostFunction, gamma: RegParam) -> Self {
        EntropicDual { grid, cost, gamma }
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &SupportGrid {
        &self.grid
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.get()
    }

    fn check_block(&self, lam: &[f64]) -> Result<()> {
        if lam.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                actual: lam.len(),
            });
        }
        Ok(())
    }

    /// The transport weights `p(lam, y)` for a single sample `y`.
    pub fn softmax_transport(&self, lam: &[f64], y: &Point) -> Result<Vec<f64>> {
        self.check_block(lam)?;
        let costs = self.cost.cost_vector(&self.grid, y)?;
        let mut out = vec![0.0; self.n()];
        softmax_from_costs(lam, &costs, self.gamma(), &mut out);
        Ok(out)
    }

    /// Exact gradient of the conjugate for a discrete measure.
    pub fn exact_grad(&self, oracle: &MeasureOracle, lam: &[f64]) -> Result<Vec<f64>> {
        self.check_block(lam)?;
        let d = oracle.as_discrete().ok_or(Error::NotDiscrete)?;
        let n = self.n();
        let mut grad = vec![0.0; n];
        let mut costs = vec![0.0; n];
        let mut soft = vec![0.0; n];
        for (atom, w) in d.atoms().iter().zip(d.weights()) {
            self.cost.cost_vector_into(&self.grid, atom, &mut costs)?;
            softmax_from_costs(lam, &costs, self.gamma(), &mut soft);
            for (g, s) in grad.iter_mut().zip(&soft) {
                *g += w * s;
            }
        }
        Ok(grad)
    }

    /// Mini-batch estimate `(1/M) sum_r p(lam, Y_r)` with `Y_r` drawn sequentially from `rng`.
    pub fn stochastic_grad<R: Rng + ?Sized>(
        &self,
        oracle: &MeasureOracle,
        lam: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_block(lam)?;
        if batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        let n = self.n();
        let mut grad = vec![0.0; n];
        let mut costs = vec![0.0; n];
        let mut soft = vec![0.0; n];
        for _ in 0..batch {
            let y = oracle.sample(rng);
            self.cost.cost_vector_into(&self.grid, &y, &mut costs)?;
            softmax_from_costs(lam, &costs, self.gamma(), &mut soft);
            for (g, s) in grad.iter_mut().zip(&soft) {
                *g += s;
            }
        }
        let inv = 1.0 / batch as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(grad)
    }

    /// Conjugate value, constant-dropped. Exact finite sum for discrete
    /// measures (`batch` and `rng` unused), Monte Carlo over `batch` samples otherwise.
    pub fn dual_value<R: Rng + ?Sized>(
        &self,
        oracle: &MeasureOracle,
        lam: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_block(lam)?;
        if oracle.as_discrete().is_some() {
            return self.exact_dual_value(oracle, lam);
        }
        self.sampled_dual_value(oracle, lam, batch, rng)
    }

    /// Monte Carlo conjugate value over `batch` samples, for any measure.
    pub fn sampled_dual_value<R: Rng + ?Sized>(
        &self,
        oracle: &MeasureOracle,
        lam: &[f64],
        batch: usize,
        rng: &mut R,
    ) -> Result<f64> {
        self.check_block(lam)?;
        if batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        let mut costs = vec![0.0; self.n()];
        let mut total = 0.0;
        for _ in 0..batch {
            let y = oracle.sample(rng);
            self.cost.cost_vector_into(&self.grid, &y, &mut costs)?;
            total += log_sum_exp_from_costs(lam, &costs, self.gamma());
        }
        Ok(total / batch as f64)
    }

    pub fn exact_dual_value(&self, oracle: &MeasureOracle, lam: &[f64]) -> Result<f64> {
        self.check_block(lam)?;
        let d = oracle.as_discrete().ok_or(Error::NotDiscrete)?;
        let mut costs = vec![0.0; self.n()];
        let mut total = 0.0;
        for (atom, w) in d.atoms().iter().zip(d.weights()) {
            self.cost.cost_vector_into(&self.grid, atom, &mut costs)?;
            total += w * log_sum_exp_from_costs(lam, &costs, self.gamma());
        }
        Ok(total)
    }

    /// Value, gradient and Hessian of the conjugate for a discrete measure.
    /// The Hessian is `(1/gamma) sum_a w_a (diag(s_a) - s_a s_a^T)`, row-major.
    pub fn exact_second_order(&self, oracle: &MeasureOracle, lam: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_block(lam)?;
        let d = oracle.as_discrete().ok_or(Error::NotDiscrete)?;
        let n = self.n();
        let gamma = self.gamma();
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        let mut costs = vec![0.0; n];
        let mut soft = vec![0.0; n];
        for (atom, w) in d.atoms().iter().zip(d.weights()) {
            self.cost.cost_vector_into(&self.grid, atom, &mut costs)?;
            value += w * softmax_from_costs(lam, &costs, gamma, &mut soft);
            for i in 0..n {
                grad[i] += w * soft[i];
                let wi = w * soft[i] / gamma;
                hess[i * n + i] += wi;
                for j in 0..n {
                    hess[i * n + j] -= wi * soft[j];
                }
            }
        }
        Ok((value, grad, hess))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{CostKind, DiscreteMeasure};
    use crate::rng::rng_stream;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_dual(points: &[f64], gamma: f64) -> EntropicDual {
        let grid = SupportGrid::new(points.iter().map(|&x| Point::Line(x)).collect()).unwrap();
        EntropicDual::new(grid, CostFunction::new(CostKind::SquaredEuclidean), RegParam::new(gamma).unwrap())
    }

    fn rand_discrete(rng: &mut ChaCha8Rng, atoms: usize) -> MeasureOracle {
        let a = (0..atoms).map(|_| Point::Line(rng.random_range(-1.5..1.5))).collect();
        let w = (0..atoms).map(|_| rng.random_range(0.05..1.0)).collect();
        MeasureOracle::discrete(a, w).unwrap()
    }

    #[test]
    fn reg_param_validation() {
        assert!(RegParam::new(0.0).is_err());
        assert!(RegParam::new(-1.0).is_err());
        assert!(RegParam::new(f64::NAN).is_err());
        assert_eq!(RegParam::new(0.1).unwrap().get(), 0.1);
    }

    #[test]
    fn softmax_examples() {
        let mut out = [0.0; 4];
        softmax_from_costs(&[0.0; 4], &[2.0; 4], 0.3, &mut out);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));

        let gamma = 0.7;
        let mut out = [0.0; 2];
        softmax_from_costs(&[gamma * 3f64.ln(), 0.0], &[0.0, 0.0], gamma, &mut out);
        assert!((out[0] - 0.75).abs() < 1e-14 && (out[1] - 0.25).abs() < 1e-14);

        let v = softmax_from_costs(&[1000.0, 0.0], &[0.0, 0.0], 0.1, &mut out);
        assert_eq!(out, [1.0, 0.0]);
        assert!(v.is_finite());
    }

    #[test]
    fn softmax_transport_through_grid() {
        let d = line_dual(&[-1.0, 1.0], 0.5);
        let w = d.softmax_transport(&[0.0, 0.0], &Point::Line(0.0)).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!(d.softmax_transport(&[0.0], &Point::Line(0.0)).is_err());
    }

    #[test]
    fn exact_grad_examples() {
        let d = line_dual(&[-1.0, 0.0, 2.0], 0.2);
        let lam = [0.3, -0.1, 0.05];
        let point = MeasureOracle::Discrete(DiscreteMeasure::point_mass(Point::Line(0.4)));
        assert_eq!(
            d.exact_grad(&point, &lam).unwrap(),
            d.softmax_transport(&lam, &Point::Line(0.4)).unwrap()
        );

        let sym = line_dual(&[-1.0, 1.0], 0.2);
        let two = MeasureOracle::discrete(vec![Point::Line(-3.0), Point::Line(3.0)], vec![1.0, 1.0]).unwrap();
        let g = sym.exact_grad(&two, &[0.0, 0.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-12 && (g[1] - 0.5).abs() < 1e-12);

        assert!(matches!(
            d.exact_grad(&MeasureOracle::gaussian(0.0, 1.0).unwrap(), &lam),
            Err(Error::NotDiscrete)
        ));
    }

    #[test]
    fn exact_grad_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = line_dual(&[-1.0, -0.2, 0.5, 1.3], 0.3);
        let o = rand_discrete(&mut rng, 3);
        let lam: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let exact = d.exact_grad(&o, &lam).unwrap();
        // Monte Carlo oracle: average softmax over independent samples
        let k = 1_000_000;
        let mut s = rng_stream(77, 0, 0);
        let mut mean = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..k {
            let y = o.sample(&mut s);
            let p = d.softmax_transport(&lam, &y).unwrap();
            for l in 0..4 {
                mean[l] += p[l];
                sq[l] += p[l] * p[l];
            }
        }
        for l in 0..4 {
            let m = mean[l] / k as f64;
            let sd = (sq[l] / k as f64 - m * m).max(0.0).sqrt();
            assert!((m - exact[l]).abs() <= 3.0 * sd / (k as f64).sqrt() + 1e-12, "component {l}");
        }
    }

    #[test]
    fn stochastic_grad_definitional_cases() {
        let d = line_dual(&[-1.0, 0.0, 1.0], 0.25);
        let lam = [0.1, 0.2, -0.3];
        let point = MeasureOracle::Discrete(DiscreteMeasure::point_mass(Point::Line(0.3)));
        let exact = d.exact_grad(&point, &lam).unwrap();
        let mut rng = rng_stream(0, 0, 0);
        for m in [1, 7, 50] {
            let g = d.stochastic_grad(&point, &lam, m, &mut rng).unwrap();
            for (a, b) in g.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-14);
            }
        }

        let gauss = MeasureOracle::gaussian(0.2, 0.5).unwrap();
        let mut r1 = rng_stream(4, 1, 1);
        let mut r2 = r1.clone();
        let g = d.stochastic_grad(&gauss, &lam, 1, &mut r1).unwrap();
        let y = gauss.sample(&mut r2);
        assert_eq!(g, d.softmax_transport(&lam, &y).unwrap());
        assert!(d.stochastic_grad(&gauss, &lam, 0, &mut r1).is_err());
    }

    #[test]
    fn dual_value_examples() {
        let gamma = 0.4;
        let mut rng = rng_stream(0, 0, 0);

        // equal exponents everywhere: lam equal to the cost vector
        let grid = SupportGrid::new(vec![Point::Circle(0.0), Point::Circle(2.0), Point::Circle(4.0)]).unwrap();
        let circ = EntropicDual::new(grid, CostFunction::new(CostKind::SquaredAngular), RegParam::new(gamma).unwrap());
        let pm = MeasureOracle::Discrete(DiscreteMeasure::point_mass(Point::Circle(1.0)));
        let costs = circ.cost().cost_vector(circ.grid(), &Point::Circle(1.0)).unwrap();
        let v = circ.dual_value(&pm, &costs, 1, &mut rng).unwrap();
        assert!((v - gamma * 3f64.ln()).abs() < 1e-12);

        let one = line_dual(&[0.0], gamma);
        let pm = MeasureOracle::Discrete(DiscreteMeasure::point_mass(Point::Line(0.7)));
        let v = one.dual_value(&pm, &[1.3], 1, &mut rng).unwrap();
        assert!((v - (1.3 - 0.49)).abs() < 1e-12);

        let d = line_dual(&[0.0, 1.0, 2.0], gamma);
        let two = MeasureOracle::discrete(vec![Point::Line(0.2), Point::Line(1.9)], vec![0.3, 0.7]).unwrap();
        let lam = [0.2, -0.4, 0.1];
        let base = d.dual_value(&two, &lam, 1, &mut rng).unwrap();
        let shifted: Vec<f64> = lam.iter().map(|l| l + 2.5).collect();
        assert!((d.dual_value(&two, &shifted, 1, &mut rng).unwrap() - base - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &gamma in &[0.05, 0.1, 1.0] {
            let d = line_dual(&[-1.0, -0.3, 0.4, 1.1, 1.5], gamma);
            let o = rand_discrete(&mut rng, 4);
            let lam: Vec<f64> = (0..5).map(|_| rng.random_range(-0.3..0.3)).collect();
            let g = d.exact_grad(&o, &lam).unwrap();
            let h = 1e-5 * lam.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            for l in 0..5 {
                let mut plus = lam.clone();
                let mut minus = lam.clone();
                plus[l] += h;
                minus[l] -= h;
                let fd = (d.exact_dual_value(&o, &plus).unwrap() - d.exact_dual_value(&o, &minus).unwrap()) / (2.0 * h);
                assert!((fd - g[l]).abs() <= 1e-4 * g[l].abs().max(1e-3), "gamma {gamma} comp {l}: {fd} vs {}", g[l]);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = line_dual(&[-1.0, 0.0, 0.5, 1.0], 0.5);
        let o = rand_discrete(&mut rng, 3);
        let lam = [0.1, -0.2, 0.3, 0.0];
        let (_, _, hess) = d.exact_second_order(&o, &lam).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut plus = lam;
            let mut minus = lam;
            plus[j] += h;
            minus[j] -= h;
            let gp = d.exact_grad(&o, &plus).unwrap();
            let gm = d.exact_grad(&o, &minus).unwrap();
            for i in 0..4 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((fd - hess[i * 4 + j]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(
            lam in prop::collection::vec(-20.0f64..20.0, 5),
            costs in prop::collection::vec(0.0f64..30.0, 5),
            t in -100.0f64..100.0,
            gamma in 0.05f64..2.0,
        ) {
            let mut a = [0.0; 5];
            let mut b = [0.0; 5];
            let va = softmax_from_costs(&lam, &costs, gamma, &mut a);
            let shifted: Vec<f64> = lam.iter().map(|l| l + t).collect();
            let vb = softmax_from_costs(&shifted, &costs, gamma, &mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((vb - va - t).abs() <= 1e-9 * (1.0 + t.abs() + va.abs()));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
