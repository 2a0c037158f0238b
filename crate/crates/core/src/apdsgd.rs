//! Accelerated stochastic gradient (ASGD) and its primal-dual variant (APDSGD)
//! with the Euclidean prox setup.
//!
//! Both methods keep three dual sequences. With `alpha_{k+1}` the larger root of
//! `2 L alpha^2 - alpha - C_k = 0` and `C_{k+1} = C_k + alpha_{k+1}`:
//!
//! ```text
//! lambda_{k+1} = (alpha_{k+1} zeta_k + C_k eta_k) / C_{k+1}
//! zeta_{k+1}   = zeta_k - alpha_{k+1} grad Phi(lambda_{k+1}, xi_{k+1})
//! eta_{k+1}    = (alpha_{k+1} zeta_{k+1} + C_k eta_k) / C_{k+1}
//! ```
//!
//! The primal-dual variant also averages the primal responses
//! `x_hat_{k+1} = (alpha_{k+1} x_{k+1} + C_k x_hat_k) / C_{k+1}`.

use crate::error::{Error, Result};

/// Larger root of `2 L a^2 - a - c_k = 0`.
pub fn next_alpha(c_k: f64, lipschitz: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::param("L", format!("must be positive, got {lipschitz}")));
    }
    if !(c_k >= 0.0) {
        return Err(Error::param("C_k", format!("must be nonnegative, got {c_k}")));
    }
    Ok((1.0 + (1.0 + 8.0 * lipschitz * c_k).sqrt()) / (4.0 * lipschitz))
}

/// Coefficients of one iteration, moving from `k` to `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Index of the new iterate, `k + 1`.
    pub index: usize,
    pub alpha: f64,
    /// `C_k`
    pub c_prev: f64,
    /// `C_{k+1}`
    pub c_next: f64,
}

impl Step {
    /// Weight of the fresh term in the `(alpha a + C_k b) / C_{k+1}` averages.
    pub fn fresh_weight(&self) -> f64 {
        self.alpha / self.c_next
    }

    /// Weight of the running term.
    pub fn carry_weight(&self) -> f64 {
        self.c_prev / self.c_next
    }

    /// `(alpha * fresh + C_k * carry) / C_{k+1}`, written in place into `carry`.
    pub fn blend_into(&self, fresh: &[f64], carry: &mut [f64]) {
        let (a, b) = (self.fresh_weight(), self.carry_weight());
        for (c, f) in carry.iter_mut().zip(fresh) {
            *c = a * f + b * *c;
        }
    }
}

/// Lazily generated `(alpha_k, C_k)` sequence for a fixed `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    lipschitz: f64,
    k: usize,
    c: f64,
}

impl StepSchedule {
    pub fn new(lipschitz: f64) -> Result<Self> {
        next_alpha(0.0, lipschitz)?;
        Ok(StepSchedule { lipschitz, k: 0, c: 0.0 })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Number of steps taken so far.
    pub fn k(&self) -> usize {
        self.k
    }

    /// `C_k` for the current `k`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Coefficients of the next step, without advancing.
    pub fn peek(&self) -> Step {
        let alpha = next_alpha(self.c, self.lipschitz).expect("validated at construction");
        Step {
            index: self.k + 1,
            alpha,
            c_prev: self.c,
            c_next: self.c + alpha,
        }
    }

    pub fn advance(&mut self) -> Step {
        let step = self.peek();
        self.k += 1;
        self.c = step.c_next;
        step
    }
}

impl Iterator for StepSchedule {
    type Item = Step;

    fn next(&mut self) -> Option<Step> {
        Some(self.advance())
    }
}

/// Stochastic first-order oracle for a smooth dual objective.
pub trait GradientOracle {
    fn gradient(&mut self, lambda: &[f64]) -> Vec<f64>;
}

/// Oracle for a dual of `min f(x) s.t. A x = b`. It returns the primal
/// response `x(-A^T lambda, xi)`; the dual gradient is `b - A x`.
pub trait PrimalDualOracle {
    fn primal_response(&mut self, lambda: &[f64]) -> Vec<f64>;

    /// `A x`.
    fn constraint_map(&self, x: &[f64]) -> Vec<f64>;

    /// `b`.
    fn rhs(&self) -> &[f64];

    fn gradient_from_primal(&self, x: &[f64]) -> Vec<f64> {
        self.rhs()
            .iter()
            .zip(self.constraint_map(x))
            .map(|(b, ax)| b - ax)
            .collect()
    }

    /// `max |grad - (b - A x)|`, zero when the two outputs are consistent.
    fn consistency_residual(&self, grad: &[f64], x: &[f64]) -> f64 {
        grad.iter()
            .zip(self.gradient_from_primal(x))
            .map(|(g, e)| (g - e).abs())
            .fold(0.0, f64::max)
    }
}

/// Iterates of ASGD/APDSGD.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub lambda: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    /// Empty for plain ASGD.
    pub x_hat: Vec<f64>,
    pub k: usize,
}

impl SolverState {
    /// `lambda_0 = zeta_0 = eta_0 = start`.
    pub fn new(start: Vec<f64>) -> Self {
        SolverState {
            zeta: start.clone(),
            eta: start.clone(),
            lambda: start,
            x_hat: Vec::new(),
            k: 0,
        }
    }

    /// Zero dual start and a zero primal average of dimension `primal_dim`.
    pub fn primal_dual(dual_dim: usize, primal_dim: usize) -> Self {
        let mut s = Self::new(vec![0.0; dual_dim]);
        s.x_hat = vec![0.0; primal_dim];
        s
    }

    fn check(&self, len: usize) -> Result<()> {
        let d = self.zeta.len();
        for v in [&self.lambda, &self.eta] {
            if v.len() != d {
                return Err(Error::Dimension { expected: d, actual: v.len() });
            }
        }
        if len != d {
            return Err(Error::Dimension { expected: d, actual: len });
        }
        Ok(())
    }
}

fn dual_update(state: &mut SolverState, step: &Step, grad: &[f64]) -> Result<()> {
    state.check(grad.len())?;
    for (z, g) in state.zeta.iter_mut().zip(grad) {
        *z -= step.alpha * g;
    }
    step.blend_into(&state.zeta, &mut state.eta);
    state.k = step.index;
    Ok(())
}

fn extrapolate(state: &mut SolverState, step: &Step) {
    let (a, b) = (step.fresh_weight(), step.carry_weight());
    for ((l, z), e) in state.lambda.iter_mut().zip(&state.zeta).zip(&state.eta) {
        *l = a * z + b * e;
    }
}

/// One ASGD iteration. Returns the step coefficients used.
pub fn asgd_step<O: GradientOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &mut O,
    schedule: &mut StepSchedule,
) -> Result<Step> {
    state.check(state.lambda.len())?;
    let step = schedule.advance();
    extrapolate(state, &step);
    let grad = oracle.gradient(&state.lambda);
    dual_update(state, &step, &grad)?;
    Ok(step)
}

/// One APDSGD iteration. Returns the step and the primal response it averaged in.
pub fn apdsgd_step<O: PrimalDualOracle + ?Sized>(
    state: &mut SolverState,
    oracle: &mut O,
    schedule: &mut StepSchedule,
) -> Result<(Step, Vec<f64>)> {
    state.check(state.lambda.len())?;
    let step = schedule.advance();
    extrapolate(state, &step);
    let x = oracle.primal_response(&state.lambda);
    if state.x_hat.is_empty() && state.k == 0 {
        state.x_hat = vec![0.0; x.len()];
    }
    if x.len() != state.x_hat.len() {
        return Err(Error::Dimension {
            expected: state.x_hat.len(),
            actual: x.len(),
        });
    }
    let grad = oracle.gradient_from_primal(&x);
    dual_update(state, &step, &grad)?;
    step.blend_into(&x, &mut state.x_hat);
    Ok((step, x))
}

/// Entropy-regularized linear objective over a product of simplices, coupled by a
/// consensus constraint between two blocks:
///
/// `min <c1, x1> + <c2, x2> + gamma (H(x1) + H(x2))  s.t.  x1 - x2 = 0`.
///
/// Its dual is smooth with `L = 2 / gamma`, and the primal response is a pair of softmaxes.
#[derive(Debug, Clone)]
pub struct TwoBlockConsensus {
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub gamma: f64,
    b: Vec<f64>,
}

impl TwoBlockConsensus {
    pub fn new(c1: Vec<f64>, c2: Vec<f64>, gamma: f64) -> Result<Self> {
        if c1.len() != c2.len() {
            return Err(Error::Dimension {
                expected: c1.len(),
                actual: c2.len(),
            });
        }
        let b = vec![0.0; c1.len()];
        Ok(TwoBlockConsensus { c1, c2, gamma, b })
    }

    pub fn lipschitz(&self) -> f64 {
        2.0 / self.gamma
    }

    /// `|A x - b|_2`.
    pub fn feasibility(&self, x: &[f64]) -> f64 {
        self.constraint_map(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl PrimalDualOracle for TwoBlockConsensus {
    fn primal_response(&mut self, lambda: &[f64]) -> Vec<f64> {
        let d = self.c1.len();
        // -A^T lambda = (-lambda, lambda)
        let neg: Vec<f64> = lambda.iter().map(|l| -l).collect();
        let mut x = vec![0.0; 2 * d];
        crate::dual::softmax_from_costs(&neg, &self.c1, self.gamma, &mut x[..d]);
        crate::dual::softmax_from_costs(lambda, &self.c2, self.gamma, &mut x[d..]);
        x
    }

    fn constraint_map(&self, x: &[f64]) -> Vec<f64> {
        let d = self.c1.len();
        (0..d).map(|i| x[i] - x[d + i]).collect()
    }

    fn rhs(&self) -> &[f64] {
        &self.b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl GradientOracle for Quadratic {
        fn gradient(&mut self, lambda: &[f64]) -> Vec<f64> {
            lambda.to_vec()
        }
    }

    struct Zero;
    impl GradientOracle for Zero {
        fn gradient(&mut self, lambda: &[f64]) -> Vec<f64> {
            vec![0.0; lambda.len()]
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(next_alpha(0.0, 1.0).unwrap(), 0.5);
        assert_eq!(next_alpha(1.0, 1.0).unwrap(), 1.0);
        assert!(next_alpha(1.0, 0.0).is_err());
        assert!(next_alpha(-1.0, 1.0).is_err());
        for &(c, l) in &[(0.0, 0.1), (3.7, 40.0), (1e6, 0.5), (123.4, 1.0)] {
            let a = next_alpha(c, l).unwrap();
            let resid = 2.0 * l * a * a - a - c;
            assert!(resid.abs() <= 1e-12 * (2.0 * l * a * a).max(1.0));
        }
    }

    #[test]
    fn schedule_first_steps() {
        let mut s = StepSchedule::new(2.0).unwrap();
        let first = s.advance();
        assert_eq!(first.c_prev, 0.0);
        assert_eq!(first.c_next, first.alpha);
        assert_eq!(first.c_next, 1.0 / 4.0);
        assert_eq!(first.fresh_weight(), 1.0);
        assert_eq!(first.carry_weight(), 0.0);
        let second = s.advance();
        assert_eq!(second.index, 2);
        assert_eq!(second.c_prev, first.c_next);
    }

    #[test]
    fn first_step_keeps_start() {
        let mut st = SolverState::new(vec![1.5, -2.0]);
        let mut sched = StepSchedule::new(1.0).unwrap();
        let start = st.lambda.clone();
        // the first extrapolation averages zeta_0 with zero weight on eta_0
        let step = sched.peek();
        extrapolate(&mut st, &step);
        assert_eq!(st.lambda, start);
        asgd_step(&mut st, &mut Zero, &mut sched).unwrap();
        assert_eq!(st.lambda, start);
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut st = SolverState::new(vec![0.3, 0.7, -1.0]);
        let start = st.clone();
        let mut sched = StepSchedule::new(3.0).unwrap();
        for _ in 0..100 {
            asgd_step(&mut st, &mut Zero, &mut sched).unwrap();
        }
        for v in [&st.lambda, &st.zeta, &st.eta] {
            for (a, b) in v.iter().zip(&start.lambda) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(st.k, 100);
    }

    #[test]
    fn quadratic_rate() {
        let mut st = SolverState::new(vec![1.0]);
        let mut sched = StepSchedule::new(1.0).unwrap();
        let phi = |x: f64| 0.5 * x * x;
        let mut history = vec![];
        for _ in 0..50 {
            asgd_step(&mut st, &mut Quadratic, &mut sched).unwrap();
            history.push(phi(st.eta[0]));
            assert!(phi(st.eta[0]) <= phi(1.0));
        }
        assert!(phi(st.eta[0]) <= 2.0 / sched.c());
    }

    #[test]
    fn dimension_mismatch() {
        let mut st = SolverState::new(vec![0.0; 3]);
        st.eta.pop();
        let mut sched = StepSchedule::new(1.0).unwrap();
        assert!(matches!(asgd_step(&mut st, &mut Quadratic, &mut sched), Err(Error::Dimension { .. })));
    }

    struct Constant(Vec<f64>);
    impl PrimalDualOracle for Constant {
        fn primal_response(&mut self, _: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
        fn constraint_map(&self, x: &[f64]) -> Vec<f64> {
            vec![x.iter().sum::<f64>()]
        }
        fn rhs(&self) -> &[f64] {
            &[1.0]
        }
    }

    #[test]
    fn constant_primal_response() {
        let mut o = Constant(vec![0.2, 0.3, 0.5]);
        let mut st = SolverState::primal_dual(1, 3);
        let mut sched = StepSchedule::new(5.0).unwrap();
        for _ in 0..40 {
            apdsgd_step(&mut st, &mut o, &mut sched).unwrap();
            for (a, b) in st.x_hat.iter().zip(&o.0) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn primal_average_identity_and_hull() {
        let mut o = TwoBlockConsensus::new(vec![0.0, 1.0, 0.3], vec![0.5, 0.0, 0.9], 0.2).unwrap();
        let mut st = SolverState::primal_dual(3, 6);
        let mut sched = StepSchedule::new(o.lipschitz()).unwrap();
        let mut log = vec![];
        for _ in 0..60 {
            let (step, x) = apdsgd_step(&mut st, &mut o, &mut sched).unwrap();
            let grad = o.gradient_from_primal(&x);
            assert!(o.consistency_residual(&grad, &x) == 0.0);
            log.push((step.alpha, x));
        }
        let c_n = sched.c();
        let alpha_sum: f64 = log.iter().map(|(a, _)| a).sum();
        assert!((alpha_sum - c_n).abs() <= 1e-10 * c_n);
        for j in 0..6 {
            let weighted: f64 = log.iter().map(|(a, x)| a * x[j]).sum();
            assert!((c_n * st.x_hat[j] - weighted).abs() <= 1e-10 * weighted.abs().max(1e-300));
            let lo = log.iter().map(|(_, x)| x[j]).fold(f64::INFINITY, f64::min);
            let hi = log.iter().map(|(_, x)| x[j]).fold(f64::NEG_INFINITY, f64::max);
            assert!(st.x_hat[j] >= lo - 1e-12 && st.x_hat[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn two_block_feasibility_decays_fast() {
        let mut errs = vec![];
        for n in [50usize, 100, 200, 400] {
            let mut o = TwoBlockConsensus::new(vec![0.0, 1.0, 0.4, 0.7], vec![0.8, 0.1, 0.0, 0.6], 0.5).unwrap();
            let mut st = SolverState::primal_dual(4, 8);
            let mut sched = StepSchedule::new(o.lipschitz()).unwrap();
            for _ in 0..n {
                apdsgd_step(&mut st, &mut o, &mut sched).unwrap();
            }
            errs.push(o.feasibility(&st.x_hat));
        }
        for w in errs.windows(2) {
            assert!(w[1] / w[0] <= 0.6, "{errs:?}");
        }
    }
}
