use crate::error::Result;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference half step.
    pub perturbation: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator, multiplied by
    /// `max(1, |f(x)|)`. Finite-difference noise grows with the magnitude of
    /// the function value, so components whose gradient is below that noise
    /// are judged by absolute error instead.
    pub floor: f64,
    /// Check at most this many evenly spaced entries of each parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            perturbation: 1e-3,
            tolerance: 1e-3,
            floor: 1e-3,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, entry, analytic, numeric)` of the worst component.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error with a denominator floor.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of a scalar function against central finite
/// differences.
///
/// `f` must build the same graph for every call; it receives the parameter
/// handles in the order of `params`.
pub fn check_gradients<T, F>(f: F, params: &[Tensor<T>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<T>]| -> Result<(Tape<T>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(params)?;
    let grads = tape.backward(out)?;
    let floor = cfg.floor * tape.value(out).item().wide().abs().max(1.0);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            grads
                .wide(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.len()])
        })
        .collect();

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for pi in 0..params.len() {
        let len = params[pi].len();
        let picks: Vec<usize> = match cfg.max_entries_per_param {
            Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
            _ => (0..len).collect(),
        };
        for e in picks {
            let x = params[pi].data()[e];
            let up = T::of(x.wide() + cfg.perturbation);
            let down = T::of(x.wide() - cfg.perturbation);
            work[pi].data_mut()[e] = up;
            let (t1, _, o1) = eval(&work)?;
            work[pi].data_mut()[e] = down;
            let (t2, _, o2) = eval(&work)?;
            work[pi].data_mut()[e] = x;

            let step = up.wide() - down.wide();
            let numeric = (t1.value(o1).item().wide() - t2.value(o2).item().wide()) / step;
            let a = analytic[pi][e];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, e, a, numeric));
            }
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}
