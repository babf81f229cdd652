use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that parameters whose true
/// gradient is zero compare on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(param, flat index, analytic, numeric)` at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares analytic gradients from `f` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every element of every parameter.
///
/// `f` returns the objective value and its gradients. It is evaluated twice
/// at the starting point first; differing values are reported as
/// [`Error::NonDeterministic`].
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config("grad_check eps must be positive".into()));
    }
    let (v1, analytic) = f(params)?;
    let (v2, _) = f(params)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic { first: v1, second: v2 });
    }

    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = work.get(&name)?.data()[i];
            work.get_mut(&name)?.data_mut()[i] = orig + eps;
            let (plus, _) = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig - eps;
            let (minus, _) = f(&work)?;
            work.get_mut(&name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    report.passed = report.max_relative_error <= tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::numerics::{Matrix, Tape};

    #[test]
    fn square_polynomial() {
        let mut p = ParamStore::new();
        p.insert("theta", Matrix::scalar(3.0)).unwrap();
        let f = |p: &ParamStore| {
            let mut t = Tape::new();
            let x = t.param(p, "theta")?;
            let y = t.mul_row(x, x)?;
            Ok((t.value(y).item(), t.backward(y, 1.0)?))
        };
        let (_, g) = f(&p).unwrap();
        assert_eq!(g.get("theta").unwrap().item(), 6.0);
        let r = grad_check(f, &p, 1e-5, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn nondeterministic_objective_is_rejected() {
        let mut p = ParamStore::new();
        p.insert("theta", Matrix::scalar(1.0)).unwrap();
        let counter = Cell::new(0u64);
        let f = |_: &ParamStore| {
            counter.set(counter.get() + 1);
            // xorshift stream standing in for an unseeded random source
            let mut x = counter.get().wrapping_mul(0x9E37_79B9_7F4A_7C15);
            x ^= x >> 29;
            Ok(((x % 1000) as f64, Gradients::default()))
        };
        assert!(matches!(grad_check(f, &p, 1e-5, 1e-6), Err(Error::NonDeterministic { .. })));
    }
}
