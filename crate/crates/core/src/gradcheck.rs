//! Finite-difference gradient checking: the project-wide correctness oracle
//! for every explicit backward pass.

/// Central-difference step and the floor used in the relative-error
/// denominator max(|analytic|, |numeric|, floor).
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub denom_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-4,
            denom_floor: 1e-8,
        }
    }
}

impl GradCheck {
    /// Max relative error between `analytic` and central differences of `f`
    /// at `point`, over every coordinate.
    pub fn max_rel_err(
        &self,
        f: &mut dyn FnMut(&[f64]) -> f64,
        point: &[f64],
        analytic: &[f64],
    ) -> f64 {
        let indices: Vec<usize> = (0..point.len()).collect();
        self.max_rel_err_at(f, point, analytic, &indices)
    }

    /// Same as [`max_rel_err`](Self::max_rel_err) but restricted to the given
    /// coordinates — used for large parameter sets where a full sweep is
    /// prohibitively many function evaluations.
    pub fn max_rel_err_at(
        &self,
        f: &mut dyn FnMut(&[f64]) -> f64,
        point: &[f64],
        analytic: &[f64],
        indices: &[usize],
    ) -> f64 {
        assert_eq!(point.len(), analytic.len());
        let mut x = point.to_vec();
        let mut worst: f64 = 0.0;
        for &i in indices {
            let orig = x[i];
            x[i] = orig + self.step;
            let f_plus = f(&x);
            x[i] = orig - self.step;
            let f_minus = f(&x);
            x[i] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * self.step);
            let denom = analytic[i].abs().max(numeric.abs()).max(self.denom_floor);
            worst = worst.max((numeric - analytic[i]).abs() / denom);
        }
        worst
    }
}
