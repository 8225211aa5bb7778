//! Problem instances: plant, weights, noise statistics, horizon and channel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_RTOL, SYMMETRY_RTOL};

/// Process-noise variance used by [`Problem::boeing747`] unless overridden.
pub const BOEING_DEFAULT_SIGMA2: f64 = 1.0;

/// Communication penalty charged per transmission attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// Same charge for every attempt.
    Single(f64),
    /// Separate charges for failed and successful attempts.
    Split { fail: f64, success: f64 },
}

impl Penalty {
    /// The single per-attempt charge that is equivalent in expectation.
    pub fn effective(&self, p: f64) -> f64 {
        match *self {
            Penalty::Single(lambda) => lambda,
            Penalty::Split { fail, success } => effective_lambda(fail, success, p),
        }
    }

    /// Realized charge for one attempt given its outcome.
    pub fn charge(&self, delivered: bool) -> f64 {
        match *self {
            Penalty::Single(lambda) => lambda,
            Penalty::Split { fail, success } => {
                if delivered {
                    success
                } else {
                    fail
                }
            }
        }
    }
}

/// Expected per-attempt charge when a failed attempt costs `lambda_fail` and
/// a delivered one costs `lambda_success`.
pub fn effective_lambda(lambda_fail: f64, lambda_success: f64, p: f64) -> f64 {
    lambda_fail * (1.0 - p) + lambda_success * p
}

/// A validated scheduling problem. Time-invariant plant, finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub horizon: usize,
    pub p: f64,
    pub penalty: Penalty,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Per-attempt penalty used by every scheduling computation.
    pub fn lambda(&self) -> f64 {
        self.penalty.effective(self.p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() {
            return invalid("A must be square");
        }
        if self.b.nrows() != n {
            return invalid(format!("B must have {n} rows"));
        }
        if self.b.ncols() == 0 {
            return invalid("B must have at least one column");
        }
        let m = self.b.ncols();
        for (name, mat) in [
            ("Q", &self.q),
            ("Q_T", &self.q_terminal),
            ("Sigma_w", &self.sigma_w),
            ("Sigma_0", &self.sigma0),
        ] {
            if mat.nrows() != n || mat.ncols() != n {
                return invalid(format!("{name} must be {n}x{n}"));
            }
        }
        if self.r.nrows() != m || self.r.ncols() != m {
            return invalid(format!("R must be {m}x{m}"));
        }
        if self.x0_mean.len() != n {
            return invalid(format!("x0_mean must have length {n}"));
        }
        let all_finite = [
            &self.a,
            &self.b,
            &self.q,
            &self.r,
            &self.q_terminal,
            &self.sigma_w,
            &self.sigma0,
        ]
        .iter()
        .all(|mat| mat.iter().all(|v| v.is_finite()))
            && self.x0_mean.iter().all(|v| v.is_finite());
        if !all_finite {
            return invalid("matrices must be finite");
        }
        for (name, mat) in [
            ("Q", &self.q),
            ("Q_T", &self.q_terminal),
            ("Sigma_w", &self.sigma_w),
            ("Sigma_0", &self.sigma0),
        ] {
            if !linalg::is_symmetric(mat, SYMMETRY_RTOL) {
                return invalid(format!("{name} not symmetric"));
            }
            if !linalg::is_psd(mat, PSD_RTOL) {
                return invalid(format!("{name} not positive semidefinite"));
            }
        }
        if !linalg::is_symmetric(&self.r, SYMMETRY_RTOL) {
            return invalid("R not symmetric");
        }
        if !linalg::is_pd(&self.r) {
            return invalid("R not positive definite");
        }
        if self.horizon < 1 {
            return invalid("T must be at least 1");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return invalid("p must lie in (0,1]");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self.penalty {
            Penalty::Single(l) if !positive(l) => return invalid("lambda must be positive"),
            Penalty::Split { fail, .. } if !positive(fail) => {
                return invalid("lambda_fail must be positive")
            }
            Penalty::Split { success, .. } if !positive(success) => {
                return invalid("lambda_success must be positive")
            }
            _ => {}
        }
        Ok(())
    }

    /// Same instance with a different channel success probability.
    pub fn with_p(&self, p: f64) -> Result<Problem> {
        let out = Problem { p, ..self.clone() };
        out.validate()?;
        Ok(out)
    }

    pub fn with_penalty(&self, penalty: Penalty) -> Result<Problem> {
        let out = Problem {
            penalty,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Problem> {
        let out = Problem {
            horizon,
            ..self.clone()
        };
        out.validate()?;
        Ok(out)
    }

    /// Linearized longitudinal Boeing-747 dynamics (1 s sampling) with
    /// `Sigma_w = sigma2 * I`.
    pub fn boeing747_with_sigma2(sigma2: f64) -> Problem {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            0.99,  0.03, -0.02, -0.32,
            0.01,  0.47,  4.70,  0.00,
            0.02, -0.06,  0.40,  0.00,
            0.01, -0.04,  0.72,  0.99,
        ]);
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
             0.01, 0.99,
            -3.44, 1.66,
            -0.83, 0.44,
            -0.47, 0.25,
        ]);
        let eye = DMatrix::<f64>::identity(4, 4);
        Problem {
            a,
            b,
            q: &eye * 5.0,
            r: DMatrix::identity(2, 2),
            q_terminal: &eye * 5.0,
            sigma_w: &eye * sigma2,
            x0_mean: DVector::from_element(4, 0.5),
            sigma0: &eye * 0.4,
            horizon: 50,
            p: 0.7,
            penalty: Penalty::Single(100.0),
        }
    }

    /// The Boeing-747 benchmark with the default noise variance.
    pub fn boeing747() -> Problem {
        Self::boeing747_with_sigma2(BOEING_DEFAULT_SIGMA2)
    }

    pub fn from_json(text: &str) -> Result<Problem> {
        let cfg: ProblemConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.into_problem()
    }

    pub fn to_json(&self) -> String {
        let cfg = ProblemConfig::from(self);
        serde_json::to_string_pretty(&cfg).expect("problem config serializes")
    }
}

/// Parse and validate a JSON problem description.
pub fn load_problem(config_text: &str) -> Result<Problem> {
    Problem::from_json(config_text)
}

pub fn boeing747_preset() -> Problem {
    Problem::boeing747()
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

/// On-disk JSON layout. Matrices are row-major arrays of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct ProblemConfig {
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    Q_T: Vec<Vec<f64>>,
    Sigma_w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    Sigma_0: Option<Vec<Vec<f64>>>,
    T: usize,
    p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_fail: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_success: Option<f64>,
}

impl ProblemConfig {
    fn into_problem(self) -> Result<Problem> {
        let matrix = |name: &str, rows: &[Vec<f64>]| {
            linalg::from_rows(rows)
                .ok_or_else(|| Error::Validation(format!("{name} has ragged rows")))
        };
        let a = matrix("A", &self.A)?;
        let n = a.nrows();
        let penalty = match (self.lambda, self.lambda_fail, self.lambda_success) {
            (Some(l), None, None) => Penalty::Single(l),
            (None, Some(fail), Some(success)) => Penalty::Split { fail, success },
            _ => {
                return invalid(
                    "penalty: give either lambda or both lambda_fail and lambda_success",
                )
            }
        };
        let problem = Problem {
            b: matrix("B", &self.B)?,
            q: matrix("Q", &self.Q)?,
            r: matrix("R", &self.R)?,
            q_terminal: matrix("Q_T", &self.Q_T)?,
            sigma_w: matrix("Sigma_w", &self.Sigma_w)?,
            x0_mean: self
                .x0_mean
                .map(DVector::from_vec)
                .unwrap_or_else(|| DVector::zeros(n)),
            sigma0: match &self.Sigma_0 {
                Some(rows) => matrix("Sigma_0", rows)?,
                None => DMatrix::zeros(n, n),
            },
            a,
            horizon: self.T,
            p: self.p,
            penalty,
        };
        problem.validate()?;
        Ok(problem)
    }
}

impl From<&Problem> for ProblemConfig {
    fn from(p: &Problem) -> Self {
        let (lambda, lambda_fail, lambda_success) = match p.penalty {
            Penalty::Single(l) => (Some(l), None, None),
            Penalty::Split { fail, success } => (None, Some(fail), Some(success)),
        };
        ProblemConfig {
            A: linalg::to_rows(&p.a),
            B: linalg::to_rows(&p.b),
            Q: linalg::to_rows(&p.q),
            R: linalg::to_rows(&p.r),
            Q_T: linalg::to_rows(&p.q_terminal),
            Sigma_w: linalg::to_rows(&p.sigma_w),
            x0_mean: Some(p.x0_mean.iter().copied().collect()),
            Sigma_0: Some(linalg::to_rows(&p.sigma0)),
            T: p.horizon,
            p: p.p,
            lambda,
            lambda_fail,
            lambda_success,
        }
    }
}
