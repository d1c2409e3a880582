//! Binary C-SVM with an RBF kernel, solved in the dual by sequential minimal
//! optimization with second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::PropagationError;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            eps: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Dual solution: `alpha[i]` per training point, decision
/// `f(x) = sum_i alpha_i y_i K(x_i, x) - rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

fn gram(x: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        k[i][i] = 1.0;
        for j in 0..i {
            let v = rbf(gamma, &x[i], &x[j]);
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Solves the dual for labels `y` in {-1, +1}.
pub fn solve(
    x: &[Vec<f64>],
    y: &[f64],
    gamma: f64,
    params: SvmParams,
    label: &str,
) -> Result<SvmSolution, PropagationError> {
    let n = x.len();
    let k = gram(x, gamma);
    let c = params.c;
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a'Qa - e'a, Q_ij = y_i y_j K_ij
    let mut g = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = -y[t] * g[t];
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        // j: second-order choice from I_low
        let mut gmin = f64::INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let v = -y[t] * g[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let a = k[i][i] + k[t][t] - 2.0 * k[i][t];
                    let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                    if obj <= best {
                        best = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else { break };
        if gmax - gmin < params.eps {
            break;
        }
        if iterations >= params.max_iter {
            return Err(PropagationError::NonConvergence {
                label: label.to_string(),
                iterations,
            });
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k[i][j];
        if y[i] != y[j] {
            let quad = (k[i][i] + k[j][j] + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai - aj;
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[i][i] + k[j][j] - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = ai + aj;
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * k[i][t] * di + y[j] * k[j][t] * dj);
        }
    }

    // rho: mean over free vectors, else midpoint of the feasible interval
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * g[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };
    Ok(SvmSolution { alpha, rho, iterations })
}

/// A trained classifier reduced to its support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSvm {
    pub gamma: f64,
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
}

impl RbfSvm {
    pub fn from_solution(x: &[Vec<f64>], y: &[f64], gamma: f64, s: &SvmSolution) -> Self {
        let (mut support_vectors, mut coefficients) = (Vec::new(), Vec::new());
        for (i, &a) in s.alpha.iter().enumerate() {
            if a > 0.0 {
                support_vectors.push(x[i].clone());
                coefficients.push(a * y[i]);
            }
        }
        Self {
            gamma,
            support_vectors,
            coefficients,
            rho: s.rho,
        }
    }

    pub fn decision(&self, v: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * rbf(self.gamma, sv, v))
            .sum::<f64>()
            - self.rho
    }
}

pub fn train(x: &[Vec<f64>], y: &[f64], gamma: f64, params: SvmParams, label: &str) -> Result<RbfSvm, PropagationError> {
    let s = solve(x, y, gamma, params, label)?;
    Ok(RbfSvm::from_solution(x, y, gamma, &s))
}
