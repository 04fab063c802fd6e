use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SMatrix, Vector6};
use serde::{Deserialize, Serialize};

use super::{edge_residual, prior_residual, Information, PoseGraph};
use crate::error::{Error, Result};
use crate::geometry::{SE3Pose, Twist};

/// Central-difference step for the numeric Jacobians.
const JACOBIAN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop when the infinity norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this.
    pub step_tol: f64,
    /// Huber threshold on the whitened residual norm; `None` disables it.
    pub huber: Option<f64>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda_init: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            grad_tol: 1e-10,
            step_tol: 1e-14,
            huber: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    StepSize,
    MaxIterations,
    /// Damping grew without finding a decreasing step.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost before the first iteration and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
    /// Solves where the damped system was not positive definite.
    pub singular: usize,
    pub stop: StopReason,
}

type Jac = SMatrix<f64, 6, 6>;

struct Factor {
    /// Column blocks of the variables touched.
    blocks: Vec<usize>,
    jacobians: Vec<Jac>,
    residual: Vector6<f64>,
    information: Information,
}

fn huber_weight(r: &Vector6<f64>, info: &Information, huber: Option<f64>) -> f64 {
    match huber {
        Some(k) => {
            let s = (r.transpose() * info * r)[0].sqrt();
            if s <= k {
                1.0
            } else {
                k / s
            }
        }
        None => 1.0,
    }
}

fn robust_cost(r: &Vector6<f64>, info: &Information, huber: Option<f64>) -> f64 {
    let s2 = (r.transpose() * info * r)[0];
    match huber {
        Some(k) if s2.sqrt() > k => 2.0 * k * s2.sqrt() - k * k,
        _ => s2,
    }
}

fn total_cost(graph: &PoseGraph, huber: Option<f64>) -> Result<f64> {
    let mut total = 0.0;
    for e in &graph.edges {
        total += robust_cost(&graph.edge_residual(e)?.0, &e.information, huber);
    }
    Ok(total + robust_cost(&graph.prior_residual()?.0, &graph.prior.information, huber))
}

fn numeric_jacobian<F: Fn(&Twist) -> Result<Twist>>(f: F) -> Result<Jac> {
    let mut j = Jac::zeros();
    for k in 0..6 {
        let mut d = Vector6::zeros();
        d[k] = JACOBIAN_STEP;
        let plus = f(&Twist(d))?.0;
        let minus = f(&Twist(-d))?.0;
        j.set_column(k, &((plus - minus) / (2.0 * JACOBIAN_STEP)));
    }
    Ok(j)
}

fn linearize(graph: &PoseGraph, index: &BTreeMap<usize, usize>) -> Result<Vec<Factor>> {
    let mut factors = Vec::with_capacity(graph.edges.len() + 1);
    for e in &graph.edges {
        let (tu, tv) = (graph.nodes[&e.u], graph.nodes[&e.v]);
        let residual = edge_residual(&tu, &tv, &e.delta)?.0;
        let ju = numeric_jacobian(|d| edge_residual(&tu.retract(d), &tv, &e.delta))?;
        let jv = numeric_jacobian(|d| edge_residual(&tu, &tv.retract(d), &e.delta))?;
        let (blocks, jacobians) = if e.u == e.v {
            (vec![index[&e.u]], vec![ju + jv])
        } else {
            (vec![index[&e.u], index[&e.v]], vec![ju, jv])
        };
        factors.push(Factor { blocks, jacobians, residual, information: e.information });
    }
    let t = graph.nodes[&graph.prior.node];
    let prior = graph.prior.pose;
    factors.push(Factor {
        blocks: vec![index[&graph.prior.node]],
        jacobians: vec![numeric_jacobian(|d| prior_residual(&t.retract(d), &prior))?],
        residual: prior_residual(&t, &prior)?.0,
        information: graph.prior.information,
    });
    Ok(factors)
}

fn normal_equations(factors: &[Factor], n: usize, huber: Option<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(6 * n, 6 * n);
    let mut g = DVector::zeros(6 * n);
    for f in factors {
        let w = huber_weight(&f.residual, &f.information, huber);
        let info = f.information * w;
        for (a, ja) in f.blocks.iter().zip(&f.jacobians) {
            let jt_info = ja.transpose() * info;
            let mut gb = g.fixed_rows_mut::<6>(6 * a);
            gb += jt_info * f.residual;
            for (b, jb) in f.blocks.iter().zip(&f.jacobians) {
                let mut hb = h.fixed_view_mut::<6, 6>(6 * a, 6 * b);
                hb += jt_info * jb;
            }
        }
    }
    (h, g)
}

/// Levenberg-Marquardt over all node poses with right retraction
/// `T <- T exp(delta)`. Every accepted step strictly lowers the cost.
pub fn optimize(graph: &mut PoseGraph, cfg: &LmConfig) -> Result<OptimizeReport> {
    graph.validate()?;
    if !(cfg.lambda_init > 0.0 && cfg.lambda_up > 1.0 && cfg.lambda_down > 0.0 && cfg.lambda_down < 1.0) {
        return Err(Error::InvalidConfig("LM damping factors are inconsistent".into()));
    }
    let ids: Vec<usize> = graph.nodes.keys().copied().collect();
    let index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let n = ids.len();

    let mut cost = total_cost(graph, cfg.huber)?;
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = cfg.lambda_init;
    let (mut iterations, mut accepted, mut singular) = (0, 0, 0);
    let mut stop = StopReason::MaxIterations;

    'outer: while iterations < cfg.max_iters {
        let factors = linearize(graph, &index)?;
        let (h, g) = normal_equations(&factors, n, cfg.huber);
        if g.amax() < cfg.grad_tol {
            stop = StopReason::Gradient;
            break;
        }
        loop {
            iterations += 1;
            let mut damped = h.clone();
            for i in 0..6 * n {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                singular += 1;
                lambda *= cfg.lambda_up;
                if iterations >= cfg.max_iters {
                    break 'outer;
                }
                continue;
            };
            let step = chol.solve(&(-&g));
            let candidate = retracted(graph, &ids, &step);
            let trial = total_cost(&candidate, cfg.huber).unwrap_or(f64::INFINITY);
            if trial < cost {
                *graph = candidate;
                cost = trial;
                trace.push(cost);
                accepted += 1;
                lambda = (lambda * cfg.lambda_down).max(1e-15);
                if step.amax() < cfg.step_tol {
                    stop = StopReason::StepSize;
                    break 'outer;
                }
                break;
            }
            lambda *= cfg.lambda_up;
            if lambda > 1e16 {
                stop = StopReason::Stalled;
                break 'outer;
            }
            if iterations >= cfg.max_iters {
                break 'outer;
            }
        }
    }
    Ok(OptimizeReport { initial_cost, final_cost: cost, trace, iterations, accepted, singular, stop })
}

fn retracted(graph: &PoseGraph, ids: &[usize], step: &DVector<f64>) -> PoseGraph {
    let mut out = graph.clone();
    for (i, id) in ids.iter().enumerate() {
        let d = Vector6::from_iterator(step.rows(6 * i, 6).iter().copied());
        let t: SE3Pose = out.nodes[id];
        out.nodes.insert(*id, t.retract(&Twist(d)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Quaternion};
    use crate::posegraph::{EdgeKind, PoseEdge};
    use nalgebra::Vector3;

    fn twist(v: [f64; 6]) -> SE3Pose {
        se3_exp(&Twist::from_slice(&v))
    }

    #[test]
    fn prior_only_graph_returns_prior() {
        let prior = SE3Pose::new(Quaternion::new(0.9, 0.1, -0.3, 0.2), Vector3::new(1.0, -2.0, 0.5));
        let mut g = PoseGraph::new(0, prior, Information::identity() * 1e6).unwrap();
        g.nodes.insert(0, twist([0.3, 0.1, -0.2, 0.5, 0.5, 0.5]));
        optimize(&mut g, &LmConfig::default()).unwrap();
        let (dt, dr) = g.nodes[&0].distance(&prior);
        assert!(dt < 1e-12 && dr < 1e-12, "{dt} {dr}");
    }

    #[test]
    fn consistent_chain_at_truth_has_zero_cost() {
        let poses = [SE3Pose::identity(), twist([0.0, 0.0, 0.3, 1.0, 0.0, 0.0]), twist([0.1, 0.0, 0.6, 2.0, 0.5, 0.0])];
        let mut g = PoseGraph::new(0, poses[0], Information::identity() * 1e6).unwrap();
        for (i, p) in poses.iter().enumerate().skip(1) {
            g.add_node(i, *p);
            let delta = poses[i - 1].between(p);
            g.add_edge(PoseEdge { u: i - 1, v: i, delta, information: Information::identity(), kind: EdgeKind::Sequential }).unwrap();
        }
        let report = optimize(&mut g, &LmConfig::default()).unwrap();
        assert!(report.final_cost < 1e-18);
        assert_eq!(report.accepted, 0);
    }

    #[test]
    fn perturbed_triangle_decreases_monotonically() {
        let truth = [SE3Pose::identity(), twist([0.0, 0.0, 0.5, 1.0, 0.0, 0.0]), twist([0.0, 0.0, 1.0, 1.0, 1.0, 0.0])];
        let mut g = PoseGraph::new(0, truth[0], Information::identity() * 1e6).unwrap();
        g.add_node(1, truth[1].retract(&Twist::from_slice(&[0.05, 0.0, 0.02, 0.1, -0.1, 0.0])));
        g.add_node(2, truth[2].retract(&Twist::from_slice(&[0.0, 0.03, -0.05, 0.2, 0.0, 0.1])));
        for (u, v) in [(0, 1), (1, 2), (0, 2)] {
            let mut delta = truth[u].between(&truth[v]);
            if (u, v) == (0, 2) {
                delta = delta.retract(&Twist::from_slice(&[0.01, 0.0, 0.0, 0.02, 0.0, 0.0]));
            }
            g.add_edge(PoseEdge { u, v, delta, information: Information::identity(), kind: EdgeKind::Sequential }).unwrap();
        }
        let report = optimize(&mut g, &LmConfig::default()).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.final_cost < report.initial_cost);
        assert!(matches!(report.stop, StopReason::Gradient | StopReason::StepSize));
    }
}
