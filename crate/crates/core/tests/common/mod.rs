//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use symop::latent::{l1_distance, EncoderModel, LossConfig};
use symop::relation::RelationLabel;
use symop::transition::{Feasibility, TransitionModel};
use symop::ActionPrimitive;

/// `P^a[i][j] = sum_m sum_n Q[i][m] T[m][n] K[j][n]` with `Q` and `K` built
/// from the counts by explicit loops. Zero rows/columns normalise to zero.
pub fn transition_oracle(counts: &[Vec<f64>], t: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = counts.len();
    let n = counts[0].len();
    let mut q = vec![vec![0.0; n]; m];
    let mut k = vec![vec![0.0; n]; m];
    for i in 0..m {
        let row: f64 = counts[i].iter().sum();
        for c in 0..n {
            q[i][c] = if row == 0.0 { 0.0 } else { counts[i][c] / row };
        }
    }
    for c in 0..n {
        let col: f64 = (0..m).map(|i| counts[i][c]).sum();
        for i in 0..m {
            k[i][c] = if col == 0.0 { 0.0 } else { counts[i][c] / col };
        }
    }
    let mut p = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += q[i][a] * t[a][b] * k[j][b];
                }
            }
            p[i][j] = acc;
        }
    }
    p
}

/// Central finite-difference gradient of `f` at `params`.
pub fn fd_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over the entries.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Deterministic edge `(action, from, to)`; at most one per (action, from).
pub type Edge = (ActionPrimitive, usize, usize);

/// A model whose states are its groups: identity counts, so `P^a = T^a`.
pub fn pure_model(m: usize, edges: &[Edge]) -> TransitionModel {
    let mut mats = vec![Array2::<u8>::zeros((m, m)); ActionPrimitive::ALL.len()];
    for &(a, from, to) in edges {
        mats[a.index()][[from, to]] = 1;
    }
    let counts = Array2::from_shape_fn((m, m), |(i, j)| u64::from(i == j));
    let names: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
    TransitionModel::build(counts, Feasibility::from_matrices(mats).unwrap(), names.clone(), names).unwrap()
}

/// Random deterministic transition system: each (action, state) pair has a
/// successor with probability `density`.
pub fn random_edges<R: Rng>(rng: &mut R, m: usize, density: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    for a in ActionPrimitive::ALL {
        for from in 0..m {
            if rng.random::<f64>() < density {
                edges.push((a, from, rng.random_range(0..m)));
            }
        }
    }
    edges
}

/// Length of the shortest action path from `start` to `goal` using at most
/// `max_depth` actions, by plain graph BFS.
pub fn shortest_path_len(m: usize, edges: &[Edge], start: usize, goal: usize, max_depth: usize) -> Option<usize> {
    let mut dist = vec![usize::MAX; m];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if u == goal {
            return Some(dist[u]);
        }
        if dist[u] == max_depth {
            continue;
        }
        for &(_, from, to) in edges {
            if from == u && dist[to] == usize::MAX {
                dist[to] = dist[u] + 1;
                queue.push_back(to);
            }
        }
    }
    None
}

/// Replays `actions` through the edges; `None` if some step is undefined.
pub fn replay(edges: &[Edge], start: usize, actions: &[ActionPrimitive]) -> Option<usize> {
    actions.iter().try_fold(start, |s, a| edges.iter().find(|(ea, from, _)| ea == a && *from == s).map(|e| e.2))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn with_params(model: &EncoderModel, p: &[f64]) -> EncoderModel {
    EncoderModel::from_params(model.input_dim(), model.latent_dim(), p.to_vec()).unwrap()
}

/// Distance from a kink of the relation loss at this pair of means.
pub fn kink_margin(z1: &[f64], z2: &[f64], label: RelationLabel, d_m: f64) -> f64 {
    let coord = z1.iter().zip(z2).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min);
    let dist = l1_distance(z1, z2);
    let hinge = match label {
        RelationLabel::Inclusive => f64::INFINITY,
        RelationLabel::Exclusive => (2.0 * d_m - dist).abs(),
        RelationLabel::Independent => (d_m - dist).abs(),
    };
    coord.min(hinge)
}

pub struct GradPoint {
    pub model: EncoderModel,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub label: RelationLabel,
}

/// Random evaluation points kept away from relation-loss kinks.
pub fn grad_points(n: usize, seed: u64, cfg: &LossConfig) -> Vec<GradPoint> {
    let (d, l) = (6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let label = RelationLabel::ALL[out.len() % 3];
        let model = EncoderModel::random(d, l, rng.random());
        let p = GradPoint {
            x1: normal_vec(&mut rng, d, 1.0),
            x2: normal_vec(&mut rng, d, 1.0),
            e1: normal_vec(&mut rng, l, 1.0),
            e2: normal_vec(&mut rng, l, 1.0),
            model,
            label,
        };
        let (m1, m2) = (p.model.embed(&p.x1).unwrap(), p.model.embed(&p.x2).unwrap());
        if kink_margin(&m1, &m2, label, cfg.d_m) > 1e-2 {
            out.push(p);
        }
    }
    out
}

/// Gradient mismatch: the larger of the relative error of the whole vector
/// and the worst per-entry error with an absolute floor of 1.
pub fn gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = diff / norm(analytic).max(norm(numeric)).max(1e-12);
    rel.max(max_rel_error(analytic, numeric, 1.0))
}
