//! Reference computations for integration tests, written independently of
//! the library code paths they check.
#![allow(dead_code)]

use fedni::graphcons::{FieldKind, PhenoColumn, PhenotypeTable};
use fedni::numerics::{Matrix, Module, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            m.set(i, j, rng.random_range(-1.0..1.0));
        }
    }
    m
}

/// `exp(-‖a-b‖² / 2σ²)` by an explicit double loop.
pub fn feature_similarity_oracle(h: &Matrix, sigma: f64) -> Vec<Vec<f64>> {
    let n = h.rows();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let mut d2 = 0.0;
            for c in 0..h.cols() {
                let diff = h.get(i, c) - h.get(j, c);
                d2 += diff * diff;
            }
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    out
}

pub fn phenotype_similarity_oracle(u: &PhenotypeTable, gamma: f64) -> Vec<Vec<f64>> {
    let n = u.len();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            for (field, col) in u.fields().iter().zip(u.columns()) {
                let agree = match (&field.kind, col) {
                    (FieldKind::Categorical { .. }, PhenoColumn::Categorical(c)) => c[i] == c[j],
                    (FieldKind::Continuous, PhenoColumn::Continuous(c)) => {
                        (c[i] - c[j]).abs() <= gamma
                    }
                    _ => panic!("schema mismatch"),
                };
                if agree {
                    *v += 1.0;
                }
            }
        }
    }
    out
}

/// Fuse, keep each row's k largest off-diagonal entries (lower index wins
/// ties), symmetrize by max, add the identity.
pub fn adjacency_oracle(s: &Matrix, st: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let n = s.rows();
    let mut kept = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut order: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (s.get(i, j) * st.get(i, j), j))
            .collect();
        // Selection sort: largest weight first, then smallest index.
        for a in 0..order.len() {
            let mut best = a;
            for b in a + 1..order.len() {
                let (wb, jb) = order[b];
                let (wbest, jbest) = order[best];
                if wb > wbest || (wb == wbest && jb < jbest) {
                    best = b;
                }
            }
            order.swap(a, best);
        }
        for &(w, j) in order.iter().take(k) {
            kept[i][j] = w;
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = kept[i][j].max(kept[j][i]) + if i == j { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Fraction of (positive, negative) pairs ranked correctly, ties worth half.
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Unit-weight shortest path lengths by Floyd–Warshall.
pub fn hop_distances(a: &Matrix) -> Vec<Vec<Option<usize>>> {
    let n = a.rows();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if i != j && a.get(i, j) > 0.0 {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter()
        .map(|row| row.into_iter().map(|v| (v < inf).then_some(v)).collect())
        .collect()
}

/// Number of connected components by union-find over nonzero entries.
pub fn components(a: &Matrix) -> usize {
    let n = a.rows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if a.get(i, j) > 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

/// Random connected symmetric 0/1 graph: a random spanning tree plus
/// extra edges, with unit self-loops.
pub fn random_connected_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut a = Matrix::identity(n);
    for v in 1..n {
        let u = rng.random_range(0..v);
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    for _ in 0..extra {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
    }
    a
}

/// Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic
/// Jacobi rotations, sorted by descending eigenvalue.
pub fn jacobi_eigen(m: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].partial_cmp(&a[x][x]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Relative tolerance for gradient checks.
pub const GRAD_REL: f64 = 1e-4;
/// Absolute slack covering rounding noise of the difference quotient.
pub const GRAD_ABS: f64 = 1e-8;

/// Steps tried for the difference quotient, largest first.
pub const FD_STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];

/// Central differences against the tape gradient on up to `probes` entries
/// of every parameter tensor. Returns the worst
/// `|analytic − numeric| / (GRAD_REL · max(|analytic|, |numeric|) + GRAD_ABS)`,
/// so a value below 1 passes.
///
/// A quotient is accepted once it agrees with the one at a ten times
/// smaller step; a stencil straddling a ReLU kink fails that test and is
/// replaced by the finer one. The comparison itself is unchanged.
pub fn gradient_error<M: Module>(
    model: &mut M,
    f: &mut dyn FnMut(&mut M, &mut Tape) -> Var,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    model.zero_grad();
    let mut tape = Tape::new();
    let loss = f(model, &mut tape);
    let grads = tape.backward(loss);
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .into_iter()
        .map(|p| {
            grads.accumulate(p);
            p.grad.data().to_vec()
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (t, a) in analytic.iter().enumerate() {
        let picks: Vec<usize> = if a.len() <= probes {
            (0..a.len()).collect()
        } else {
            (0..probes).map(|_| rng.random_range(0..a.len())).collect()
        };
        for i in picks {
            let orig = model.params_mut()[t].value.data()[i];
            let mut eval = |m: &mut M, x: f64| {
                m.params_mut()[t].value.data_mut()[i] = x;
                let mut tape = Tape::new();
                let l = f(m, &mut tape);
                tape.scalar(l)
            };
            let mut central =
                |m: &mut M, h: f64| (eval(m, orig + h) - eval(m, orig - h)) / (2.0 * h);
            let mut num = central(model, FD_STEPS[0]);
            for &h in &FD_STEPS[1..] {
                let finer = central(model, h);
                let agree = (num - finer).abs() <= GRAD_REL * num.abs().max(finer.abs()) + GRAD_ABS;
                if agree {
                    break;
                }
                num = finer;
            }
            model.params_mut()[t].value.data_mut()[i] = orig;
            let an = a[i];
            worst = worst.max((an - num).abs() / (GRAD_REL * an.abs().max(num.abs()) + GRAD_ABS));
        }
    }
    worst
}

/// Textbook pooled-variance t statistic.
pub fn pooled_t_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let ss = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (ss(a) + ss(b)) / df;
    let t = (mean(a) - mean(b)) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    (t, df)
}

/// Sex, a three-level site and integer ages, so that age differences hit
/// the window edge exactly now and then.
pub fn random_table(n: usize, rng: &mut ChaCha8Rng) -> PhenotypeTable {
    use fedni::graphcons::PhenotypeField;
    PhenotypeTable::new(
        vec![
            PhenotypeField::categorical("sex", &["f", "m"]),
            PhenotypeField::categorical("site", &["a", "b", "c"]),
            PhenotypeField::continuous("age"),
        ],
        vec![
            PhenoColumn::Categorical((0..n).map(|_| rng.random_range(0..2)).collect()),
            PhenoColumn::Categorical((0..n).map(|_| rng.random_range(0..3)).collect()),
            PhenoColumn::Continuous(
                (0..n)
                    .map(|_| f64::from(rng.random_range(60..80)))
                    .collect(),
            ),
        ],
    )
    .expect("valid table")
}

pub fn assert_matches(got: &Matrix, want: &[Vec<f64>], tol: f64) {
    assert_eq!(got.rows(), want.len());
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            assert!(
                (got.get(i, j) - w).abs() <= tol,
                "({i},{j}): {} vs {w}",
                got.get(i, j)
            );
        }
    }
}

/// A population graph whose adjacency is replaced by `a`.
pub fn graph_with_adjacency(a: Matrix, rng: &mut ChaCha8Rng) -> fedni::graphcons::PopulationGraph {
    let n = a.rows();
    let mut g = fedni::graphcons::PopulationGraph::build(
        random_matrix(n, 4, rng),
        random_table(n, rng),
        (0..n).map(|i| (i % 2) as u8).collect(),
        vec![true; n],
        &Default::default(),
    )
    .expect("valid graph");
    g.adjacency = a;
    g
}

pub fn cohort(n: usize, d: usize, seed: u64) -> fedni::graphcons::PopulationGraph {
    fedni::datagen::generate_population(&fedni::datagen::CohortSpec {
        n,
        d,
        seed,
        ..Default::default()
    })
    .expect("valid cohort")
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Two-sided Student-t tail probability by Simpson integration of the
/// unnormalized density over `x = u / (1 − u)`.
pub fn t_two_sided_oracle(t: f64, df: f64) -> f64 {
    let g = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let integral = |lo: f64| {
        let u0 = lo / (1.0 + lo);
        let steps = 200_000;
        let h = (1.0 - u0) / steps as f64;
        let f = |u: f64| {
            if u >= 1.0 {
                0.0
            } else {
                g(u / (1.0 - u)) / (1.0 - u).powi(2)
            }
        };
        let mut s = f(u0) + f(1.0);
        for i in 1..steps {
            let u = u0 + i as f64 * h;
            s += f(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    integral(t.abs()) / integral(0.0)
}
