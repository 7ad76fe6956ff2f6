#![allow(dead_code)]

use icadetect::text::{Document, Label};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Word counts from a mixture of topics: each document draws most of its
/// tokens from one topic's block of 25 terms.
pub fn topic_counts(d: usize, v: usize, topics: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = d / topics;
    let mut x = DMatrix::zeros(d, v);
    for j in 0..v {
        let t = rng.random_range(0..topics);
        for _ in 0..rng.random_range(5..12) {
            let w = if rng.random_bool(0.8) {
                t * block + rng.random_range(0..block)
            } else {
                rng.random_range(0..d)
            };
            x[(w, j)] += 1.0;
        }
    }
    x
}

/// Two classes with disjoint vocabularies of `words` terms each.
pub fn separable_corpus(per_class: usize, words: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(2 * per_class);
    for (prefix, label) in [("calm", Label::Reliable), ("wild", Label::Unreliable)] {
        for i in 0..per_class {
            let len = rng.random_range(6..14);
            let text: Vec<String> = (0..len).map(|_| format!("{prefix}{}", rng.random_range(0..words))).collect();
            docs.push(Document::new(format!("{prefix}-{i}"), text.join(" "), label));
        }
    }
    docs
}

/// Mean absolute off-diagonal correlation between the rows of `y`.
pub fn mean_abs_correlation(y: &DMatrix<f64>) -> f64 {
    let v = y.ncols() as f64;
    let rows: Vec<Vec<f64>> = y
        .row_iter()
        .map(|r| {
            let m = r.sum() / v;
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let n = rows.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                total += (dot / (norms[i] * norms[j])).abs();
            }
        }
    }
    total / (n * (n - 1)) as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Dual objective `eᵀα − ½αᵀQα` of the soft-margin SVM found by a
/// log-barrier interior-point method on the full dense problem.
pub fn barrier_qp_dual(gram: &DMatrix<f64>, y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * gram[(i, j)]);
    let pos = y.iter().filter(|&&l| l > 0.0).count() as f64;
    let neg = n as f64 - pos;
    let share = 0.5 * c * pos.min(neg);
    let mut a: Vec<f64> = y.iter().map(|&l| if l > 0.0 { share / pos } else { share / neg }).collect();

    let objective = |a: &[f64]| {
        let av = nalgebra::DVector::from_column_slice(a);
        0.5 * (av.transpose() * &q * &av)[(0, 0)] - av.sum()
    };
    let barrier = |a: &[f64], t: f64| -> f64 {
        if a.iter().any(|&x| x <= 0.0 || x >= c) {
            return f64::INFINITY;
        }
        t * objective(a) - a.iter().map(|&x| x.ln() + (c - x).ln()).sum::<f64>()
    };
    let mut t = 1.0;
    while 2.0 * n as f64 / t > 1e-13 {
        for _ in 0..200 {
            let av = nalgebra::DVector::from_column_slice(&a);
            let g = (&q * &av).add_scalar(-1.0) * t;
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            let mut rhs = nalgebra::DVector::zeros(n + 1);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = t * q[(i, j)];
                }
                kkt[(i, i)] += 1.0 / (a[i] * a[i]) + 1.0 / ((c - a[i]) * (c - a[i]));
                kkt[(i, n)] = y[i];
                kkt[(n, i)] = y[i];
                rhs[i] = -(g[i] - 1.0 / a[i] + 1.0 / (c - a[i]));
            }
            let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
            let step = sol.rows(0, n).into_owned();
            let decrement = rhs.rows(0, n).dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let f0 = barrier(&a, t);
            let mut s = 1.0;
            loop {
                let trial: Vec<f64> = a.iter().zip(step.iter()).map(|(x, d)| x + s * d).collect();
                let ft = barrier(&trial, t);
                if ft <= f0 - 0.25 * s * decrement {
                    a = trial;
                    break;
                }
                s *= 0.5;
                if s < 1e-20 {
                    break;
                }
            }
            if s < 1e-20 {
                break;
            }
        }
        t *= 4.0;
    }
    -objective(&a)
}
