//! Test-only oracles, kept independent of the library's numerical paths.
#![allow(dead_code)]

use bilex::{EmbeddingStore, Pair};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_store(rng: &mut ChaCha8Rng, lang: &str, prefix: &str, count: usize, dim: usize) -> EmbeddingStore {
    let vocab = (0..count).map(|i| format!("{prefix}{i}")).collect();
    let matrix = Array2::from_shape_simple_fn((count, dim), || rng.sample::<f64, _>(StandardNormal) as f32);
    EmbeddingStore::new(lang, vocab, matrix).unwrap()
}

pub fn row(store: &EmbeddingStore, token: &str) -> Vec<f64> {
    store.lookup(token).unwrap().iter().map(|&v| v as f64).collect()
}

/// `xᵀ W y` by explicit triple loop.
pub fn triple_product(x: &[f64], w: &Array2<f64>, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            total += x[i] * w[[i, j]] * y[j];
        }
    }
    total
}

/// `−Σ log softmax` computed straight from the definition.
pub fn brute_nll(src: &EmbeddingStore, tgt: &EmbeddingStore, candidates: &[String], w: &Array2<f64>, pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let x = row(src, &p.source);
            let scores: Vec<f64> = candidates
                .iter()
                .map(|c| triple_product(&x, w, &row(tgt, c)))
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let own = triple_product(&x, w, &row(tgt, &p.target));
            -(own.exp() / z).ln()
        })
        .sum()
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One-sided Jacobi SVD (Hestenes). Returns thin `(U, s, Vᵀ)` with `s`
/// descending.
pub fn jacobi_svd(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let (m, n) = a.dim();
    if m < n {
        let (u, s, vt) = jacobi_svd(&a.t().to_owned());
        return (vt.t().to_owned(), s, u.t().to_owned());
    }
    let mut u = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = u.column(p).iter().map(|x| x * x).sum();
                let beta: f64 = u.column(q).iter().map(|x| x * x).sum();
                let gamma: f64 = u.column(p).iter().zip(u.column(q)).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[[i, p]], u[[i, q]]);
                    u[[i, p]] = c * x - s * y;
                    u[[i, q]] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[[i, p]], v[[i, q]]);
                    v[[i, p]] = c * x - s * y;
                    v[[i, q]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<(f64, usize)> = (0..n)
        .map(|j| (u.column(j).iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    sv.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s = Array1::from_iter(sv.iter().map(|(s, _)| *s));
    let uu = Array2::from_shape_fn((m, n), |(i, r)| {
        let (sigma, j) = sv[r];
        if sigma > 0.0 {
            u[[i, j]] / sigma
        } else {
            0.0
        }
    });
    let vt = Array2::from_shape_fn((n, n), |(r, i)| v[[i, sv[r].1]]);
    (uu, s, vt)
}

pub fn compose(u: &Array2<f64>, s: &Array1<f64>, vt: &Array2<f64>) -> Array2<f64> {
    let (m, k) = u.dim();
    let n = vt.ncols();
    Array2::from_shape_fn((m, n), |(i, j)| (0..k).map(|r| u[[i, r]] * s[r] * vt[[r, j]]).sum())
}

/// Singular-value soft-thresholding through the Jacobi SVD.
pub fn svt_oracle(a: &Array2<f64>, tau: f64) -> Array2<f64> {
    let (u, s, vt) = jacobi_svd(a);
    compose(&u, &s.mapv(|x| (x - tau).max(0.0)), &vt)
}

/// Minimizes `f(X)` by gradient descent with Armijo backtracking from `x0`.
pub fn minimize<F, G>(f: F, grad: G, x0: Array2<f64>, tol: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
    G: Fn(&Array2<f64>) -> Array2<f64>,
{
    let mut x = x0;
    for _ in 0..100_000 {
        let g = grad(&x);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() < tol {
            break;
        }
        let fx = f(&x);
        let mut step = 1.0;
        loop {
            let cand = &x - &(&g * step);
            if f(&cand) <= fx - 0.5 * step * gnorm2 || step < 1e-20 {
                x = cand;
                break;
            }
            step *= 0.5;
        }
    }
    x
}

/// Random orthogonal matrix by Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let mut q = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut v = g.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k);
            let d = v.dot(&qk);
            v = &v - &(&qk * d);
        }
        let norm = v.dot(&v).sqrt();
        q.column_mut(j).assign(&(&v / norm));
    }
    q
}

/// Synthetic bilingual task: `count` random unit vectors in `dim` dimensions,
/// their images under a random orthogonal map plus Gaussian noise, and the
/// identity dictionary `w{i} -> v{i}`.
pub struct Synthetic {
    pub src: EmbeddingStore,
    pub tgt: EmbeddingStore,
    pub pairs: Vec<Pair>,
}

pub fn synthetic(seed: u64, count: usize, dim: usize, noise: f64) -> Synthetic {
    let mut r = rng(seed);
    let mut x = gaussian_matrix(&mut r, count, dim, 1.0);
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    let q = random_orthogonal(&mut r, dim);
    let y = x.dot(&q) + gaussian_matrix(&mut r, count, dim, noise);
    let store = |lang: &str, prefix: &str, m: &Array2<f64>| {
        let vocab = (0..count).map(|i| format!("{prefix}{i}")).collect();
        EmbeddingStore::new(lang, vocab, m.mapv(|v| v as f32)).unwrap()
    };
    Synthetic {
        src: store("en", "w", &x),
        tgt: store("es", "v", &y),
        pairs: (0..count).map(|i| Pair::new(format!("w{i}"), format!("v{i}"))).collect(),
    }
}
