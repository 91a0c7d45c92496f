use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsim_core::data::{synth_classification, Dataset};
use fedsim_core::model::{
    accuracy, gradient_at, loss_at, param_count, solve_reference_optimum, Batch,
};

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let features = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new(features, labels, dim, classes).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for case in 0..20 {
        // d = 12 either as 3 classes of 3 features or 2 classes of 5
        let (dim, classes) = if case % 2 == 0 { (3, 3) } else { (5, 2) };
        assert_eq!(param_count(dim, classes), 12);
        let data = random_dataset(&mut rng, 7, dim, classes);
        let mu = rng.gen_range(0.0..0.5);
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = gradient_at(&x, Batch::full(&data), mu).unwrap();
        let h = 1e-5;
        for j in 0..12 {
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (loss_at(&up, Batch::full(&data), mu).unwrap()
                - loss_at(&down, Batch::full(&data), mu).unwrap())
                / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6, "case {case} coord {j}: fd {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn loss_is_strongly_convex() {
    // f(y) >= f(x) + <g(x), y - x> + mu/2 ||y - x||^2
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let data = random_dataset(&mut rng, 30, 4, 3);
    let mu = 0.05;
    let d = param_count(4, 3);
    for _ in 0..200 {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fx = loss_at(&x, Batch::full(&data), mu).unwrap();
        let fy = loss_at(&y, Batch::full(&data), mu).unwrap();
        let g = gradient_at(&x, Batch::full(&data), mu).unwrap();
        let lin: f64 = g.iter().zip(y.iter().zip(&x)).map(|(gi, (yi, xi))| gi * (yi - xi)).sum();
        let quad: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(fy >= fx + lin + 0.5 * mu * quad - 1e-12);
    }
}

/// Newton's method on the same objective with an explicitly assembled
/// Hessian, solved by Gaussian elimination.
fn newton_optimum(data: &Dataset, mu: f64) -> Vec<f64> {
    let u = data.dim();
    let k = data.classes();
    let stride = u + 1;
    let d = param_count(u, k);
    let mut x = vec![0.0; d];
    for _ in 0..50 {
        let g = gradient_at(&x, Batch::full(data), mu).unwrap();
        let mut h = vec![vec![0.0; d]; d];
        let n = data.len() as f64;
        for i in 0..data.len() {
            let mut z = data.sample(i).to_vec();
            z.push(1.0);
            let logits: Vec<f64> = (0..k)
                .map(|c| (0..stride).map(|a| x[c * stride + a] * z[a]).sum())
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / s).collect();
            for c in 0..k {
                for c2 in 0..k {
                    let w = p[c] * (f64::from(u8::from(c == c2)) - p[c2]) / n;
                    for a in 0..stride {
                        for a2 in 0..stride {
                            h[c * stride + a][c2 * stride + a2] += w * z[a] * z[a2];
                        }
                    }
                }
            }
        }
        for (j, row) in h.iter_mut().enumerate() {
            row[j] += mu;
        }
        let step = solve(h, g);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        if step.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-15 {
            break;
        }
    }
    x
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (r, p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *r -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

#[test]
fn reference_optimum_agrees_with_newton() {
    let data = synth_classification(200, 3, 2, 2.0, 53).unwrap();
    let mu = 0.1;
    let bb = solve_reference_optimum(&data, mu, 1e-10).unwrap();
    let nt = newton_optimum(&data, mu);
    for (a, b) in bb.params.iter().zip(&nt) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn optimum_on_separated_clusters_is_accurate() {
    let data = synth_classification(300, 5, 3, 10.0, 54).unwrap();
    let x = solve_reference_optimum(&data, 0.01, 1e-8).unwrap();
    let acc = accuracy(&x.params, Batch::full(&data)).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn optimum_on_identical_clusters_is_at_chance() {
    for seed in 0..5 {
        let data = synth_classification(2_000, 5, 4, 0.0, seed).unwrap();
        let x = solve_reference_optimum(&data, 0.01, 1e-8).unwrap();
        let acc = accuracy(&x.params, Batch::full(&data)).unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "seed {seed}: accuracy {acc}");
    }
}
