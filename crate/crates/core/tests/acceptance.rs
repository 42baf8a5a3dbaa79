//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Run with `cargo test -p scatnet --test acceptance`. Digit data is read
//! from `$SCATNET_MNIST_DIR` (default: the bundled `data/mnist-subset`).
//! The optional USPS and CUReT checks run when `$SCATNET_USPS_DIR` (IDX
//! files) or `$SCATNET_CURET_DIR` (one directory per class) is set.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scatnet::classifier::{
    classify, inner_k_selection, run_protocol, ClassifierConfig, CvOptions, ProtocolOptions, ValidationPolicy,
};
use scatnet::datasets::{load_idx_dir, load_texture_dir, split_alternating, subsample_train, IdxSplit, TextureOptions};
use scatnet::engine::{fft_convolve, Fft2, Image};
use scatnet::filterbank::{build_filterbank, littlewood_paley_profile, GaborParams};
use scatnet::models::{fit_affine_model, projection_error};
use scatnet::scattering::{enumerate_paths, path_count, scattering_distance, Path, Scatterer, ScatteringConfig};

/// Frame defect of the default bank on a 64x64 grid, frozen after the
/// first verified run.
const GOLDEN_FRAME_DEFECT: f64 = 0.278_954_500_929_901_9;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Image {
    Image::from_fn(rows, cols, |_, _| rng.gen::<f64>())
}

fn config(j: u32) -> ScatteringConfig {
    ScatteringConfig::new(GaborParams::default().with_max_scale(j), 2)
}

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 16;
    let fft = Fft2::new(n, n);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = random_image(&mut rng, n, n);
        let h = ComplexImageSpec::random(&mut rng, n);
        let h_hat = fft.forward(&h.to_image()).unwrap();
        let fast = fft_convolve(&f, &h_hat).unwrap();
        for r in 0..n {
            for c in 0..n {
                let mut direct = Complex64::new(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        direct += f.get(a, b) * h.at((r + n - a) % n, (c + n - b) % n);
                    }
                }
                worst = worst.max((fast.get(r, c) - direct).norm());
            }
        }
    }
    check(worst < 1e-10, format!("max abs diff {worst:.2e} over 20 pairs"))
}

struct ComplexImageSpec {
    n: usize,
    values: Vec<Complex64>,
}

impl ComplexImageSpec {
    fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let values = (0..n * n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Self { n, values }
    }

    fn at(&self, r: usize, c: usize) -> Complex64 {
        self.values[r * self.n + c]
    }

    fn to_image(&self) -> scatnet::engine::ComplexImage {
        scatnet::engine::ComplexImage::new(self.n, self.n, self.values.clone()).unwrap()
    }
}

fn frame_check() -> Outcome {
    let params = GaborParams::default();
    let bank = build_filterbank(params, (64, 64)).unwrap();
    let profile = littlewood_paley_profile(&bank);
    let (inner, outer) = params.resolved_annulus().unwrap();
    let max = profile.max();
    let min = profile.min_over_annulus(inner, outer).unwrap();
    let delta = bank.frame_defect();
    let golden = (delta - GOLDEN_FRAME_DEFECT).abs() < 1e-12;
    check(
        max <= 1.0 + 1e-6 && min >= 0.5 && golden,
        format!("max {max:.9}, annulus min {min:.6}, delta {delta:.16} (golden {GOLDEN_FRAME_DEFECT})"),
    )
}

fn brute_force_paths(j: u32, l: usize, m0: usize) -> Vec<Path> {
    let mut all = vec![Vec::<(u32, u32)>::new()];
    let mut frontier = all.clone();
    for _ in 0..m0 {
        let mut next = Vec::new();
        for p in &frontier {
            for s in 0..j {
                for g in 0..l as u32 {
                    let mut q = p.clone();
                    q.push((s, g));
                    next.push(q);
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    let mut paths: Vec<Path> = all
        .into_iter()
        .filter(|p| p.windows(2).all(|w| w[0].0 < w[1].0))
        .map(|p| Path::new(&p).unwrap())
        .collect();
    paths.sort();
    paths
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        0
    } else {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }
}

fn path_combinatorics() -> Outcome {
    let default = enumerate_paths(&config(3)).len();
    let mut mismatches = 0;
    let mut cases = 0;
    for j in 0..=6u32 {
        for l in 1..=8usize {
            for m0 in 0..=3usize {
                let cfg = ScatteringConfig::new(
                    GaborParams {
                        num_orientations: l,
                        ..GaborParams::default().with_max_scale(j)
                    },
                    m0,
                );
                let formula: usize = (0..=m0).map(|n| l.pow(n as u32) * binomial(j as usize, n)).sum();
                let paths = enumerate_paths(&cfg);
                cases += 1;
                if paths != brute_force_paths(j, l, m0) || paths.len() != formula || path_count(j, l, m0) != formula {
                    mismatches += 1;
                }
            }
        }
    }
    check(
        default == 127 && mismatches == 0,
        format!("{default} default paths, {mismatches} mismatches over {cases} configurations"),
    )
}

fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scatterer = Scatterer::new(config(3), (32, 32)).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let f = random_image(&mut rng, 32, 32);
        let g = random_image(&mut rng, 32, 32);
        let d = scattering_distance(&scatterer.scatter(&f).unwrap(), &scatterer.scatter(&g).unwrap()).unwrap();
        let diff: f64 = f
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(d / diff);
    }
    check(
        worst <= 1.0 + 1e-6,
        format!("max ||Sf-Sg||/||f-g|| = {worst:.4} over 50 pairs"),
    )
}

fn translation_trend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_image(&mut rng, 64, 64);
    let shifted = f.roll(4, 0);
    let norm = f.norm_sq().sqrt();
    let d: Vec<f64> = (1..=4)
        .map(|j| {
            let s = Scatterer::new(config(j), (64, 64)).unwrap();
            scattering_distance(&s.scatter(&f).unwrap(), &s.scatter(&shifted).unwrap()).unwrap() / norm
        })
        .collect();
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let ratio = d[3] / d[0];
    check(
        decreasing && ratio < 0.2,
        format!(
            "normalized distances J=1..4: {:.4} {:.4} {:.4} {:.4}; J=4/J=1 = {ratio:.3}",
            d[0], d[1], d[2], d[3]
        ),
    )
}

/// Smooth test image: a sum of Gaussian bumps, evaluated analytically.
fn bumps(rng: &mut ChaCha8Rng, count: usize) -> Vec<(f64, f64, f64, f64)> {
    (0..count)
        .map(|_| {
            (
                rng.gen_range(16.0..48.0),
                rng.gen_range(16.0..48.0),
                rng.gen_range(2.0..4.0),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect()
}

fn render(bumps: &[(f64, f64, f64, f64)], dilation: f64) -> Image {
    let center = 31.5;
    Image::from_fn(64, 64, |r, c| {
        // D_tau f(x) = f(x - tau(x)) with tau(x) = eps (x - center).
        let y = center + (1.0 - dilation) * (r as f64 - center);
        let x = center + (1.0 - dilation) * (c as f64 - center);
        bumps
            .iter()
            .map(|&(br, bc, s, a)| a * (-((y - br).powi(2) + (x - bc).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    })
}

fn deformation_trend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = bumps(&mut rng, 8);
    let eps0 = 0.08;
    let s = Scatterer::new(config(3), (64, 64)).unwrap();
    let base = s.scatter(&render(&b, 0.0)).unwrap();
    let eps = [0.25 * eps0, 0.5 * eps0, eps0];
    let d: Vec<f64> = eps
        .iter()
        .map(|&e| scattering_distance(&base, &s.scatter(&render(&b, e)).unwrap()).unwrap())
        .collect();
    let slopes: Vec<f64> = d.iter().zip(&eps).map(|(d, e)| d / e).collect();
    let spread = slopes.iter().cloned().fold(f64::MIN, f64::max) / slopes.iter().cloned().fold(f64::MAX, f64::min);
    let monotone = d.windows(2).all(|w| w[1] > w[0]);
    check(
        monotone && spread < 3.0,
        format!(
            "distances {:.4e} {:.4e} {:.4e}; slope spread x{spread:.3}",
            d[0], d[1], d[2]
        ),
    )
}

fn sin_largest_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // ||(I - B B^T) A||_2 for orthonormal column blocks A and B.
    let residual = a - b * (b.transpose() * a);
    residual.singular_values().max()
}

fn pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (dim, samples, top) = (20, 60, 5);
    let mut worst_eig: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for _ in 0..10 {
        let scales: Vec<f64> = (0..dim).map(|i| 3.0 * 0.8f64.powi(i as i32)).collect();
        let data: Vec<Vec<f64>> = (0..samples)
            .map(|_| scales.iter().map(|s| s * rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let model = fit_affine_model(0, &data, top).unwrap();
        let mean: Vec<f64> = (0..dim)
            .map(|d| data.iter().map(|x| x[d]).sum::<f64>() / samples as f64)
            .collect();
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for x in &data {
            let v = DMatrix::from_iterator(dim, 1, x.iter().zip(&mean).map(|(a, m)| a - m));
            cov += &v * v.transpose();
        }
        cov /= samples as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (l, &o) in order.iter().take(top).enumerate() {
            worst_eig = worst_eig.max((model.eigenvalues()[l] - eig.eigenvalues[o]).abs());
        }
        let oracle = DMatrix::from_fn(dim, top, |r, c| eig.eigenvectors[(r, order[c])]);
        let fitted = DMatrix::from_fn(dim, top, |r, c| model.eigenvector(c)[r]);
        worst_angle = worst_angle.max(sin_largest_angle(&fitted, &oracle).asin());
    }

    // Exhaustive (class, k) scoring with explicit projections.
    let (dim, k_max) = (10, 10);
    let centers: Vec<Vec<f64>> = (0..2)
        .map(|c| (0..dim).map(|d| if d == c { 2.0 } else { 0.0 }).collect())
        .collect();
    let blob = |rng: &mut ChaCha8Rng, c: usize| -> Vec<f64> {
        centers[c]
            .iter()
            .enumerate()
            .map(|(d, m)| m + rng.gen_range(-1.0..1.0) * (1.0 + d as f64 * 0.1))
            .collect()
    };
    let train: Vec<Vec<Vec<f64>>> = (0..2).map(|c| (0..40).map(|_| blob(&mut rng, c)).collect()).collect();
    let models: Vec<_> = train
        .iter()
        .enumerate()
        .map(|(c, x)| fit_affine_model(c, x, k_max).unwrap())
        .collect();
    let cfg = ClassifierConfig {
        beta: 0.0,
        max_dim: k_max,
        max_scale: 0,
    };
    let mut disagreements = 0;
    for s in 0..500 {
        let x = blob(&mut rng, s % 2);
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for m in &models {
            for k in 0..=m.num_directions().min(k_max) {
                let mut r: Vec<f64> = x.iter().zip(m.mean()).map(|(a, b)| a - b).collect();
                let centered = r.clone();
                for l in 0..k {
                    let e = m.eigenvector(l);
                    let dot: f64 = centered.iter().zip(e).map(|(a, b)| a * b).sum();
                    r.iter_mut().zip(e).for_each(|(v, e)| *v -= dot * e);
                }
                let score: f64 = r.iter().map(|v| v * v).sum();
                if score < best.2 - 1e-12 {
                    best = (m.class_id(), k, score);
                }
            }
        }
        let p = classify(&x, &models, &cfg).unwrap();
        if (p.class_id, p.chosen_k) != (best.0, best.1) {
            disagreements += 1;
        }
    }
    check(
        worst_eig < 1e-8 && worst_angle < 1e-6 && disagreements == 0,
        format!(
            "eigenvalue diff {worst_eig:.2e}, subspace angle {worst_angle:.2e}, {disagreements}/500 classifier disagreements"
        ),
    )
}

fn threshold_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 12;
    let data: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..dim).map(|d| rng.gen_range(-1.0..1.0) * (1.0 + d as f64)).collect())
        .collect();
    let model = fit_affine_model(0, &data, 10).unwrap();
    let kk = model.num_directions();
    let mut mismatches = 0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..dim).map(|d| rng.gen_range(-2.0..2.0) * (1.0 + d as f64)).collect();
        for b in 0..10 {
            let beta = if b == 0 { 0.0 } else { 10f64.powf(b as f64 * 0.5 - 2.0) };
            let cfg = ClassifierConfig {
                beta,
                max_dim: 10,
                max_scale: 0,
            };
            let (k, score) = inner_k_selection(&x, &model, &cfg).unwrap();
            let (mut best_k, mut best) = (0, f64::INFINITY);
            for k in 0..=kk {
                let s = projection_error(&model, &x, k).unwrap() + beta * k as f64;
                if s < best {
                    best = s;
                    best_k = k;
                }
            }
            if k != best_k || (score - best).abs() > 1e-12 * best.max(1.0) {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("{mismatches}/1000 mismatches"))
}

fn data_dir(var: &str, default: Option<&str>) -> Option<PathBuf> {
    std::env::var_os(var)
        .map(PathBuf::from)
        .or_else(|| default.map(|d| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(d)))
        .filter(|p| p.is_dir())
}

/// Stratified 5-fold selection of `(J, beta)` with intermediate
/// subsampling, matching the CLI defaults.
fn reproduction_options() -> ProtocolOptions {
    ProtocolOptions {
        base: ScatteringConfig {
            subsample_intermediate: true,
            ..ScatteringConfig::default()
        },
        cv: CvOptions {
            policy: ValidationPolicy::KFold { folds: 5 },
            seed: 11,
            ..CvOptions::default()
        },
        ..ProtocolOptions::default()
    }
}

fn mnist_reproduction() -> Outcome {
    let Some(dir) = data_dir("SCATNET_MNIST_DIR", Some("../../data/mnist-subset")) else {
        return Outcome::Fail("no MNIST directory (set SCATNET_MNIST_DIR)".into());
    };
    let (pool, test) = match (load_idx_dir(&dir, IdxSplit::Train), load_idx_dir(&dir, IdxSplit::Test)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(format!("cannot load MNIST: {e}")),
    };
    let options = reproduction_options();
    let mut ok = true;
    let mut detail = Vec::new();
    for (size, limit) in [(300, 0.08), (1000, 0.035)] {
        let train = subsample_train(&pool, size, 2011).unwrap();
        let out = run_protocol(&train, &test, &options).unwrap();
        let err = out.evaluation.error_rate;
        let j = out.cv.best.max_scale;
        ok &= err <= limit && (2..=4).contains(&j);
        detail.push(format!(
            "n={size}: error {:.2}% (limit {:.1}%), J*={j}, beta_rel={:.1e}, mean k={:.1}",
            100.0 * err,
            100.0 * limit,
            out.cv.best.beta_rel,
            out.evaluation.mean_k
        ));
    }
    detail.push(format!("test set {} images", test.len()));
    check(ok, detail.join("; "))
}

fn optional_datasets() -> Outcome {
    let usps = data_dir("SCATNET_USPS_DIR", None);
    let curet = data_dir("SCATNET_CURET_DIR", None);
    if usps.is_none() && curet.is_none() {
        return Outcome::Skip("set SCATNET_USPS_DIR and/or SCATNET_CURET_DIR to run".into());
    }
    let mut ok = true;
    let mut detail = Vec::new();
    if let Some(dir) = usps {
        let result = load_idx_dir(&dir, IdxSplit::Train)
            .and_then(|train| Ok((train, load_idx_dir(&dir, IdxSplit::Test)?)))
            .and_then(|(train, test)| run_protocol(&train, &test, &reproduction_options()));
        match result {
            Ok(out) => {
                let err = out.evaluation.error_rate;
                ok &= err <= 0.035;
                detail.push(format!("USPS error {:.2}% (limit 3.5%)", 100.0 * err));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("USPS failed: {e}"));
            }
        }
    }
    if let Some(dir) = curet {
        let result = load_texture_dir(&dir, &TextureOptions::new(200)).and_then(|(ds, _)| {
            let (train, test) = split_alternating(&ds);
            let options = ProtocolOptions {
                scale_grid: vec![3, 4, 5],
                ..reproduction_options()
            };
            run_protocol(&train, &test, &options)
        });
        match result {
            Ok(out) => {
                let err = out.evaluation.error_rate;
                ok &= err <= 0.02;
                detail.push(format!("CUReT error {:.2}% (limit 2%)", 100.0 * err));
            }
            Err(e) => {
                ok = false;
                detail.push(format!("CUReT failed: {e}"));
            }
        }
    }
    check(ok, detail.join("; "))
}

/// Name, time budget and check of one criterion.
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("1 convolution oracle", Duration::from_secs(1), convolution_oracle),
        ("2 frame check", Duration::from_secs(1), frame_check),
        ("3 path combinatorics", Duration::from_secs(1), path_combinatorics),
        ("4 contraction", Duration::from_secs(30), contraction),
        (
            "5 translation invariance trend",
            Duration::from_secs(30),
            translation_trend,
        ),
        (
            "6 deformation stability trend",
            Duration::from_secs(60),
            deformation_trend,
        ),
        ("7 PCA and classifier oracles", Duration::from_secs(10), pca_oracle),
        ("8 threshold equivalence", Duration::from_secs(5), threshold_equivalence),
        (
            "9 MNIST small-training reproduction",
            Duration::from_secs(15 * 60),
            mnist_reproduction,
        ),
        (
            "10 USPS / CUReT (optional)",
            Duration::from_secs(60 * 60),
            optional_datasets,
        ),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        let over = elapsed > budget;
        match outcome {
            Outcome::Pass(d) if !over => println!("PASS {name}: {d} [{timing}]"),
            Outcome::Pass(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [over time budget: {timing}]");
            }
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{timing}]");
            }
            Outcome::Skip(d) => println!("SKIP {name}: {d}"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
