//! Acceptance suite. Runs every criterion in sequence (timing checks need a
//! quiet machine), prints one PASS/FAIL line each and exits non-zero if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use scq::codes::{sign_codes, BinaryCodes};
use scq::dual::{dual_gradient_v1, solve_nu};
use scq::eval::{evaluate, mean_average_precision, EvalOptions};
use scq::io;
use scq::itq::{train_itq, DEFAULT_ITQ_ITERS};
use scq::linalg::{gram_eigendecomposition, pca_fit, zero_center, FeatureMatrix, ProjectionMatrix};
use scq::model::{HashModel, Method};
use scq::oge::train_oge;
use scq::one::train_one;
use scq::pipeline::{train_model, PipelineConfig};
use scq::scale::{compute_s_max_var, formula_scale, retained_variance_fraction};
use scq::synth;
use scq::train::{quantization_loss, LossTrace, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scaled_gaussian(n: usize, d: usize, seed: u64, bits: usize) -> FeatureMatrix {
    let x = zero_center(&synth::gaussian_matrix(n, d, seed)).unwrap().0;
    let s = formula_scale(&x, bits).unwrap();
    x.scaled(s).unwrap()
}

fn per_bit_loss(x: &FeatureMatrix, v: &ProjectionMatrix) -> f64 {
    let b = sign_codes(&x.project(v.data()));
    quantization_loss(&b, x, v).unwrap() / v.bits() as f64
}

struct Fits {
    one: Vec<(ProjectionMatrix, LossTrace, Duration)>,
    oge: Vec<(ProjectionMatrix, LossTrace, Duration)>,
    itq: Vec<LossTrace>,
}

fn fit_random_seeds() -> Fits {
    let (n, d, bits) = (2000, 64, 16);
    let mut fits = Fits {
        one: Vec::new(),
        oge: Vec::new(),
        itq: Vec::new(),
    };
    for seed in 0..10u64 {
        let x = scaled_gaussian(n, d, 1000 + seed, bits);
        let cfg = TrainConfig::new(bits).with_seed(seed);
        let t = Instant::now();
        let (v, trace) = train_one(&x, &cfg).unwrap();
        fits.one.push((v, trace, t.elapsed()));
        let t = Instant::now();
        let (v, trace) = train_oge(&x, &cfg).unwrap();
        fits.oge.push((v, trace, t.elapsed()));
        fits.itq.push(train_itq(&x, bits, DEFAULT_ITQ_ITERS, seed).unwrap().1);
    }
    fits
}

fn criterion_1(fits: &Fits) -> Outcome {
    let one_err = fits.one.iter().map(|f| f.0.constraint_error()).fold(0.0, f64::max);
    let oge_off = fits
        .oge
        .iter()
        .map(|(v, _, _)| {
            let g = v.gram();
            let mut worst: f64 = 0.0;
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    if i != j {
                        worst = worst.max(g[(i, j)].abs());
                    }
                }
            }
            worst
        })
        .fold(0.0, f64::max);
    let one_time = fits.one.iter().map(|f| f.2).max().unwrap();
    let oge_time = fits.oge.iter().map(|f| f.2).max().unwrap();
    check(
        one_err <= 1e-6 && oge_off <= 1e-6 && one_time <= Duration::from_secs(300) && oge_time <= Duration::from_secs(60),
        format!(
            "max |V'V - I| (OnE) = {one_err:.2e}, max off-diagonal (OgE) = {oge_off:.2e}, slowest OnE {:.2}s, slowest OgE {:.2}s",
            one_time.as_secs_f64(),
            oge_time.as_secs_f64()
        ),
    )
}

fn criterion_2(fits: &Fits) -> Outcome {
    let worst = |traces: &mut dyn Iterator<Item = &LossTrace>| traces.map(|t| t.max_increase()).fold(f64::NEG_INFINITY, f64::max);
    let one = worst(&mut fits.one.iter().map(|f| &f.1));
    let oge = worst(&mut fits.oge.iter().map(|f| &f.1));
    let itq = worst(&mut fits.itq.iter());
    check(
        one <= 1e-10 && oge <= 1e-10 && itq <= 1e-10,
        format!("largest step increase: OnE {one:.2e}, OgE {oge:.2e}, ITQ {itq:.2e} (30 traces)"),
    )
}

/// Column-1 dual value from dense solves: `(1/n)||b - Xv||^2 + nu (v'v - 1)`.
fn dense_dual(x: &DMatrix<f64>, b: &DVector<f64>, nu: f64) -> f64 {
    let n = x.nrows() as f64;
    let m = x.tr_mul(x) + DMatrix::identity(x.ncols(), x.ncols()) * (n * nu);
    let v = m.lu().solve(&x.tr_mul(b)).unwrap();
    (b - x * &v).norm_squared() / n + nu * (v.norm_squared() - 1.0)
}

fn criterion_3() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    let mut worst_root: f64 = 0.0;
    let mut r = synth::rng(77);
    for inst in 0..100u64 {
        let x = synth::gaussian_matrix(10, 4, 500 + inst);
        let b = DVector::from_iterator(10, (0..10).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }));
        let fm = FeatureMatrix::new(x.clone()).unwrap();
        let es = gram_eigendecomposition(&fm).unwrap();
        let xtb = x.tr_mul(&b);
        let lower = es.nu_lower_bound();
        let nu = lower + 10f64.powf(r.random_range(-1.5..1.0));
        let g = dual_gradient_v1(&es, &xtb, nu).unwrap();
        let h = 1e-5 * nu.abs().max(1e-2);
        // fourth-order central difference
        let fd = (-dense_dual(&x, &b, nu + 2.0 * h) + 8.0 * dense_dual(&x, &b, nu + h) - 8.0 * dense_dual(&x, &b, nu - h)
            + dense_dual(&x, &b, nu - 2.0 * h))
            / (12.0 * h);
        worst_rel = worst_rel.max((fd - g).abs() / g.abs());
        let root = solve_nu(&es, &xtb, 1e-4).unwrap();
        worst_root = worst_root.max(dual_gradient_v1(&es, &xtb, root).unwrap().abs());
    }
    check(
        worst_rel <= 1e-5 && worst_root <= 1e-4,
        format!("worst relative gradient error {worst_rel:.2e}, worst |gradient| at returned nu {worst_root:.2e} (100 instances)"),
    )
}

fn criterion_4() -> Outcome {
    let x = scaled_gaussian(2000, 2, 40, 1);
    // run to a fixed point of the alternation so B is the converged code
    let cfg = TrainConfig::new(1).with_seed(0).with_eps(1e-12).with_max_iter(1000);
    let (v, trace) = train_one(&x, &cfg).unwrap();
    let b = sign_codes(&x.project(v.data())).to_matrix();
    let n = x.n() as f64;
    let col = b.column(0).into_owned();
    let xtb = x.data().tr_mul(&col);
    let gram = x.data().tr_mul(x.data());
    let bb = col.norm_squared();
    let mut grid_fixed = f64::INFINITY;
    let mut grid_joint = f64::INFINITY;
    let steps = 1_000_000;
    for i in 0..steps {
        let t = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
        let w = DVector::from_vec(vec![t.cos(), t.sin()]);
        let quad = w.dot(&(&gram * &w));
        grid_fixed = grid_fixed.min((bb - 2.0 * w.dot(&xtb) + quad) / n);
        let u = x.data() * &w;
        let joint: f64 = u.iter().map(|a| (1.0 - a.abs()).powi(2)).sum::<f64>() / n;
        grid_joint = grid_joint.min(joint);
    }
    let ours_fixed = (b.column(0) - x.data() * v.data().column(0)).norm_squared() / n;
    let ours_joint = trace.last();
    check(
        ours_fixed <= grid_fixed + 1e-6 && ours_joint <= grid_joint * 1.05,
        format!(
            "fixed-B loss {ours_fixed:.8} vs grid {grid_fixed:.8}; joint loss {ours_joint:.6} vs grid {grid_joint:.6}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let x = zero_center(&synth::two_cluster_toy(200, 11)).unwrap().0;
    let s_max = compute_s_max_var(&x).unwrap();
    let top = pca_fit(&x, 1).unwrap();
    let axis = top.projection.column(0).into_owned();
    let gram_desc: Vec<f64> = gram_eigendecomposition(&x).unwrap().descending_eigenvalues().iter().copied().collect();
    let fit = |factor: f64| {
        let s = factor * s_max;
        let xs = x.scaled(s).unwrap();
        let (v, _) = train_one(&xs, &TrainConfig::new(1).with_seed(2)).unwrap();
        let scaled: Vec<f64> = gram_desc.iter().map(|l| l * s * s).collect();
        let cos = v.data().column(0).dot(&axis).abs();
        (cos, per_bit_loss(&xs, &v), retained_variance_fraction(&xs, &v, &scaled, 1).unwrap())
    };
    let (cos1, loss1, var1) = fit(1.0);
    let (_, loss12, var12) = fit(12.0);
    let elapsed = start.elapsed();
    check(
        cos1 > 0.99 && loss12 < loss1 && var12 < var1 && elapsed < Duration::from_secs(5),
        format!(
            "|cos| at s_max_var {cos1:.4}; per-bit loss {loss1:.4} -> {loss12:.4}; retained variance {var1:.4} -> {var12:.4}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let (n, bits) = (2000, 16);
    let spectrum = synth::harmonic_spectrum(64);
    let (mut one_loss, mut itq_loss, mut one_var, mut itq_var_min, mut itq_var_max) = (0.0, 0.0, 0.0, f64::INFINITY, 0.0f64);
    let seeds = 5;
    for seed in 0..seeds {
        let x = zero_center(&synth::anisotropic_gaussian(n, &spectrum, 300 + seed)).unwrap().0;
        let s = formula_scale(&x, bits).unwrap();
        let xs = x.scaled(s).unwrap();
        let gram_desc: Vec<f64> = gram_eigendecomposition(&xs).unwrap().descending_eigenvalues().iter().copied().collect();
        let (v_one, _) = train_one(&xs, &TrainConfig::new(bits).with_seed(seed)).unwrap();
        let (v_itq, _) = train_itq(&xs, bits, DEFAULT_ITQ_ITERS, seed).unwrap();
        one_loss += per_bit_loss(&xs, &v_one);
        itq_loss += per_bit_loss(&xs, &v_itq);
        one_var += retained_variance_fraction(&xs, &v_one, &gram_desc, bits).unwrap();
        let iv = retained_variance_fraction(&xs, &v_itq, &gram_desc, bits).unwrap();
        itq_var_min = itq_var_min.min(iv);
        itq_var_max = itq_var_max.max(iv);
    }
    let k = seeds as f64;
    let (one_loss, itq_loss, one_var) = (one_loss / k, itq_loss / k, one_var / k);
    check(
        one_loss < itq_loss && one_var < 1.0 && (itq_var_min - 1.0).abs() < 1e-8 && (itq_var_max - 1.0).abs() < 1e-8,
        format!(
            "mean per-bit loss OnE {one_loss:.4} vs ITQ {itq_loss:.4}; retained variance OnE {:.1}% vs ITQ {:.1}%",
            100.0 * one_var,
            100.0 * itq_var_max
        ),
    )
}

/// Straightforward reference: full sort by (distance, index) per query.
fn naive_metrics(db: &BinaryCodes, dl: &[i64], q: &BinaryCodes, ql: &[i64], k: usize) -> (f64, f64, f64) {
    let dist = |i: usize, j: usize| (0..db.bits()).filter(|&t| db.get(i, t) != q.get(j, t)).count();
    let (mut map, mut r2, mut pk) = (0.0, 0.0, 0.0);
    for j in 0..q.n() {
        let mut order: Vec<(usize, usize)> = (0..db.n()).map(|i| (dist(i, j), i)).collect();
        order.sort();
        let relevant = dl.iter().filter(|&&l| l == ql[j]).count();
        let mut hits = 0.0;
        let mut ap = 0.0;
        for (rank, &(_, i)) in order.iter().enumerate() {
            if dl[i] == ql[j] {
                hits += 1.0;
                ap += hits / (rank + 1) as f64;
            }
        }
        if relevant > 0 {
            map += ap / relevant as f64;
        }
        let within: Vec<usize> = order.iter().filter(|(d, _)| *d <= 2).map(|&(_, i)| i).collect();
        if !within.is_empty() {
            r2 += within.iter().filter(|&&i| dl[i] == ql[j]).count() as f64 / within.len() as f64;
        }
        let kk = k.min(db.n());
        pk += order[..kk].iter().filter(|&&(_, i)| dl[i] == ql[j]).count() as f64 / kk as f64;
    }
    let m = q.n() as f64;
    (map / m, r2 / m, pk / m)
}

fn criterion_7() -> Outcome {
    let mut r = synth::rng(2024);
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let n = r.random_range(1..=500);
        let nq = r.random_range(1..=20);
        let bits = r.random_range(1..=24);
        let classes = r.random_range(1..=6);
        let db = sign_codes(&synth::gaussian_matrix(n, bits, 900 + inst));
        let q = sign_codes(&synth::gaussian_matrix(nq, bits, 5000 + inst));
        let dl: Vec<i64> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let ql: Vec<i64> = (0..nq).map(|_| r.random_range(0..classes)).collect();
        let got = evaluate(&db, &dl, &q, &ql, &EvalOptions::default()).unwrap();
        let (map, r2, pk) = naive_metrics(&db, &dl, &q, &ql, 1000);
        worst = worst
            .max((got.map - map).abs())
            .max((got.prec_at_r2 - r2).abs())
            .max((got.prec_at_k - pk).abs());
    }
    let db = BinaryCodes::from_signs(4, 3, vec![1, 1, 1, -1, 1, 1, -1, -1, 1, -1, -1, -1]).unwrap();
    let q = BinaryCodes::from_signs(1, 3, vec![1, 1, 1]).unwrap();
    let hand = mean_average_precision(&db, &[1, 0, 1, 0], &q, &[1]).unwrap();
    check(
        worst <= 1e-12 && (hand - 5.0 / 6.0).abs() <= f64::EPSILON,
        format!("largest deviation from the naive reference {worst:.1e} (50 instances); hand case AP = {hand}"),
    )
}

fn criterion_8() -> Outcome {
    let (d, bits, iters) = (64, 16, 8);
    let time_per_iter = |n: usize| {
        let x = scaled_gaussian(n, d, 8, bits);
        // tiny tolerance so the run lasts the full iteration budget
        let cfg = TrainConfig::new(bits).with_seed(1).with_max_iter(iters).with_eps(1e-300);
        (0..3)
            .map(|_| {
                let t = Instant::now();
                let (_, trace) = train_oge(&x, &cfg).unwrap();
                (t.elapsed().as_secs_f64(), trace.iterations())
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
    };
    let (t1, i1) = time_per_iter(20_000);
    let (t2, i2) = time_per_iter(40_000);
    let ratio = if i1 == i2 { t2 / t1 } else { (t2 / i2 as f64) / (t1 / i1 as f64) };
    check(
        (1.6..=2.6).contains(&ratio),
        format!("OgE wall-clock n=20000: {t1:.3}s ({i1} it), n=40000: {t2:.3}s ({i2} it), ratio {ratio:.2}"),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let mut problems = Vec::new();

    let x = synth::gaussian_matrix(37, 5, 3).map(|v| v as f32 as f64);
    io::write_features(&p("x.scqf"), &x).unwrap();
    let back = io::read_features(&p("x.scqf")).unwrap();
    if back.iter().zip(x.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        problems.push("features");
    }
    let labels = vec![4, -2, 0, 9];
    io::write_labels(&p("y.txt"), &labels).unwrap();
    if io::read_labels(&p("y.txt")).unwrap() != labels {
        problems.push("labels");
    }
    let codes = sign_codes(&synth::gaussian_matrix(9, 21, 4));
    io::write_codes(&p("c.scqb"), &codes).unwrap();
    if io::read_codes(&p("c.scqb")).unwrap() != codes {
        problems.push("codes");
    }

    let (raw, _) = synth::labeled_clusters(120, 12, 3, 1.5, 6);
    for method in [Method::One, Method::Oge, Method::Itq] {
        let cfg = PipelineConfig::new(method, TrainConfig::new(8).with_seed(5));
        let (a, _) = train_model(&raw, &cfg).unwrap();
        let (b, _) = train_model(&raw, &cfg).unwrap();
        if a.to_text() != b.to_text() {
            problems.push("determinism");
        }
        a.save(&p("m.model")).unwrap();
        let loaded = HashModel::load(&p("m.model")).unwrap();
        loaded.save(&p("m2.model")).unwrap();
        if loaded != a || std::fs::read(p("m.model")).unwrap() != std::fs::read(p("m2.model")).unwrap() {
            problems.push("model");
        }
    }

    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let exe = env!("CARGO_BIN_EXE_scq");
    let run = |args: &[&str]| Command::new(exe).args(args).env_remove("SCQ_SEED").output().unwrap();
    let s = |path: std::path::PathBuf| path.to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["train", "--method", "one", "--features", &s(fixtures.join("db.scqf")), "--bits", "16", "--seed", "3", "--out", &s(p("f.model"))]
            .into_iter()
            .map(String::from)
            .collect(),
        vec!["encode", "--model", &s(p("f.model")), "--features", &s(fixtures.join("db.scqf")), "--out", &s(p("db.scqb"))]
            .into_iter()
            .map(String::from)
            .collect(),
        vec!["encode", "--model", &s(p("f.model")), "--features", &s(fixtures.join("query.scqf")), "--out", &s(p("q.scqb"))]
            .into_iter()
            .map(String::from)
            .collect(),
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = run(&args);
        if !out.status.success() {
            problems.push("cli step");
        }
    }
    let out = run(&[
        "eval",
        "--db-codes",
        &s(p("db.scqb")),
        "--db-labels",
        &s(fixtures.join("db_labels.txt")),
        "--query-codes",
        &s(p("q.scqb")),
        "--query-labels",
        &s(fixtures.join("query_labels.txt")),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let metric_lines = stdout.lines().filter(|l| l.ends_with('%')).count();
    if !out.status.success() || metric_lines != 3 {
        problems.push("cli eval");
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("features, labels, codes and models round-trip; CLI printed: {}", stdout.trim().replace('\n', ", "))
        } else {
            format!("failed: {}", problems.join(", "))
        },
    )
}

fn main() {
    // cargo passes harness flags such as --nocapture or a filter; a filter that
    // does not mention this suite skips it
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let fits = fit_random_seeds();
    let results: Vec<(&str, Outcome)> = vec![
        ("orthonormality and orthogonality", criterion_1(&fits)),
        ("loss monotonicity", criterion_2(&fits)),
        ("dual gradient and root", criterion_3()),
        ("brute-force optimality in 2-D", criterion_4()),
        ("two-cluster toy scale behaviour", criterion_5()),
        ("quantization loss and retained variance vs ITQ", criterion_6()),
        ("retrieval metric oracles", criterion_7()),
        ("OgE scaling in n", criterion_8()),
        ("round-trip and determinism", criterion_9()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
