//! End-to-end acceptance checks, one test per criterion. Each prints a single
//! PASS/FAIL line with its measurements.

mod common;

use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwsim::detloss::{
    match_patches, object_focused_loss, patch_perceptual_loss, Assignment, BBox, Prediction,
    MATCH_THRESHOLD,
};
use uwsim::fitting::{finite_diff_check, fit, FitConfig, Sample, GRAD_TOLERANCE};
use uwsim::imaging::{load_depth, load_rgb};
use uwsim::metrics::{self, MetricConfig};
use uwsim::physics::{synthesize, ForwardState};
use uwsim::{DepthMap, FusionFilter, PhysicalParams, RgbImage};

fn random_params(rng: &mut ChaCha8Rng, m: usize, fusion: usize) -> PhysicalParams {
    let three =
        |rng: &mut ChaCha8Rng, lo: f64, hi: f64| std::array::from_fn(|_| rng.gen_range(lo..hi));
    let theta_f = if fusion == 1 && m == 3 {
        FusionFilter::identity(3)
    } else {
        let mut weights = vec![0.0; 3 * fusion * fusion * m];
        let f = FusionFilter::new(fusion, fusion, m, weights.clone()).unwrap();
        for l in 0..3 {
            for dy in 0..fusion {
                for dx in 0..fusion {
                    for c in 0..m {
                        let base = if dy == 0 && dx == 0 && c == l {
                            0.8
                        } else {
                            0.0
                        };
                        weights[f.index(l, dy, dx, c)] = base + rng.gen_range(-0.05..0.05);
                    }
                }
            }
        }
        FusionFilter::new(fusion, fusion, m, weights).unwrap()
    };
    PhysicalParams {
        beta: three(rng, 0.05, 2.0),
        alpha: three(rng, 0.05, 2.0),
        big_b: three(rng, 0.1, 0.9),
        q: rng.gen_range(5.0..7.0),
        kernel_size: 5,
        theta_f,
    }
}

/// Random 8x8 instance whose forward pass stays clear of the output clamp
/// and whose target differs from the prediction by at least 5e-3 per sample,
/// so the L1 loss is smooth within the finite-difference stencil.
fn gradient_instance(rng: &mut ChaCha8Rng) -> (Sample, PhysicalParams) {
    loop {
        let with_aux = rng.gen_bool(0.5);
        let fusion = if rng.gen_bool(0.5) { 3 } else { 1 };
        let m = if with_aux { 6 } else { 3 };
        let params = random_params(rng, m, fusion);
        let rgb = random_rgb(rng, 8, 8, 0.0, 0.5);
        let depth = random_depth(rng, 8, 8);
        let aux = with_aux.then(|| random_rgb(rng, 8, 8, 0.0, 0.3));
        let state = ForwardState::new(&rgb, &depth, &params, aux.as_ref()).unwrap();
        let pre = state.pre_clamp.data();
        if pre.iter().any(|v| !(1e-3..=1.0 - 1e-3).contains(v)) {
            continue;
        }
        let target: Vec<f64> = pre
            .iter()
            .map(|&v| {
                let off = rng.gen_range(5e-3..0.05);
                if (rng.gen_bool(0.5) && v + off <= 1.0) || v - off < 0.0 {
                    v + off
                } else {
                    v - off
                }
            })
            .collect();
        let mut sample = Sample::new(rgb, depth, RgbImage::new(8, 8, target).unwrap());
        sample.aux = aux;
        return (sample, params);
    }
}

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    let mut scalars = 0;
    for trial in 0..100 {
        let (sample, params) = gradient_instance(&mut rng);
        let report = finite_diff_check(&sample, &params, 1e-4).unwrap();
        scalars += report.entries.len();
        worst = worst.max(report.max_rel_error());
        for e in report.failures(GRAD_TOLERANCE) {
            failures.push(format!(
                "trial {trial} {}: {} vs {}",
                e.name, e.analytic, e.numeric
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = failures.is_empty() && secs < 30.0;
    report(
        1,
        "gradient fidelity",
        passed,
        &format!("100 instances, {scalars} scalars, max rel error {worst:.2e}, {secs:.2}s"),
    );
    assert!(failures.is_empty(), "{failures:#?}");
    assert!(secs < 30.0, "took {secs}s");
}

#[test]
fn criterion_2_parameter_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = PhysicalParams {
        beta: [1.0, 0.9, 1.1],
        alpha: [2.0, 1.8, 2.2],
        big_b: [0.8, 0.75, 0.85],
        q: 6.0,
        kernel_size: 1,
        ..PhysicalParams::default()
    };
    let samples: Vec<Sample> = (0..20)
        .map(|_| {
            let rgb = random_rgb(&mut rng, 32, 32, 0.0, 0.2);
            let depth = random_depth(&mut rng, 32, 32);
            let target = synthesize(&rgb, &depth, &truth, None).unwrap();
            Sample::new(rgb, depth, target)
        })
        .collect();
    let mut init = truth.clone();
    for l in 0..3 {
        init.beta[l] *= 1.0 + rng.gen_range(-0.3..0.3);
        init.alpha[l] *= 1.0 + rng.gen_range(-0.3..0.3);
        init.big_b[l] = (init.big_b[l] * (1.0 + rng.gen_range(-0.3..0.3))).min(1.0);
    }
    let cfg = FitConfig {
        learning_rate: 2.0,
        epochs: 200,
        decay_start: 0,
        ..FitConfig::default()
    };
    let trace = fit(&samples, &init, &cfg).unwrap();
    let p = &trace.params;
    let rel = |got: f64, want: f64| (got / want - 1.0).abs();
    let worst = (0..3)
        .flat_map(|l| {
            [
                rel(p.beta[l], truth.beta[l]),
                rel(p.alpha[l], truth.alpha[l]),
                rel(p.big_b[l], truth.big_b[l]),
            ]
        })
        .fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let passed = worst <= 0.02 && trace.final_loss < 1e-4 && secs < 120.0;
    report(
        2,
        "parameter recovery",
        passed,
        &format!(
            "worst relative error {:.2}%, final loss {:.3e}, {secs:.2}s",
            worst * 100.0,
            trace.final_loss
        ),
    );
    assert!(worst <= 0.02, "worst relative error {worst}, params {p:?}");
    assert!(trace.final_loss < 1e-4, "final loss {}", trace.final_loss);
    assert!(secs < 120.0);
}

#[test]
fn criterion_3_metric_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = MetricConfig::default();
    let mut worst_ssim = 0.0f64;
    let mut worst_pcqi = 0.0f64;
    let mut exact = true;
    for _ in 0..10 {
        let a = random_rgb(&mut rng, 24, 20, 0.0, 1.0);
        exact &= metrics::mse(&a, &a).unwrap() == 0.0;
        exact &= metrics::psnr(&a, &a).unwrap() == f64::INFINITY;
        worst_ssim = worst_ssim.max((metrics::ssim(&a, &a, &cfg).unwrap() - 1.0).abs());
        worst_pcqi = worst_pcqi.max((metrics::pcqi(&a, &a, &cfg).unwrap() - 1.0).abs());
    }
    let csv = {
        let a = random_rgb(&mut rng, 16, 16, 0.0, 1.0);
        let ev = metrics::evaluate(
            std::slice::from_ref(&a),
            Some(std::slice::from_ref(&a)),
            &cfg,
        )
        .unwrap();
        ev.to_csv(&["a".into()]).unwrap()
    };
    let serialized = csv.lines().nth(1).unwrap().starts_with("a,0,Inf,");
    let passed = exact && worst_ssim <= 1e-9 && worst_pcqi <= 1e-9 && serialized;
    report(
        3,
        "metric identity",
        passed,
        &format!(
            "mse=0 and psnr=Inf exact: {exact}, |ssim-1| {worst_ssim:.1e}, |pcqi-1| {worst_pcqi:.1e}"
        ),
    );
    assert!(exact && serialized);
    assert!(worst_ssim <= 1e-9 && worst_pcqi <= 1e-9);
}

#[test]
fn criterion_4_no_reference_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = MetricConfig::default();
    let mut worst_uicm = 0.0f64;
    let mut worst_uism = 0.0f64;
    let mut worst_linear = 0.0f64;
    for _ in 0..10 {
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let gray: Vec<f64> = (0..w * h)
            .flat_map(|_| {
                let v: f64 = rng.gen();
                [v; 3]
            })
            .collect();
        let gray = RgbImage::new(w, h, gray).unwrap();
        worst_uicm = worst_uicm.max(metrics::uicm(&gray, &cfg).abs());

        let c: [f64; 3] = std::array::from_fn(|_| rng.gen());
        let flat = RgbImage::filled(w, h, c).unwrap();
        worst_uism = worst_uism.max(metrics::uism(&flat, &cfg).unwrap().abs());

        let img = random_rgb(&mut rng, w, h, 0.0, 1.0);
        let base = metrics::uiqm(&img, &cfg).unwrap();
        let doubled = MetricConfig {
            uiqm_coeffs: cfg.uiqm_coeffs.map(|v| 2.0 * v),
            ..cfg.clone()
        };
        let twice = metrics::uiqm(&img, &doubled).unwrap();
        worst_linear = worst_linear.max((twice - 2.0 * base).abs());
    }
    let passed = worst_uicm <= 1e-9 && worst_uism == 0.0 && worst_linear <= 1e-12;
    report(
        4,
        "no-reference properties",
        passed,
        &format!(
            "|uicm(gray)| {worst_uicm:.1e}, |uism(const)| {worst_uism:.1e}, uiqm linearity {worst_linear:.1e}"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_5_matching_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut orphaned = 0;
    let mut objects = 0;
    for _ in 0..500 {
        let gts: Vec<_> = (0..rng.gen_range(0..=5))
            .map(|_| random_gt(&mut rng, 3))
            .collect();
        let n = rng.gen_range(5..=100);
        let patches = random_patches(&mut rng, &gts, n);
        let got = match_patches(&patches, &gts, MATCH_THRESHOLD);
        let want = brute_force_match(&patches, &gts, MATCH_THRESHOLD);
        if got != want {
            mismatches += 1;
        }
        objects += got.iter().filter(|a| a.is_object()).count();
        for g in 0..gts.len() {
            if !got
                .iter()
                .any(|a| matches!(a, Assignment::Object { gt, .. } if *gt == g))
            {
                orphaned += 1;
            }
        }
    }
    let passed = mismatches == 0 && orphaned == 0;
    report(
        5,
        "matching oracle",
        passed,
        &format!(
            "500 scenes, {objects} object patches, {mismatches} mismatches, {orphaned} unmatched gts, {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert_eq!(mismatches, 0);
    assert_eq!(orphaned, 0);
}

/// Random box the matcher leaves as background when appended to `patches`.
fn background_box(
    rng: &mut ChaCha8Rng,
    patches: &[BBox],
    gts: &[uwsim::detloss::GtBox],
    base: &[Assignment],
) -> BBox {
    loop {
        let b = random_box(rng);
        let mut extended = patches.to_vec();
        extended.push(b);
        let a = match_patches(&extended, gts, MATCH_THRESHOLD);
        let appended_background = a[base.len()..].iter().all(|x| *x == Assignment::Background);
        if a[..base.len()] == *base && appended_background {
            return b;
        }
    }
}

fn perfect(assignments: &[Assignment], classes: usize) -> Vec<Prediction> {
    assignments
        .iter()
        .map(|a| {
            let mut pcls = vec![0.0; classes + 1];
            pcls[a.class()] = 1.0;
            let ploc = match a {
                Assignment::Object { gloc, .. } => *gloc,
                Assignment::Background => [0.5; 4],
            };
            Prediction { pcls, ploc }
        })
        .collect()
}

#[test]
fn criterion_6_object_focused_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let classes = 4;
    let mut of_changed = 0;
    let mut lp_changed = 0;
    let mut nonzero_perfect = 0;
    for _ in 0..200 {
        let gts: Vec<_> = (0..rng.gen_range(1..=5))
            .map(|_| random_gt(&mut rng, classes))
            .collect();
        let n = rng.gen_range(5..=60);
        let mut patches = random_patches(&mut rng, &gts, n);
        let assignments = match_patches(&patches, &gts, MATCH_THRESHOLD);
        let mut preds: Vec<Prediction> = (0..patches.len())
            .map(|_| random_prediction(&mut rng, classes))
            .collect();
        let of = object_focused_loss(&preds, &assignments).unwrap();
        let lp = patch_perceptual_loss(&preds, &assignments).unwrap();

        let ideal = perfect(&assignments, classes);
        if object_focused_loss(&ideal, &assignments).unwrap().total != 0.0
            || patch_perceptual_loss(&ideal, &assignments).unwrap().total != 0.0
        {
            nonzero_perfect += 1;
        }

        let base = assignments.clone();
        for _ in 0..50 {
            let b = background_box(&mut rng, &patches, &gts, &base);
            patches.push(b);
            preds.push(random_prediction(&mut rng, classes));
        }
        let extended = match_patches(&patches, &gts, MATCH_THRESHOLD);
        assert_eq!(extended[..base.len()], base[..]);
        assert!(extended[base.len()..]
            .iter()
            .all(|a| *a == Assignment::Background));
        let of2 = object_focused_loss(&preds, &extended).unwrap();
        let lp2 = patch_perceptual_loss(&preds, &extended).unwrap();
        if of2.total.to_bits() != of.total.to_bits() {
            of_changed += 1;
        }
        if lp2.total != lp.total {
            lp_changed += 1;
        }
    }
    let passed = of_changed == 0 && lp_changed >= 190 && nonzero_perfect == 0;
    report(
        6,
        "object-focused loss semantics",
        passed,
        &format!(
            "L_of changed in {of_changed}/200, L_p changed in {lp_changed}/200, nonzero perfect losses {nonzero_perfect}"
        ),
    );
    assert_eq!(of_changed, 0);
    assert!(lp_changed >= 190);
    assert_eq!(nonzero_perfect, 0);
}

#[test]
fn criterion_7_physics_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_haze = 0.0f64;
    let mut identical = true;
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
        let rgb = random_rgb(&mut rng, w, h, 0.0, 1.0);
        let params = PhysicalParams {
            beta: std::array::from_fn(|_| rng.gen_range(0.1..3.0)),
            alpha: std::array::from_fn(|_| rng.gen_range(0.1..3.0)),
            big_b: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
            kernel_size: 1,
            ..PhysicalParams::default()
        };
        let far = DepthMap::unnormalized(w, h, vec![50.0; w * h]).unwrap();
        let state = ForwardState::new(&rgb, &far, &params, None).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let want = params.big_b[c] + state.i_fsc.get(x, y, c);
                    worst_haze = worst_haze.max((state.i_add.get(x, y, c) - want).abs());
                }
            }
        }

        let clear = PhysicalParams {
            beta: [0.0; 3],
            alpha: [0.0; 3],
            kernel_size: 1,
            ..params
        };
        let depth = random_depth(&mut rng, w, h);
        let out = synthesize(&rgb, &depth, &clear, None).unwrap();
        identical &= out
            .data()
            .iter()
            .zip(rgb.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let passed = worst_haze < 1e-2 && identical;
    report(
        7,
        "physics limits",
        passed,
        &format!("max |I_add - (B + I_fsc)| at d=50: {worst_haze:.2e}, clear water identity: {identical}"),
    );
    assert!(worst_haze < 1e-2);
    assert!(identical);
}

fn golden_run() -> (Vec<u64>, String) {
    let rgb = load_rgb(fixture_path("texture.ppm")).unwrap();
    let depth = load_depth(fixture_path("depth.pgm")).unwrap();
    let params = PhysicalParams::from_json_str(
        &std::fs::read_to_string(fixture_path("params.json")).unwrap(),
    )
    .unwrap();
    let out = synthesize(&rgb, &depth, &params, None).unwrap();
    let reference = load_rgb(fixture_path("texture_ref.ppm")).unwrap();
    let ev = metrics::evaluate(
        &[out.clone(), rgb.clone()],
        Some(&[reference.clone(), reference]),
        &MetricConfig::default(),
    )
    .unwrap();
    let csv = ev.to_csv(&["synth".into(), "texture".into()]).unwrap();
    (out.data().iter().map(|v| v.to_bits()).collect(), csv)
}

#[test]
fn criterion_8_golden_determinism() {
    let pool = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let first = golden_run();
    let again = golden_run();
    let one = pool(1).install(golden_run);
    let four = pool(4).install(golden_run);
    let passed = first == again && first == one && first == four;
    report(
        8,
        "golden determinism",
        passed,
        "synthesize + evaluate on 16x16 fixtures, repeated and on 1/4-thread pools",
    );
    assert!(passed);
}
