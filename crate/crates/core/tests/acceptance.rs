//! Acceptance gate: runs each criterion and prints one PASS/FAIL line apiece.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use maskcraft::metrics::{
    auc, deletion_curve, deletion_curve_ordered, insertion_curve, pointing_iou, random_order, spearman, AnnotationBox,
    Baseline, MetricCurve,
};
use maskcraft::optimizer::{explain, init_mask, step, Explainer};
use maskcraft::reconstruction::{
    box_sweep, optimize_latent, reconstruct, t_score, weight_mask, BoundingBoxGrid, LatentOptions, LinearGenerator,
    ReconstructionConfig,
};
use maskcraft::{
    bilinear_resize, total_variation, CallCounter, ConstantClassifier, ImageTensor, MaskGrid, OptimizerConfig,
    PlantedClassifier, RandomSource, Rect,
};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_grid(rng: &mut RandomSource, h: usize, w: usize) -> MaskGrid {
    MaskGrid::from_fn(h, w, |_, _| rng.uniform())
}

fn criterion_1() -> Outcome {
    let mut rng = RandomSource::new(2024);
    let mut worst = [0.0f64; 6];
    for _ in 0..25 {
        let (h, w) = (2 + (rng.next_u64() % 6) as usize, 2 + (rng.next_u64() % 6) as usize);
        let g = random_grid(&mut rng, h, w);
        let rows = grid_rows(&g);
        worst[0] = worst[0].max((total_variation(&g) - tv_oracle(&rows)).abs());

        let (oh, ow) = (h + (rng.next_u64() % 9) as usize, w + (rng.next_u64() % 9) as usize);
        let up = bilinear_resize(&g, oh, ow).unwrap();
        let expect = bilinear_oracle(&rows, oh, ow);
        for (a, b) in up.data().iter().zip(expect.iter().flatten()) {
            worst[1] = worst[1].max((a - b).abs());
        }

        let n = 2 + (rng.next_u64() % 99) as usize;
        let mut xs: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        xs.sort_by(f64::total_cmp);
        xs[0] = 0.0;
        xs[n - 1] = 1.0;
        xs.dedup();
        let ys: Vec<f64> = (0..xs.len()).map(|_| rng.uniform()).collect();
        let curve = MetricCurve::new(xs.clone(), ys.clone()).unwrap();
        worst[2] = worst[2].max((auc(&curve) - auc_oracle(&xs, &ys, 400_000)).abs());

        let (sh, sw) = (4 + (rng.next_u64() % 12) as usize, 4 + (rng.next_u64() % 12) as usize);
        let sal = random_grid(&mut rng, sh, sw);
        let bx = (rng.next_u64() % sw as u64) as usize;
        let by = (rng.next_u64() % sh as u64) as usize;
        let bw = 1 + (rng.next_u64() % (sw - bx) as u64) as usize;
        let bh = 1 + (rng.next_u64() % (sh - by) as u64) as usize;
        let thr = 0.2 + 0.6 * rng.uniform();
        let ann = AnnotationBox {
            x: bx,
            y: by,
            width: bw,
            height: bh,
        };
        let got = pointing_iou(&sal, &ann, thr).unwrap().percent;
        worst[3] = worst[3].max((got - iou_oracle(&grid_rows(&sal), (bx, by, bw, bh), thr)).abs());

        let a: Vec<f64> = (0..2 + rng.next_u64() % 20).map(|_| rng.uniform()).collect();
        let b: Vec<f64> = (0..2 + rng.next_u64() % 20).map(|_| rng.uniform() + 0.3).collect();
        worst[4] = worst[4].max((t_score(&a, &b).unwrap() - welch_oracle(&a, &b)).abs());

        let (ih, iw) = (10 + (rng.next_u64() % 20) as usize, 10 + (rng.next_u64() % 20) as usize);
        let top = (rng.next_u64() % (ih as u64 - 2)) as usize;
        let left = (rng.next_u64() % (iw as u64 - 2)) as usize;
        let rect = Rect::new(
            top,
            left,
            1 + (rng.next_u64() % (ih - top) as u64) as usize,
            1 + (rng.next_u64() % (iw - left) as u64) as usize,
        );
        let s = 3 + 2 * (rng.next_u64() % 5) as usize;
        let wm = weight_mask(&BoundingBoxGrid::new(ih, iw, rect).unwrap(), s).unwrap();
        for (a, b) in wm.data().iter().zip(weight_oracle(ih, iw, rect, s).iter().flatten()) {
            worst[5] = worst[5].max((a - b).abs());
        }
    }
    let tol = [1e-12, 1e-6, 1e-6, 1e-6, 1e-6, 1e-6];
    let names = ["tv", "resize", "auc", "iou", "t", "weight"];
    let ok = worst.iter().zip(tol).all(|(w, t)| *w <= t);
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, format!("25 instances each, max error: {detail}"))
}

fn criterion_2() -> Outcome {
    let mut mismatches = 0;
    let mut edge = (0, 0);
    for case in 0..50u64 {
        let mut rng = RandomSource::new(1000 + case);
        let image = ImageTensor::from_fn(16, 16, |_, _, _| 0.2 + 0.8 * rng.uniform());
        let config = OptimizerConfig {
            grid: (4, 4),
            seed: case,
            learning_rate: 0.5 + rng.uniform(),
            ..OptimizerConfig::default()
        };
        let mut state = init_mask(&config, &mut RandomSource::new(case)).unwrap();
        for &cell in state.on_set.as_slice() {
            state.mask.data_mut()[cell] = 0.05 + 0.95 * rng.uniform();
        }
        state.prev_variation = total_variation(&state.mask);
        state.prev_score = if case % 3 == 0 { None } else { Some(rng.uniform()) };
        let reference = RefState {
            h: 4,
            w: 4,
            mask: state.mask.data().to_vec(),
            on: state.on_set.as_slice().to_vec(),
            off: state.off_set.as_slice().to_vec(),
            prev_p: state.prev_score,
            prev_v: state.prev_variation,
        };
        let (engine, oracle) = match case % 5 {
            // p = 1 and p = 0 exactly.
            0 | 1 => {
                let target = (case % 5) as usize;
                let mut a = ConstantClassifier::new(vec![1.0, 0.0]).unwrap();
                let mut b = a.clone();
                let e = step(&state, &mut a, &image, target, &config, &mut RandomSource::new(case)).unwrap();
                let o = reference_step(
                    &reference,
                    &mut b,
                    &image,
                    target,
                    config.learning_rate,
                    &mut RandomSource::new(case),
                );
                if target == 0 {
                    edge.0 += 1;
                } else {
                    edge.1 += 1;
                }
                (e, o)
            }
            _ => {
                let rect = Rect::new(
                    (rng.next_u64() % 8) as usize,
                    (rng.next_u64() % 8) as usize,
                    4 + (rng.next_u64() % 6) as usize,
                    4 + (rng.next_u64() % 6) as usize,
                );
                let beta = 2.0 + 10.0 * rng.uniform();
                let mut a = PlantedClassifier::new(rect, beta).unwrap();
                let mut b = a.clone();
                let e = step(&state, &mut a, &image, 0, &config, &mut RandomSource::new(case)).unwrap();
                let o = reference_step(
                    &reference,
                    &mut b,
                    &image,
                    0,
                    config.learning_rate,
                    &mut RandomSource::new(case),
                );
                (e, o)
            }
        };
        let same_sets = engine.state.on_set.as_slice() == oracle.on.as_slice()
            && engine.state.off_set.as_slice() == oracle.off.as_slice();
        let same_values = engine
            .state
            .mask
            .data()
            .iter()
            .zip(&oracle.mask)
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        let same_scalars = engine
            .state
            .prev_score
            .zip(oracle.prev_p)
            .is_some_and(|(a, b)| (a - b).abs() <= 1e-12)
            && (engine.state.prev_variation - oracle.prev_v).abs() <= 1e-12;
        if !(same_sets && same_values && same_scalars) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0 && edge.0 > 0 && edge.1 > 0,
        format!(
            "50 cases ({} with p=1, {} with p=0), {mismatches} mismatches",
            edge.0, edge.1
        ),
    )
}

struct PlantedRun {
    iou: f64,
    insertion: f64,
    deletion: f64,
    random_deletion: f64,
    rho: f64,
}

fn planted_run(seed: u64) -> PlantedRun {
    let image = planted_image();
    let rect = planted_rect();
    let mut clf = PlantedClassifier::new(rect, 10.0).unwrap().with_dims(64, 64).unwrap();
    let config = planted_config(seed);
    let mut explainer = Explainer::new(&image, 0, &config).unwrap();
    let (mut iters, mut ins_aucs) = (Vec::new(), Vec::new());
    for at in (100..=1000).step_by(100) {
        while explainer.iteration() < at {
            explainer.advance(&mut clf).unwrap();
        }
        let s = explainer.saliency();
        let ins = insertion_curve(&image, &s, &mut clf, 0, 100, Baseline::Zeros).unwrap();
        iters.push(at as f64);
        ins_aucs.push(auc(&ins));
    }
    let saliency = explainer.finish().saliency;
    let iou = pointing_iou(&saliency, &AnnotationBox::from(rect), 0.5)
        .unwrap()
        .percent;
    let del = auc(&deletion_curve(&image, &saliency, &mut clf, 0, 100).unwrap());
    let order = random_order(image.pixel_count(), &mut RandomSource::new(seed + 77));
    let random_deletion = auc(&deletion_curve_ordered(&image, &order, &mut clf, 0, 100).unwrap());
    PlantedRun {
        iou,
        insertion: *ins_aucs.last().unwrap(),
        deletion: del,
        random_deletion,
        rho: spearman(&iters, &ins_aucs),
    }
}

fn criteria_3_4_5() -> (Outcome, Outcome, Outcome) {
    let runs: Vec<PlantedRun> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64).map(|seed| s.spawn(move || planted_run(seed))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let hits = runs.iter().filter(|r| r.iou >= 50.0).count();
    let ious: Vec<String> = runs.iter().map(|r| format!("{:.0}", r.iou)).collect();
    let c3 = check(
        hits >= 8,
        format!("{hits}/10 seeds with IOU >= 50% [{}]", ious.join(" ")),
    );

    let separated = runs.iter().filter(|r| r.insertion > r.deletion).count();
    let mean = |f: fn(&PlantedRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (del, rnd) = (mean(|r| r.deletion), mean(|r| r.random_deletion));
    let c4 = check(
        separated == 10 && rnd - del >= 0.05,
        format!(
            "ins > del on {separated}/10 seeds (mean ins {:.3}, del {del:.3}); random-order del {rnd:.3}, gap {:.3}",
            mean(|r| r.insertion),
            rnd - del
        ),
    );

    let rising = runs.iter().filter(|r| r.rho > 0.0).count();
    let rhos: Vec<String> = runs.iter().map(|r| format!("{:.2}", r.rho)).collect();
    let c5 = check(
        rising >= 8,
        format!("{rising}/10 seeds with positive rank correlation [{}]", rhos.join(" ")),
    );
    (c3, c4, c5)
}

/// Closed-form minimum of `sum_j w_j (A_j z + b_j - I_j)^2`.
fn least_squares_loss(gen: &LinearGenerator, image: &ImageTensor, weight: &MaskGrid, d: usize) -> f64 {
    let rows = image.data().len();
    let a = DMatrix::from_row_slice(rows, d, gen.basis());
    let wv = DVector::from_iterator(rows, weight.data().iter().flat_map(|&w| [w; 3]));
    let r = DVector::from_iterator(rows, image.data().iter().zip(gen.offset()).map(|(i, b)| i - b));
    let mut aw = a.clone();
    for (j, mut row) in aw.row_iter_mut().enumerate() {
        row *= wv[j];
    }
    let normal = a.transpose() * &aw;
    let rhs = aw.transpose() * &r;
    let z = normal
        .cholesky()
        .expect("normal matrix is positive definite")
        .solve(&rhs);
    let resid = &a * z - r;
    resid.iter().zip(wv.iter()).map(|(e, w)| w * e * e).sum()
}

fn criterion_6() -> Outcome {
    let (h, w) = (32, 32);
    let rect = Rect::new(10, 9, 12, 14);
    let boxed = BoundingBoxGrid::new(h, w, rect).unwrap();
    let weight = weight_mask(&boxed, 7).unwrap();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut outside_ok = true;
    for seed in 0..10u64 {
        let d = [4, 8, 12, 16][seed as usize % 4];
        let mut rng = RandomSource::new(500 + seed);
        let image = ImageTensor::from_fn(h, w, |_, _, _| rng.uniform());
        let mut gen = LinearGenerator::seeded(h, w, d, seed).unwrap();
        let optimum = least_squares_loss(&gen, &image, &weight, d);
        let opt = LatentOptions {
            lambda_dis: 0.0,
            seed,
            ..LatentOptions::default()
        };
        let found = optimize_latent(&image, &weight, &mut gen, &opt).unwrap();
        let ratio = found.loss.context / optimum - 1.0;
        worst = worst.max(ratio);
        if ratio > 0.05 {
            failures += 1;
        }
        let generated = maskcraft::reconstruction::GenerativeBackend::generate(&mut gen, &found.z).unwrap();
        let rebuilt = reconstruct(&image, &boxed.grid(), &generated).unwrap();
        for r in 0..h {
            for c in 0..w {
                if !rect.contains(r, c) {
                    for ch in 0..3 {
                        outside_ok &= rebuilt.get(r, c, ch).to_bits() == image.get(r, c, ch).to_bits();
                    }
                }
            }
        }
    }
    check(
        failures == 0 && outside_ok,
        format!(
            "10 seeds (d = 4..16): worst excess over least-squares optimum {:.2}%, outside-box pixels identical: {outside_ok}",
            100.0 * worst
        ),
    )
}

fn criterion_7() -> Outcome {
    let (h, w) = (48, 48);
    let mut rng = RandomSource::new(77);
    let image = ImageTensor::from_fn(h, w, |r, c, ch| {
        (0.5 + 0.3 * ((r as f64 / 6.0).sin() * (c as f64 / 5.0).cos()) + 0.1 * rng.uniform() + 0.05 * ch as f64)
            .clamp(0.0, 1.0)
    });
    let saliency = MaskGrid::indicator(h, w, &Rect::new(12, 10, 24, 28));
    let mut gen = LinearGenerator::seeded(h, w, 8, 3).unwrap();
    let mut clf = ConstantClassifier::new(vec![0.9, 0.1]).unwrap();
    let config = ReconstructionConfig {
        samples: 6,
        latent: LatentOptions {
            lambda_dis: 0.0,
            ..LatentOptions::default()
        },
        ..ReconstructionConfig::default()
    };
    let factors = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
    let records = box_sweep(&image, &saliency, &mut gen, &mut clf, 0, &factors, &config, 11).unwrap();
    let losses: Vec<f64> = records.iter().map(|r| r.mean_context_loss.unwrap()).collect();
    let range = losses.iter().cloned().fold(f64::MIN, f64::max) - losses.iter().cloned().fold(f64::MAX, f64::min);
    let inversions: Vec<f64> = losses.windows(2).filter(|p| p[1] > p[0]).map(|p| p[1] - p[0]).collect();
    let ok = records.len() == 6 && (inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.01 * range));
    let shown: Vec<String> = losses.iter().map(|l| format!("{l:.3}")).collect();
    check(
        ok,
        format!(
            "mean context loss by factor 1.0..0.5: [{}], {} inversions",
            shown.join(" "),
            inversions.len()
        ),
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_maskcraft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn outputs_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("f32" | "json")))
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("in.png");
    maskcraft::io::save_image_png(&planted_image(), &img).unwrap();
    let img = img.to_str().unwrap().to_string();
    let mut notes = Vec::new();
    let mut ok = true;
    for (command, extra) in [
        ("explain", vec!["--iterations", "200", "--grid", "8x8"]),
        (
            "reconstruct",
            vec![
                "--gen-backend",
                "builtin-linear:5",
                "--iterations",
                "150",
                "--samples",
                "4",
                "--latent-dim",
                "8",
                "--latent-iterations",
                "40",
            ],
        ),
    ] {
        let first = tmp.path().join(format!("{command}_a"));
        let second = tmp.path().join(format!("{command}_b"));
        let mut base = vec![
            command,
            "--image",
            &img,
            "--target",
            "0",
            "--backend",
            "builtin-planted:16,24,24,17",
            "--seed",
            "9",
        ];
        base.extend(extra.iter().copied());
        let a = run_cli(&[base.clone(), vec!["--out", first.to_str().unwrap()]].concat());
        if !a.status.success() {
            return Err(format!("{command} failed: {}", String::from_utf8_lossy(&a.stderr)));
        }
        // Second run takes its configuration from the first run's manifest.
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(first.join("manifest.json")).unwrap()).unwrap();
        let cfg = tmp.path().join(format!("{command}_config.json"));
        std::fs::write(&cfg, manifest["config"].to_string()).unwrap();
        let args = manifest["arguments"].as_object().unwrap();
        let mut rerun = vec![
            command.to_string(),
            "--image".into(),
            args["image"].as_str().unwrap().into(),
            "--target".into(),
            args["target"].as_str().unwrap().into(),
            "--backend".into(),
            args["backend"].as_str().unwrap().into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--out".into(),
            second.to_str().unwrap().into(),
        ];
        if let Some(g) = args.get("gen_backend") {
            rerun.extend(["--gen-backend".into(), g.as_str().unwrap().into()]);
        }
        let b = run_cli(&rerun.iter().map(String::as_str).collect::<Vec<_>>());
        if !b.status.success() {
            return Err(format!(
                "{command} rerun failed: {}",
                String::from_utf8_lossy(&b.stderr)
            ));
        }
        let (fa, fb) = (outputs_of(&first), outputs_of(&second));
        let same = !fa.is_empty() && fa == fb;
        ok &= same;
        notes.push(format!("{command}: {} files identical={same}", fa.len()));
    }
    check(ok, notes.join("; "))
}

fn criterion_9() -> Outcome {
    let image = planted_image();
    let mut counted = CallCounter::new(
        PlantedClassifier::new(planted_rect(), 10.0)
            .unwrap()
            .with_dims(64, 64)
            .unwrap(),
    );
    let config = planted_config(3);
    explain(&image, 0, &mut counted, &config).unwrap();
    check(
        counted.score_calls() == config.iterations && counted.batch_calls() == 0,
        format!(
            "N = {}: {} score calls, {} batch calls",
            config.iterations,
            counted.score_calls(),
            counted.batch_calls()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let timed = |f: fn() -> Outcome| {
        let t = Instant::now();
        (f(), t.elapsed())
    };
    let results: Vec<(Outcome, Duration)> = std::thread::scope(|s| {
        let planted = s.spawn(|| {
            let t = Instant::now();
            let r = criteria_3_4_5();
            (r, t.elapsed())
        });
        let others: Vec<_> = [
            criterion_1,
            criterion_2,
            criterion_6,
            criterion_7,
            criterion_8,
            criterion_9,
        ]
        .into_iter()
        .map(|f| s.spawn(move || timed(f)))
        .collect();
        let mut others = others.into_iter().map(|h| h.join().unwrap());
        let ((c3, c4, c5), pt) = planted.join().unwrap();
        let c1 = others.next().unwrap();
        let c2 = others.next().unwrap();
        let c6 = others.next().unwrap();
        let c7 = others.next().unwrap();
        let c8 = others.next().unwrap();
        let c9 = others.next().unwrap();
        vec![c1, c2, (c3, pt), (c4, pt), (c5, pt), c6, c7, c8, c9]
    });
    let names = [
        "unit oracles",
        "optimizer step conformance",
        "planted-feature recovery",
        "insertion/deletion separation",
        "convergence trend",
        "latent-search least-squares oracle",
        "box-sweep monotonicity",
        "CLI determinism",
        "non-intrusiveness audit",
    ];
    let mut failed = 0;
    for (i, ((outcome, took), name)) in results.iter().zip(names).enumerate() {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {}: {tag} {name} ({:.1}s) {detail}",
            i + 1,
            took.as_secs_f64()
        );
    }
    println!(
        "{} of 9 criteria passed in {:.1}s",
        9 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
