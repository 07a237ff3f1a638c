//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use udasr::data::{default_colormap, Dataset, SynthSpec};
use udasr::metrics::{evaluate, evaluate_params, smooth_trailing};
use udasr::models::{ModelConfig, Networks, ParameterReport};
use udasr::nn::{pixel_shuffle, pixel_unshuffle, PixelMode};
use udasr::training::{
    checkpoint_path, load_dataset, read_loss_log, train, LogRow, RunConfig, Streams, TrainState, Trainer, LOG_FILE,
};

type Outcome = Result<(bool, String), String>;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn desk_run(out: &Path) -> RunConfig {
    RunConfig {
        batch_size: 2,
        out_dir: out.to_path_buf(),
        ..RunConfig::desk()
    }
}

fn held_out_synth(cfg: &RunConfig) -> Dataset {
    let mut spec = SynthSpec::for_tile(cfg.tile_size);
    spec.seed = 9999;
    Dataset::synthesize(&spec, &default_colormap()).unwrap()
}

fn shape_law() -> Outcome {
    let t = Instant::now();
    let nets = Networks::new(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let params = nets.init(DType::F32, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
    let x = common::random(&[1, 3, 512, 512], &mut ChaCha8Rng::seed_from_u64(1), DType::F32);
    let out = nets.generator(&params.frozen(), &x).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let ok = out.features.dims() == [1, 2304, 32, 32]
        && out.seg_logits.dims() == [1, 1, 32, 32]
        && out.sr.dims() == [1, 3, 512, 512]
        && secs < 120.0;
    Ok((
        ok,
        format!(
            "features {:?}, seg logits {:?}, SR {:?}, {secs:.1} s (limit 120 s)",
            out.features.dims(),
            out.seg_logits.dims(),
            out.sr.dims()
        ),
    ))
}

fn shuffle_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100 {
        let r = 1 + i % 4;
        let (b, c, h, w) = (1 + i % 2, 1 + i % 3, 1 + i % 5, 2 + i % 3);
        let dims = [b, c * r * r, h, w];
        let x = common::random(&dims, &mut rng, DType::F32);
        let xv = common::values(&x);
        let y = common::values(&pixel_shuffle(&x, r).map_err(|e| e.to_string())?);
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        for a in 0..r {
                            for e in 0..r {
                                let src = ((bi * c * r * r + ci * r * r + a * r + e) * h + hi) * w + wi;
                                let dst = ((bi * c + ci) * h * r + hi * r + a) * w * r + wi * r + e;
                                if xv[src].to_bits() != y[dst].to_bits() {
                                    mismatches += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        let back = pixel_unshuffle(&pixel_shuffle(&x, r).unwrap(), r).map_err(|e| e.to_string())?;
        if common::values(&back).iter().zip(&xv).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("100 tensors, r in 1..=4, {mismatches} mismatches")))
}

fn gradient_integrity() -> Outcome {
    let cfg = common::miniature_config();
    let r = common::gradient_check(&cfg, 3, 5, 1e-5, 1e-3);
    // Layer types covered by the sampled coordinates.
    let nets = Networks::new(&cfg).map_err(|e| e.to_string())?;
    let names: Vec<String> = nets.parameter_shapes().into_keys().collect();
    let dilated = cfg.sunet.dilation_rates.iter().enumerate().filter(|(_, &d)| d > 1).map(|(i, _)| format!(".conv{}.", i + 1));
    let dilated: Vec<String> = dilated.collect();
    let has = |f: &dyn Fn(&str) -> bool| names.iter().any(|n| f(n));
    let covered = [
        ("conv", has(&|n| n.contains("stem.conv"))),
        ("dilated conv", has(&|n| n.contains(".module") && dilated.iter().any(|d| n.contains(d.as_str())))),
        ("pixel shuffle", has(&|n| n.starts_with("sr_head.up"))),
        ("residual block", has(&|n| n.contains(".res."))),
        ("final activation", has(&|n| n.starts_with("sr_head.out"))),
    ];
    let missing: Vec<&str> = covered.iter().filter(|(_, c)| !c).map(|(n, _)| *n).collect();
    let ok = r.failures.is_empty() && r.n_params <= 50_000 && missing.is_empty();
    let mut detail = format!(
        "{} params, {} coordinates over {} tensors, max rel err {:.2e} (limit 1e-3)",
        r.n_params,
        r.checked,
        names.len(),
        r.max_rel_err
    );
    if !missing.is_empty() {
        detail.push_str(&format!(", missing layer types {missing:?}"));
    }
    if let Some(f) = r.failures.first() {
        detail.push_str(&format!(", first failure {f}"));
    }
    Ok((ok, detail))
}

fn source_overfit(dir: &Path) -> Outcome {
    let cfg = RunConfig {
        source_fraction: 1.0,
        allow_single_domain: true,
        fixed_source_tiles: Some(8),
        lambda_adv: 0.0,
        epochs: 1,
        steps_per_epoch: 300,
        ..desk_run(&dir.join("overfit"))
    };
    let t = Instant::now();
    let rows = train(&cfg, None).map_err(|e| e.to_string())?.rows;
    let secs = t.elapsed().as_secs_f64();
    let pix = |lo: u64, hi: u64| mean(&rows.iter().filter(|r| (lo..=hi).contains(&r.step)).map(|r| r.losses.l_pix).collect::<Vec<_>>());
    let (early, late) = (pix(1, 10), pix(290, 300));
    let ratio = late / early;
    Ok((
        ratio <= 0.4 && secs < 600.0,
        format!("l_pix steps 1-10 {early:.4}, steps 290-300 {late:.4}, ratio {ratio:.3} (limit 0.4), {secs:.0} s (limit 600 s)"),
    ))
}

fn schedule_boundary(dir: &Path) -> Outcome {
    let cfg = RunConfig {
        switch_epoch: 3,
        epochs: 5,
        steps_per_epoch: 2,
        ..desk_run(&dir.join("schedule"))
    };
    train(&cfg, None).map_err(|e| e.to_string())?;
    let rows = read_loss_log(&cfg.out_dir.join(LOG_FILE)).map_err(|e| e.to_string())?;
    let bad: Vec<u64> = rows
        .iter()
        .filter(|r| r.losses.pix_mode != if r.epoch < 3 { PixelMode::L2 } else { PixelMode::L1 })
        .map(|r| r.step)
        .collect();
    let modes: Vec<String> = rows.iter().map(|r| format!("{}:{}", r.epoch, r.losses.pix_mode)).collect();
    Ok((bad.is_empty() && rows.len() == 10, format!("epoch:mode {}", modes.join(" "))))
}

fn discriminator_only() -> Outcome {
    let cfg = RunConfig { seed: 11, ..desk_run(Path::new("unused")) };
    let trainer = Trainer::from_config(&cfg).map_err(|e| e.to_string())?;
    let mut state = TrainState::new(&trainer.nets, cfg.seed).map_err(|e| e.to_string())?;
    let mut streams = Streams::build(&cfg, load_dataset(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let frozen_g = common::values(&state.params.var("sr_head.out.weight").unwrap().as_tensor().clone());
    for _ in 0..200 {
        let batch = streams.next_batch(&cfg, &mut state.rng).map_err(|e| e.to_string())?;
        trainer.discriminator_step(&mut state, &batch).map_err(|e| e.to_string())?;
    }
    let unchanged = frozen_g == common::values(state.params.var("sr_head.out.weight").unwrap().as_tensor());
    let spec = cfg.dataset_spec().map_err(|e| e.to_string())?;
    let report = evaluate_params(&trainer.nets, &state.params.frozen(), &held_out_synth(&cfg), &spec, 32, 5, cfg.fake_set)
        .map_err(|e| e.to_string())?;
    let acc = report.d_accuracy.unwrap_or(0.0);
    Ok((
        acc >= 0.95 && unchanged,
        format!("D accuracy {acc:.3} on 32 real + 32 fake held-out tiles (limit 0.95), generator unchanged: {unchanged}"),
    ))
}

struct SharedRun {
    cfg: RunConfig,
    rows: Vec<LogRow>,
    secs: f64,
}

fn shared_run(dir: &Path) -> Result<SharedRun, String> {
    let cfg = RunConfig {
        switch_epoch: 0,
        epochs: 6,
        steps_per_epoch: 100,
        ..desk_run(&dir.join("joint"))
    };
    let t = Instant::now();
    let rows = train(&cfg, None).map_err(|e| e.to_string())?.rows;
    Ok(SharedRun { cfg, rows, secs: t.elapsed().as_secs_f64() })
}

fn joint_segmentation(run: &SharedRun) -> Outcome {
    let ckpt = checkpoint_path(&run.cfg.out_dir, 5);
    let spec = run.cfg.dataset_spec().map_err(|e| e.to_string())?;
    let report = evaluate(&ckpt, &held_out_synth(&run.cfg), &spec, 32, 7).map_err(|e| e.to_string())?;
    let iou = report.iou_target.unwrap_or(0.0);
    Ok((
        iou >= 0.7,
        format!(
            "after 500 steps: target IoU {iou:.3} on 32 held-out tiles (limit 0.7), source IoU {:.3}",
            report.iou_source.unwrap_or(f64::NAN)
        ),
    ))
}

fn adversarial_plumbing(d_only: &Outcome, run: &SharedRun) -> Outcome {
    let (d_ok, d_detail) = d_only.clone()?;
    let first_500 = &run.rows[..500.min(run.rows.len())];
    let finite = first_500.len() == 500
        && first_500.iter().all(|r| {
            let l = &r.losses;
            [l.l_seg, l.l_pix, l.l_adv_g, l.l_d].iter().all(|v| v.is_finite())
        });
    Ok((
        d_ok && finite,
        format!(
            "{d_detail}; {} alternating steps with lambda_adv {} all finite: {finite}",
            first_500.len(),
            run.cfg.lambda_adv
        ),
    ))
}

fn loss_curve(run: &SharedRun) -> Outcome {
    let pix: Vec<f64> = run.rows.iter().map(|r| r.losses.l_pix).collect();
    let smooth = smooth_trailing(&pix, 50);
    let third = smooth.len() / 3;
    let (first, last) = (mean(&smooth[..third]), mean(&smooth[smooth.len() - third..]));
    Ok((
        smooth.len() == 600 && first > last,
        format!(
            "{} steps ({:.0} s), smoothed l_pix first third {first:.4}, last third {last:.4}",
            smooth.len(),
            run.secs
        ),
    ))
}

fn determinism_and_resume(dir: &Path) -> Outcome {
    let make = |name: &str, epochs: u64| RunConfig {
        seed: 21,
        epochs,
        steps_per_epoch: 4,
        ..desk_run(&dir.join(name))
    };
    let a = train(&make("det-a", 3), None).map_err(|e| e.to_string())?;
    train(&make("det-b", 3), None).map_err(|e| e.to_string())?;
    let read = |name: &str| std::fs::read(dir.join(name).join(LOG_FILE)).map_err(|e| e.to_string());
    let same_csv = read("det-a")? == read("det-b")?;

    train(&make("det-c", 1), None).map_err(|e| e.to_string())?;
    let resumed = train(&make("det-c", 3), Some(&checkpoint_path(&dir.join("det-c"), 1))).map_err(|e| e.to_string())?;
    let same_resume = resumed.rows == a.rows[4..] && read("det-a")? == read("det-c")?;
    Ok((
        same_csv && same_resume,
        format!(
            "identical CSVs: {same_csv}; resume from epoch 1 reproduces {} later steps: {same_resume}",
            resumed.rows.len()
        ),
    ))
}

fn parameter_report() -> Outcome {
    let nets = Networks::new(&ModelConfig::default()).map_err(|e| e.to_string())?;
    let a = ParameterReport::from_shapes(&nets.parameter_shapes());
    let b = ParameterReport::from_shapes(&Networks::new(&ModelConfig::default()).unwrap().parameter_shapes());
    let text = a.to_string();
    println!("{}", text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n"));
    Ok((a == b && text.contains("37.7M"), format!("full-scale total {} parameters, deterministic: {}", a.total, a == b)))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let dir = dir.path();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, outcome: Outcome| {
        let line = match &outcome {
            Ok((true, d)) => format!("criterion {n:>2} PASS  {name}: {d}"),
            Ok((false, d)) => format!("criterion {n:>2} FAIL  {name}: {d}"),
            Err(e) => format!("criterion {n:>2} FAIL  {name}: error: {e}"),
        };
        println!("{line}");
        results.push((n, name, outcome));
    };

    report(1, "full-scale shape law", shape_law());
    report(2, "pixel-shuffle oracle", shuffle_oracle());
    report(3, "gradient integrity", gradient_integrity());
    report(6, "loss-schedule boundary", schedule_boundary(dir));
    report(9, "determinism and resume", determinism_and_resume(dir));
    report(10, "parameter-count report", parameter_report());
    report(4, "source overfit", source_overfit(dir));
    let d_only = discriminator_only();
    match shared_run(dir) {
        Ok(run) => {
            report(5, "joint segmentation", joint_segmentation(&run));
            report(7, "adversarial plumbing", adversarial_plumbing(&d_only, &run));
            report(8, "loss curve trend", loss_curve(&run));
        }
        Err(e) => {
            for (n, name) in [(5, "joint segmentation"), (7, "adversarial plumbing"), (8, "loss curve trend")] {
                report(n, name, Err(format!("600-step run failed: {e}")));
            }
        }
    }

    results.sort_by_key(|(n, _, _)| *n);
    let failed: Vec<u32> = results.iter().filter(|(_, _, o)| !matches!(o, Ok((true, _)))).map(|(n, _, _)| *n).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
