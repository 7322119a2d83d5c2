//! Acceptance checks. Prints one `[PASS]` or `[FAIL]` line per criterion
//! and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use lrc_weathernet::bench::{bench_latency, random_input, report_model_cost};
use lrc_weathernet::bev_raster::{rasterize_lidar, rasterize_radar, FrustumSpec, GridSpec};
use lrc_weathernet::checkpoint::Checkpoint;
use lrc_weathernet::data::{stratified_split, PreparedSet};
use lrc_weathernet::experiment::{run_experiment, ExperimentConfig, ExperimentResult};
use lrc_weathernet::fusion_head::{
    gates_csv, ClassifierHead, GateRecord, GateRow, GatedFusion, Network, Variant,
};
use lrc_weathernet::nn::{
    adamw_step, clip_grad_norm, compute_class_weights, count_params, cross_entropy, AdamWConfig,
    Module, Param,
};
use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::sensor_io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
use lrc_weathernet::synth::{generate_dataset_sized, default_profiles};
use lrc_weathernet::train::{evaluate, train, RunFiles, TrainConfig};
use lrc_weathernet::Tensor;

use common::{bits, naive_lidar, naive_radar, random_lidar, random_radar, raster_settings};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rasterization_matches_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut points = 0;
    for i in 0..100 {
        let (f, g) = raster_settings(i);
        // one full-size cloud, the rest spread over the range
        let n = if i == 0 { 100_000 } else { stream(i as u64, Purpose::Synth, 0xac1).gen_range(0..=100_000) };
        let lidar = random_lidar(1000 + i as u64, n, &f, &g);
        let radar = random_radar(2000 + i as u64, n, &f, &g);
        let l = rasterize_lidar(&lidar, &f, &g).map_err(|e| e.to_string())?;
        let r = rasterize_radar(&radar, &f, &g).map_err(|e| e.to_string())?;
        ensure(bits(l.tensor.data()) == bits(&naive_lidar(&lidar, &f, &g)), || format!("lidar cloud {i} differs"))?;
        ensure(bits(r.tensor.data()) == bits(&naive_radar(&radar, &f, &g)), || format!("radar cloud {i} differs"))?;
        points += 2 * n;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("200 clouds, {points} points, bit-exact in {secs:.1}s"))
}

fn gradients_match() -> Outcome {
    let t = common::grad::run_suite();
    let summary = format!(
        "{} cases, {} coordinates, {} kinks, max rel err {:.2e}",
        t.cases, t.checked, t.kinks, t.max_rel_err
    );
    ensure(t.passed(), || format!("{summary}; {:?}", t.failures))?;
    Ok(summary)
}

fn gates_are_sane() -> Outcome {
    let mut r = stream(1, Purpose::Init, 0);
    for d in [1, 7, 64] {
        let mut f = GatedFusion::<f32>::new(d, &mut r);
        f.gate.weight.value.fill(0.0);
        f.gate.bias.value.fill(0.0);
        let ff = Tensor::from_fn(&[4, d], |_| r.gen_range(-50.0..50.0));
        let fc = Tensor::from_fn(&[4, d], |_| r.gen_range(-50.0..50.0));
        let (fused, _) = f.forward(&ff, &fc).map_err(|e| e.to_string())?;
        for b in 0..4 {
            let want: Vec<f32> = ff.outer(b).iter().chain(fc.outer(b)).map(|v| 0.5 * v).collect();
            ensure(&fused.data()[b * 2 * d..(b + 1) * 2 * d] == want.as_slice(), || format!("d={d} row {b} not halved"))?;
        }
    }
    let d = 32;
    let mut f = GatedFusion::<f32>::new(d, &mut r);
    for p in f.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v *= 50.0);
    }
    let mut n = 0;
    for _ in 0..100 {
        let scale = 10f32.powf(r.gen_range(-3.0..4.0));
        let ff = Tensor::from_fn(&[100, d], |_| scale * r.gen_range(-1.0..1.0));
        let fc = Tensor::from_fn(&[100, d], |_| scale * r.gen_range(-1.0..1.0));
        for rec in f.forward(&ff, &fc).map_err(|e| e.to_string())?.1.records() {
            let inside = rec.g_f.iter().chain(&rec.g_c).all(|g| *g > 0.0 && *g < 1.0);
            ensure(inside, || format!("record {n} has a gate outside (0,1)"))?;
            n += 1;
        }
    }
    Ok(format!("zero gate halves exactly; {n} records strictly inside (0,1)"))
}

fn analytic_fixtures() -> Outcome {
    let ce = cross_entropy(&Tensor::<f64>::zeros(&[1, 9]), &[4]).map_err(|e| e.to_string())?;
    ensure((ce - 9f64.ln()).abs() < 1e-6, || format!("uniform CE {ce}"))?;

    let mut p = Param::new("p", Tensor::<f64>::from_fn(&[2], |_| 0.0));
    p.grad = Tensor::new(vec![2], vec![3.0, 4.0]).map_err(|e| e.to_string())?;
    let scale = clip_grad_norm(&mut [&mut p], 5.0);
    ensure(scale == 1.0 && p.grad.data() == [3.0, 4.0], || format!("clip changed (3,4): {scale}"))?;

    let mut w = Param::new("w", Tensor::<f64>::from_fn(&[1], |_| 1.0));
    w.grad.fill(1.0);
    adamw_step(&mut [&mut w], &AdamWConfig::default(), 1).map_err(|e| e.to_string())?;
    let v = w.value.data()[0];
    ensure((v - 0.99969997).abs() < 1e-8, || format!("AdamW step gave {v}"))?;

    let mut counts = vec![100; 8];
    counts.push(200);
    let cw = compute_class_weights(&counts).map_err(|e| e.to_string())?;
    ensure(
        (cw[0] as f64 - 1000.0 / 900.0).abs() < 1e-6 && (cw[8] as f64 - 1000.0 / 1800.0).abs() < 1e-6,
        || format!("class weights {cw:?}"),
    )?;

    let mut r = stream(0, Purpose::Init, 0);
    let params = count_params(&GatedFusion::<f32>::new(1280, &mut r)) + count_params(&ClassifierHead::<f32>::new(2560, &mut r));
    ensure(params == 11_152_393, || format!("fusion and head at d=1280 have {params} params"))?;
    Ok(format!("ln9, clip, AdamW {v:.8}, weights {:.4}/{:.4}, {params} params", cw[0], cw[8]))
}

fn experiment_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.train.epochs = 4;
    cfg.train.feature_dim = 64;
    cfg
}

fn run(out: &Path) -> Result<(ExperimentResult, Duration), String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let res = pool
        .install(|| run_experiment(&experiment_config(), Some(out.to_path_buf()), |_, _| {}))
        .map_err(|e| e.to_string())?;
    Ok((res, t0.elapsed()))
}

fn fusion_beats_unimodal(res: &ExperimentResult, elapsed: Duration) -> Outcome {
    let acc = |v| res.accuracy(v).unwrap_or(f64::NAN);
    let lrc = acc(Variant::LrcWeathernet);
    let (cam, lidar, radar, early) = (acc(Variant::CameraOnly), acc(Variant::LidarOnly), acc(Variant::RadarOnly), acc(Variant::EarlyFusion));
    let uni = cam.max(lidar).max(radar);
    let line = format!(
        "lrc {lrc:.4}, camera {cam:.4}, lidar {lidar:.4}, radar {radar:.4}, early {early:.4}, {:.0}s",
        elapsed.as_secs_f64()
    );
    ensure(lrc >= 0.90, || format!("LRC below 0.90: {line}"))?;
    ensure(uni <= 0.75, || format!("a unimodal model exceeds 0.75: {line}"))?;
    ensure(early >= lidar.max(radar), || format!("early fusion below LiDAR/RADAR alone: {line}"))?;
    let clear_recall = res
        .results
        .iter()
        .find(|r| r.variant == Variant::LrcWeathernet)
        .map(|r| r.test.per_class[0].recall)
        .unwrap_or(0.0);
    ensure(clear_recall >= 0.9, || format!("LRC clear-weather recall {clear_recall}: {line}"))?;
    ensure(elapsed < Duration::from_secs(15 * 60), || format!("too slow: {line}"))?;
    Ok(line)
}

fn run_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        for f in ["history.csv", "best.bevt", "best.json", "last.bevt", "last.json"] {
            let p = dir.join(v.name()).join(f);
            out.push((format!("{}/{f}", v.name()), std::fs::read(&p).unwrap_or_default()));
        }
    }
    out
}

fn runs_are_reproducible(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (run_files(a), run_files(b));
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        ensure(!x.is_empty(), || format!("{name} missing"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", fa.len()))
}

fn persistence_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = |x: lrc_weathernet::Error| x.to_string();

    let golden = Tensor::new(vec![1, 2], vec![1.0, -2.0]).map_err(e)?;
    let want: Vec<u8> = [&b"BEVT"[..], &1u32.to_le_bytes(), &[2], &1u32.to_le_bytes(), &2u32.to_le_bytes(), &1f32.to_le_bytes(), &(-2f32).to_le_bytes()].concat();
    ensure(encode_tensor(&golden) == want, || "golden BEVT bytes differ".into())?;

    let mut r = stream(5, Purpose::Init, 0);
    for i in 0..50 {
        let dims: Vec<usize> = (0..r.gen_range(1..5)).map(|_| r.gen_range(1..6)).collect();
        let t = Tensor::from_fn(&dims, |_| f32::from_bits(r.gen::<u32>() & 0xbf7f_ffff));
        let p = dir.path().join(format!("{i}.bevt"));
        write_tensor(&p, &t).map_err(e)?;
        let back = read_tensor(&p).map_err(e)?;
        ensure(back.shape() == t.shape() && bits(back.data()) == bits(t.data()), || format!("tensor {i} changed"))?;
        ensure(decode_tensor(&encode_tensor(&t)).map_err(e)?.shape() == t.shape(), || "decode".into())?;
    }

    let grid = GridSpec { out_h: 32, out_w: 32, ..GridSpec::default() };
    let samples = generate_dataset_sized(&default_profiles(), 6, 3, 32).map_err(e)?;
    let set = PreparedSet::from_triplets(&samples, &FrustumSpec::default(), &grid).map_err(e)?;
    let split = stratified_split(&set.labels(), 0.5, 0.25, 3).map_err(e)?;
    let files = RunFiles::new(dir.path().join("run")).map_err(e)?;
    let config = TrainConfig { feature_dim: 8, epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let out = train(&config, &set, &split.train, &split.val, Some(&files), |_| {}).map_err(e)?;
    let loaded = Checkpoint::load(files.best()).map_err(e)?;
    let (a, pa) = evaluate(&out.best, &set, &split.test, 4).map_err(e)?;
    let (b, pb) = evaluate(&loaded, &set, &split.test, 4).map_err(e)?;
    ensure(a == b && pa == pb, || "reloaded checkpoint evaluates differently".into())?;

    let row = GateRow { sample_id: 7, label: 2, prediction: 2, record: GateRecord::new(vec![0.35; 4], vec![0.64; 4]) };
    let csv = gates_csv(&[row]);
    ensure(csv.lines().nth(1) == Some("7,2,2,0.350000,0.640000"), || format!("gates.csv row {csv:?}"))?;
    Ok(format!("BEVT golden and 50 round trips, checkpoint reload evaluates to accuracy {:.4}, gates row", a.accuracy))
}

fn closed_form(v: Variant, d: usize) -> (u64, u64) {
    let backbone = |cin: usize| {
        let params = (16 * cin * 9 + 16) + (32 * 16 * 9 + 32) + (d * 32 * 9 + d);
        let macs = 112 * 112 * 16 * cin * 9 + 56 * 56 * 32 * 16 * 9 + 28 * 28 * d * 32 * 9;
        (params, macs)
    };
    let head = |inp: usize| ((inp * 512 + 512) + 2 * 512 + (512 * 9 + 9), inp * 512 + 512 * 9);
    let parts = match v {
        Variant::CameraOnly => vec![backbone(3), head(d)],
        Variant::LidarOnly => vec![backbone(1), head(d)],
        Variant::RadarOnly => vec![backbone(2), head(d)],
        Variant::EarlyFusion => vec![backbone(3), head(d)],
        Variant::LrcWeathernet => vec![
            backbone(3),
            backbone(3),
            (2 * (d * d + d) + (4 * d * d + 2 * d), 2 * d * d + 4 * d * d),
            head(2 * d),
        ],
    };
    let (p, m) = parts.into_iter().fold((0, 0), |(a, b), (p, m)| (a + p, b + m));
    (p as u64, m as u64)
}

fn cost_and_latency() -> Outcome {
    let mut notes = Vec::new();
    for v in Variant::ALL {
        let net = Network::new(v, 64, (224, 224), 0).map_err(|e| e.to_string())?;
        let c = report_model_cost(&net).map_err(|e| e.to_string())?;
        ensure((c.params, c.macs) == closed_form(v, 64), || {
            format!("{v}: {} params {} MACs, expected {:?}", c.params, c.macs, closed_form(v, 64))
        })?;
        notes.push(format!("{v} {:.3} GMAC", c.gmac));
    }
    let net = Network::new(Variant::LrcWeathernet, 64, (224, 224), 0).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let s = pool
        .install(|| bench_latency(&net, &random_input(&net, 0), 10, 100))
        .map_err(|e| e.to_string())?;
    ensure(s.min_ms <= s.mean_ms && s.mean_ms <= s.max_ms, || format!("mean {} outside [{}, {}]", s.mean_ms, s.min_ms, s.max_ms))?;
    Ok(format!("{}; LRC mean {:.2} ms (p95 {:.2})", notes.join(", "), s.mean_ms, s.p95_ms))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run(&a);
    let second = first.as_ref().ok().map(|_| run(&b));

    let results: Vec<(&str, Outcome)> = vec![
        ("1 BEV rasterization bit-exact against the oracle", guarded(rasterization_matches_oracle)),
        ("2 analytic gradients match finite differences", guarded(gradients_match)),
        ("3 neutral gate and gate range", guarded(gates_are_sane)),
        ("4 loss, clipping, optimizer, class weights, head size", guarded(analytic_fixtures)),
        (
            "5 gated fusion beats every single sensor",
            match &first {
                Ok((res, t)) => guarded(|| fusion_beats_unimodal(res, *t)),
                Err(e) => Err(e.clone()),
            },
        ),
        (
            "6 experiment is reproducible",
            match &second {
                Some(Ok(_)) => guarded(|| runs_are_reproducible(&a, &b)),
                Some(Err(e)) => Err(e.clone()),
                None => Err("first run failed".into()),
            },
        ),
        ("7 persistence round trips", guarded(persistence_round_trips)),
        ("8 model cost and latency", guarded(cost_and_latency)),
    ];

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
