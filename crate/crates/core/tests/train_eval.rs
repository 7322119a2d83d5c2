use sha2::{Digest, Sha256};

use lrc_weathernet::bench::report_model_cost;
use lrc_weathernet::bev_raster::{FrustumSpec, GridSpec};
use lrc_weathernet::checkpoint::{checkpoint_paths, Checkpoint};
use lrc_weathernet::data::{stratified_split, PreparedSet};
use lrc_weathernet::fusion_head::{Network, Variant};
use lrc_weathernet::nn::{count_params, AdamWConfig};
use lrc_weathernet::synth::{default_profiles, generate_dataset_sized, AugmentSpec};
use lrc_weathernet::train::{evaluate, train, RunFiles, TrainConfig};

fn small_set(per_class: usize, seed: u64) -> PreparedSet {
    let grid = GridSpec {
        out_h: 32,
        out_w: 32,
        ..GridSpec::default()
    };
    let samples = generate_dataset_sized(&default_profiles(), per_class, seed, 32).unwrap();
    PreparedSet::from_triplets(&samples, &FrustumSpec::default(), &grid).unwrap()
}

fn sha(path: &std::path::Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn overfits_sixteen_samples() {
    let set = small_set(2, 4);
    let idx: Vec<usize> = (0..16).collect();
    let config = TrainConfig {
        variant: Variant::LrcWeathernet,
        feature_dim: 16,
        epochs: 200,
        batch_size: 16,
        optimizer: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
        augment: AugmentSpec::disabled(),
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&config, &set, &idx, &idx, None, |_| {}).unwrap();
    let (report, _) = evaluate(&out.last, &set, &idx, 16).unwrap();
    assert_eq!(report.accuracy, 1.0, "confusion {:?}", report.confusion);
    assert_eq!(out.history.len(), 200);
}

#[test]
fn evaluation_reports_are_consistent_and_read_only() {
    let set = small_set(6, 9);
    let split = stratified_split(&set.labels(), 0.5, 0.25, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = RunFiles::new(dir.path()).unwrap();
    let config = TrainConfig {
        variant: Variant::EarlyFusion,
        feature_dim: 8,
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train(&config, &set, &split.train, &split.val, Some(&run), |_| {}).unwrap();
    let (bevt, json) = checkpoint_paths(run.best());
    let before = (sha(&bevt), sha(&json));

    let loaded = Checkpoint::load(run.best()).unwrap();
    let (a, pa) = evaluate(&out.best, &set, &split.test, 4).unwrap();
    let (b, pb) = evaluate(&loaded, &set, &split.test, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!((sha(&bevt), sha(&json)), before);

    let total: u64 = a.confusion.iter().flatten().sum();
    let trace: u64 = (0..9).map(|i| a.confusion[i][i]).sum();
    assert_eq!(total as usize, split.test.len());
    assert_eq!(a.accuracy, trace as f64 / total as f64);
    for (c, row) in a.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<u64>(), split.test.iter().filter(|&&i| set.samples[i].label == c).count() as u64);
    }
}

#[test]
fn lrc_cost_is_two_backbones_plus_fusion_head() {
    let d = 64;
    let lrc = Network::new(Variant::LrcWeathernet, d, (224, 224), 0).unwrap();
    let backbone = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64);
    let fusion = 2 * (d * d + d) + (2 * d * 2 * d + 2 * d);
    let head = (2 * d * 512 + 512) + 2 * 512 + (512 * 9 + 9);
    let cost = report_model_cost(&lrc).unwrap();
    assert_eq!(cost.params as usize, 2 * backbone + fusion + head);
    assert_eq!(count_params(lrc.bev_backbone.as_ref().unwrap()), backbone);
    assert_eq!(cost.gmac, cost.macs as f64 / 1e9);
}
