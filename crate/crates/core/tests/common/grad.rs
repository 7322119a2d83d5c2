//! Finite-difference gradient suite: every layer's backward pass and whole
//! networks, in 64-bit precision.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use lrc_weathernet::backbone::{FeatureExtractorSpec, TinyCnn};
use lrc_weathernet::fusion_head::{ClassifierHead, GatedFusion, NetInput, Network, Variant};
use lrc_weathernet::nn::gradcheck::{check_input, check_params, GradCheckConfig, GradCheckReport};
use lrc_weathernet::nn::{
    dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, relu, relu_backward,
    sigmoid, sigmoid_backward, weighted_softmax_ce, BatchNorm1d, Conv2d, Linear, Mode, Module,
};
use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::Tensor;

pub const TOL: f64 = 1e-4;

fn rng(case: u64) -> ChaCha8Rng {
    stream(case, Purpose::Init, 0x6ad)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Random perturbation of every parameter so no coordinate starts at an
/// initializer's special value (zero biases, unit gammas).
fn jitter<M: Module<f64>>(m: &mut M, r: &mut ChaCha8Rng) {
    for p in m.params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
    }
}

fn cfg(case: u64) -> GradCheckConfig {
    GradCheckConfig {
        seed: case,
        ..GradCheckConfig::default()
    }
}

/// Smaller steps for stacks with many ReLUs, where a larger step often
/// straddles a kink too small for the one-sided-slope test to notice.
fn deep(case: u64, per_tensor: Option<usize>) -> GradCheckConfig {
    GradCheckConfig {
        step: 1e-5,
        min_step: 1e-7,
        per_tensor,
        ..cfg(case)
    }
}

/// Outcome of the whole suite.
#[derive(Debug, Default)]
pub struct Tally {
    pub cases: usize,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl Tally {
    fn add(&mut self, what: &str, r: GradCheckReport) {
        if r.max_rel_err >= TOL {
            self.failures.push(format!("{what}: max relative error {:.3e} at {}", r.max_rel_err, r.worst));
        }
        if r.checked == 0 {
            self.failures.push(format!("{what}: every coordinate was a kink"));
        }
        self.cases += 1;
        self.checked += r.checked;
        self.kinks += r.kinks;
        self.max_rel_err = self.max_rel_err.max(r.max_rel_err);
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases >= 200 && self.kinks * 20 < self.checked
    }
}

fn conv_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(case);
        let (c, f) = (r.gen_range(1..=3), r.gen_range(1..=4));
        let k = [1, 2, 3][r.gen_range(0..3)];
        let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
        let (h, w) = (r.gen_range(k.max(3)..=7), r.gen_range(k.max(3)..=7));
        let batch = r.gen_range(1..=2);
        let mut conv = Conv2d::<f64>::new("conv", c, f, k, stride, pad, &mut r);
        jitter(&mut conv, &mut r);
        let x = randn(&[batch, c, h, w], &mut r);
        let y = conv.forward(&x).unwrap();
        let dy = randn(y.shape(), &mut r);
        conv.zero_grad();
        let dx = conv.backward(&x, &dy, true).unwrap().unwrap();
        let what = format!("conv c{c} f{f} k{k} s{stride} p{pad} {h}x{w}");
        let mut rep = check_params(&mut conv, &cfg(case), |m| dot(&m.forward(&x).unwrap(), &dy));
        rep.merge(check_input(&x, &dx, &cfg(case), "x", |x| dot(&conv.forward(x).unwrap(), &dy)));
        t.add(&what, rep);
    }
}

fn linear_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(1000 + case);
        let (i, o, b) = (r.gen_range(1..=12), r.gen_range(1..=10), r.gen_range(1..=5));
        let mut lin = Linear::<f64>::new("fc", i, o, &mut r);
        jitter(&mut lin, &mut r);
        let x = randn(&[b, i], &mut r);
        let dy = randn(&[b, o], &mut r);
        lin.zero_grad();
        let dx = lin.backward(&x, &dy).unwrap();
        let mut rep = check_params(&mut lin, &cfg(case), |m| dot(&m.forward(&x).unwrap(), &dy));
        rep.merge(check_input(&x, &dx, &cfg(case), "x", |x| dot(&lin.forward(x).unwrap(), &dy)));
        t.add(&format!("linear {i}->{o} batch {b}"), rep);
    }
}

fn batchnorm_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(2000 + case);
        let (b, c) = (r.gen_range(2..=6), r.gen_range(1..=6));
        let mut bn = BatchNorm1d::<f64>::new("bn", c);
        jitter(&mut bn, &mut r);
        let x = randn(&[b, c], &mut r);
        let dy = randn(&[b, c], &mut r);
        let (_, cache) = bn.forward_train(&x).unwrap();
        bn.zero_grad();
        let dx = bn.backward(&cache, &dy).unwrap();
        let mut rep = check_params(&mut bn, &cfg(case), |m| dot(&m.forward_train(&x).unwrap().0, &dy));
        let mut probe = bn.clone();
        rep.merge(check_input(&x, &dx, &cfg(case), "x", |x| {
            dot(&probe.forward_train(x).unwrap().0, &dy)
        }));
        t.add(&format!("batchnorm [{b},{c}]"), rep);
    }
}

fn activation_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(3000 + case);
        let shape = [r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4)];
        let x = randn(&shape, &mut r);
        let dy = randn(&shape, &mut r);
        let c = cfg(case);

        let dx = relu_backward(&relu(&x), &dy);
        t.add("relu", check_input(&x, &dx, &c, "x", |x| dot(&relu(x), &dy)));

        let y = sigmoid(&x);
        let dx = sigmoid_backward(&y, &dy);
        t.add("sigmoid", check_input(&x, &dx, &c, "x", |x| dot(&sigmoid(x), &dy)));

        let dp = randn(&shape[..2], &mut r);
        let dx = global_avg_pool_backward(&dp, shape[2], shape[3]);
        t.add(
            "global average pool",
            check_input(&x, &dx, &c, "x", |x| dot(&global_avg_pool(x).unwrap(), &dp)),
        );
    }
}

fn dropout_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(4000 + case);
        let x = randn(&[3, 7], &mut r);
        let dy = randn(&[3, 7], &mut r);
        let rate = r.gen_range(0.1..0.6);
        let fwd = |x: &Tensor<f64>| dropout(x, rate, Mode::Train, &mut stream(case, Purpose::Dropout, 0)).unwrap();
        let (_, mask) = fwd(&x);
        let dx = dropout_backward(&dy, mask.as_deref());
        t.add("dropout", check_input(&x, &dx, &cfg(case), "x", |x| dot(&fwd(x).0, &dy)));
    }
}

fn loss_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(5000 + case);
        let (b, k) = (r.gen_range(1..=6), r.gen_range(2..=9));
        let logits = randn(&[b, k], &mut r).reshape(&[b, k]).unwrap();
        let logits = Tensor::from_fn(&[b, k], |i| 3.0 * logits.data()[i]);
        let targets: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
        let weights: Vec<f64> = (0..k).map(|_| r.gen_range(0.25..4.0)).collect();
        let (_, g) = weighted_softmax_ce(&logits, &targets, &weights).unwrap();
        let rep = check_input(&logits, &g, &cfg(case), "logits", |l| {
            weighted_softmax_ce(l, &targets, &weights).unwrap().0
        });
        t.add(&format!("weighted cross-entropy [{b},{k}]"), rep);
    }
}

fn fusion_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(6000 + case);
        let (b, d) = (r.gen_range(1..=4), r.gen_range(1..=8));
        let mut gf = GatedFusion::<f64>::new(d, &mut r);
        jitter(&mut gf, &mut r);
        let ff = randn(&[b, d], &mut r);
        let fc = randn(&[b, d], &mut r);
        let dy = randn(&[b, 2 * d], &mut r);
        let (_, cache) = gf.forward(&ff, &fc).unwrap();
        gf.zero_grad();
        let (dff, dfc) = gf.backward(&cache, &ff, &fc, &dy).unwrap();
        let mut rep = check_params(&mut gf, &cfg(case), |m| dot(&m.forward(&ff, &fc).unwrap().0, &dy));
        rep.merge(check_input(&ff, &dff, &cfg(case), "f_f", |x| dot(&gf.forward(x, &fc).unwrap().0, &dy)));
        rep.merge(check_input(&fc, &dfc, &cfg(case), "f_c", |x| dot(&gf.forward(&ff, x).unwrap().0, &dy)));
        t.add(&format!("gated fusion d={d} batch {b}"), rep);
    }
}

fn head_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(7000 + case);
        let (b, i) = (r.gen_range(3..=4), r.gen_range(2..=8));
        let mut head = ClassifierHead::<f64>::new(i, &mut r);
        jitter(&mut head, &mut r);
        let x = randn(&[b, i], &mut r);
        let dy = randn(&[b, 9], &mut r);
        let drop = || stream(case, Purpose::Dropout, 1);
        let (_, cache) = head.forward(&x, Mode::Train, &mut drop()).unwrap();
        head.zero_grad();
        let dx = head.backward(&cache, &dy).unwrap();
        let c = GradCheckConfig {
            per_tensor: Some(40),
            step: 1e-4,
            min_step: 1e-6,
            ..cfg(case)
        };
        let mut rep = check_params(&mut head, &c, |m| dot(&m.forward(&x, Mode::Train, &mut drop()).unwrap().0, &dy));
        let mut probe = head.clone();
        rep.merge(check_input(&x, &dx, &c, "x", |x| {
            dot(&probe.forward(x, Mode::Train, &mut drop()).unwrap().0, &dy)
        }));
        t.add(&format!("classifier head in={i} batch {b}"), rep);
    }
}

fn backbone_cases(t: &mut Tally, n: u64) {
    for case in 0..n {
        let mut r = rng(8000 + case);
        let c = r.gen_range(1..=3);
        let d = r.gen_range(2..=8);
        let spec = FeatureExtractorSpec::tiny(c, d).with_input_hw(8, 8);
        let mut cnn = TinyCnn::<f32>::new("cnn", spec, case).unwrap().cast::<f64>();
        jitter(&mut cnn, &mut r);
        let x = randn(&[2, c, 8, 8], &mut r);
        let (feat, cache) = cnn.forward(&x).unwrap();
        let dy = randn(feat.shape(), &mut r);
        cnn.zero_grad();
        let dx = cnn.backward(&cache, &dy, true).unwrap().unwrap();
        let mut rep = check_params(&mut cnn, &deep(case, None), |m| dot(&m.forward(&x).unwrap().0, &dy));
        rep.merge(check_input(&x, &dx, &deep(case, None), "x", |x| dot(&cnn.forward(x).unwrap().0, &dy)));
        t.add(&format!("tiny cnn c={c} d={d}"), rep);
    }
}

fn network_case(t: &mut Tally, variant: Variant, case: u64, per_tensor: Option<usize>) {
    let mut r = rng(9000 + case);
    let b = 3;
    let mut net = Network::<f64>::new(variant, 8, (8, 8), case).unwrap();
    jitter(&mut net, &mut r);
    let input = NetInput {
        bev: variant.bev_channels().map(|c| randn(&[b, c, 8, 8], &mut r)),
        image: variant.uses_camera().then(|| randn(&[b, 3, 8, 8], &mut r)),
    };
    let targets: Vec<usize> = (0..b).map(|_| r.gen_range(0..9)).collect();
    let weights: Vec<f64> = (0..9).map(|_| r.gen_range(0.5..2.0)).collect();
    let drop = || stream(case, Purpose::Dropout, 2);
    let loss = |m: &mut Network<f64>| {
        let (logits, cache) = m.forward(&input, Mode::Train, &mut drop()).unwrap();
        (weighted_softmax_ce(&logits, &targets, &weights).unwrap(), cache)
    };
    let ((_, dlogits), cache) = loss(&mut net);
    net.zero_grad();
    net.backward(&cache, &dlogits).unwrap();
    let rep = check_params(&mut net, &deep(case, per_tensor), |m| loss(m).0 .0);
    t.add(&format!("{variant} network d=8 on 8x8"), rep);
}

/// Every layer over random shapes, then whole networks at d=8 on 8x8
/// inputs, all in f64.
pub fn run_suite() -> Tally {
    let mut t = Tally::default();
    conv_cases(&mut t, 60);
    linear_cases(&mut t, 30);
    batchnorm_cases(&mut t, 25);
    activation_cases(&mut t, 20);
    dropout_cases(&mut t, 20);
    loss_cases(&mut t, 25);
    fusion_cases(&mut t, 20);
    head_cases(&mut t, 20);
    backbone_cases(&mut t, 10);
    // one exhaustive pass over every LRC parameter, then sampled passes
    network_case(&mut t, Variant::LrcWeathernet, 0, None);
    for case in 1..4 {
        network_case(&mut t, Variant::LrcWeathernet, case, Some(30));
    }
    for (i, v) in [Variant::CameraOnly, Variant::LidarOnly, Variant::RadarOnly, Variant::EarlyFusion]
        .into_iter()
        .enumerate()
    {
        network_case(&mut t, v, 10 + i as u64, Some(30));
    }
    t
}
