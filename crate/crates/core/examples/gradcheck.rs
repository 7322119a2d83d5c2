//! Compare the analytic gradients of a small LRC network against central
//! finite differences in 64-bit precision.

use lrc_weathernet::fusion_head::{NetInput, Network, Variant};
use lrc_weathernet::nn::gradcheck::{check_params, GradCheckConfig};
use lrc_weathernet::nn::{weighted_softmax_ce, Mode, Module};
use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::Tensor;
use rand::Rng;

fn main() -> lrc_weathernet::Result<()> {
    let mut r = stream(0, Purpose::Init, 1);
    let mut net = Network::<f64>::new(Variant::LrcWeathernet, 4, (8, 8), 0)?;
    let input = NetInput {
        bev: Some(Tensor::from_fn(&[3, 3, 8, 8], |_| r.gen_range(-1.0..1.0))),
        image: Some(Tensor::from_fn(&[3, 3, 8, 8], |_| r.gen_range(-1.0..1.0))),
    };
    let targets = [0, 4, 8];
    let weights = [1.0; 9];
    let loss = |m: &mut Network<f64>| {
        let (logits, cache) = m.forward(&input, Mode::Train, &mut stream(0, Purpose::Dropout, 0)).unwrap();
        (weighted_softmax_ce(&logits, &targets, &weights).unwrap(), cache)
    };
    let ((value, dlogits), cache) = loss(&mut net);
    net.zero_grad();
    net.backward(&cache, &dlogits)?;

    let cfg = GradCheckConfig { step: 1e-5, min_step: 1e-7, per_tensor: Some(10), ..GradCheckConfig::default() };
    let report = check_params(&mut net, &cfg, |m| loss(m).0 .0);
    println!("loss {value:.6}");
    println!(
        "{} coordinates checked, {} skipped at ReLU kinks, max relative error {:.2e}",
        report.checked, report.kinks, report.max_rel_err
    );
    println!("worst: {}", report.worst);
    Ok(())
}
