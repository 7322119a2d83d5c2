//! Generate one sample per weather class, show which classes each sensor
//! cannot tell apart and apply the training augmentations.

use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::synth::{
    ambiguity_structure, augment_camera, augment_radar, default_profiles, generate_sample, Ambiguity,
    AugmentSpec,
};

fn main() {
    let profiles = default_profiles();
    for p in &profiles {
        let s = generate_sample(p, 0, 7, 64);
        let brightness = s.image.data().iter().sum::<f32>() / s.image.len() as f32;
        println!(
            "{:>2} {:<14} lidar {:>5} pts  radar {:>3} pts  image mean {brightness:.3}",
            p.class_id,
            p.name,
            s.lidar.len(),
            s.radar.len()
        );
    }

    let amb = ambiguity_structure(&profiles);
    println!("camera-identical groups {:?}, ceiling {:.3}", amb.camera, Ambiguity::ceiling(&amb.camera));
    println!("geometry-identical groups {:?}, ceiling {:.3}", amb.geometry, Ambiguity::ceiling(&amb.geometry));

    let spec = AugmentSpec::default();
    let mut rng = stream(7, Purpose::Augment, 0);
    let s = generate_sample(&profiles[5], 1, 7, 64);
    let image = augment_camera(&s.image, &spec.camera, &mut rng);
    let radar = augment_radar(&s.radar, &spec.radar, &mut rng);
    println!("augmented image {:?}, radar {} points", image.shape(), radar.len());
}
