//! Write a LiDAR cloud, a RADAR cloud, a camera frame and a manifest to disk,
//! then read everything back and check it is unchanged.

use lrc_weathernet::sensor_io::{
    filter_synchronized, read_point_cloud, read_ppm, read_tensor, write_point_cloud, write_ppm, write_tensor,
    Manifest, ManifestEntry, PointCloud, SensorKind,
};
use lrc_weathernet::synth::{default_profiles, generate_sample};

fn main() -> lrc_weathernet::Result<()> {
    let dir = std::env::temp_dir().join("lrcw_sensor_io");
    std::fs::create_dir_all(&dir).expect("create temp dir");

    let s = generate_sample(&default_profiles()[4], 0, 1, 64);
    let lidar = PointCloud::Lidar(s.lidar.clone());
    let radar = PointCloud::Radar(s.radar.clone());
    write_point_cloud(dir.join("l.bin"), &lidar)?;
    write_point_cloud(dir.join("r.bin"), &radar)?;
    write_ppm(dir.join("c.ppm"), &s.image)?;
    write_tensor(dir.join("image.bevt"), &s.image)?;

    assert_eq!(read_point_cloud(dir.join("l.bin"), SensorKind::Lidar)?, lidar);
    assert_eq!(read_point_cloud(dir.join("r.bin"), SensorKind::Radar)?, radar);
    assert_eq!(read_ppm(dir.join("c.ppm"))?, s.image);
    assert_eq!(read_tensor(dir.join("image.bevt"))?, s.image);
    println!("{} lidar points, {} radar points, image {:?}", lidar.len(), radar.len(), s.image.shape());

    // a second frame whose camera lags by 80 ms
    let entry = |t_camera| ManifestEntry {
        lidar: "l.bin".into(),
        radar: "r.bin".into(),
        image: "c.ppm".into(),
        t_lidar: s.t_lidar,
        t_radar: s.t_radar,
        t_camera,
        label: s.label,
    };
    let manifest = Manifest::new(vec![entry(s.t_camera), entry(s.t_lidar + 80_000)], &dir);
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    let back = Manifest::read(&path)?;
    assert_eq!(back.entries, manifest.entries);
    let synced = filter_synchronized(&back, 50_000);
    println!("manifest: {} entries, {} within 50 ms", back.len(), synced.len());
    let sample = synced.load_sample(0)?;
    assert_eq!(sample.lidar, s.lidar);
    println!("wrote and verified files in {}", dir.display());
    Ok(())
}
