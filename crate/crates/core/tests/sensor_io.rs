use proptest::prelude::*;

use lrc_weathernet::sensor_io::{
    decode_points, decode_tensor, encode_points, encode_tensor, filter_synchronized, read_point_cloud,
    read_tensor, write_point_cloud, write_tensor, LidarPoint, Manifest, ManifestEntry, PointCloud,
    RadarPoint, SensorKind,
};
use lrc_weathernet::Tensor;

fn finite() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("finite", |v| v.is_finite())
}

fn entry(ts: (i64, i64, i64)) -> ManifestEntry {
    ManifestEntry {
        lidar: "l.bin".into(),
        radar: "r.bin".into(),
        image: "i.ppm".into(),
        t_lidar: ts.0,
        t_radar: ts.1,
        t_camera: ts.2,
        label: 0,
    }
}

#[test]
fn tensor_file_layout() {
    let t = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let bytes = encode_tensor(&t);
    assert_eq!(&bytes[..4], b"BEVT");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(bytes[8], 2);
    assert_eq!(bytes.len(), 4 + 4 + 1 + 2 * 4 + 4 * 4);
    assert_eq!(f32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()), 3.0);
}

#[test]
fn files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::from_fn(&[3, 4, 5], |i| i as f32 * -0.25);
    let p = dir.path().join("t.bevt");
    write_tensor(&p, &t).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), t);

    let cloud = PointCloud::Radar(vec![RadarPoint { x: 1.0, y: -2.0, z: 0.5, snr: -3.0, rcs: 7.5 }]);
    let p = dir.path().join("r.bin");
    write_point_cloud(&p, &cloud).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 20);
    assert_eq!(read_point_cloud(&p, SensorKind::Radar).unwrap(), cloud);
    assert!(read_tensor(dir.path().join("missing.bevt")).is_err());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest::new(vec![entry((1, 2, 3)), entry((10, 10, 10))], dir.path());
    let p = dir.path().join("m.jsonl");
    m.write(&p).unwrap();
    let back = Manifest::read(&p).unwrap();
    assert_eq!(back.entries, m.entries);
    assert_eq!(back.resolve("l.bin".as_ref()), dir.path().join("l.bin"));
    std::fs::write(&p, "{\"lidar\":\"a\",\"bogus\":1}\n").unwrap();
    assert!(Manifest::read(&p).is_err());
}

proptest! {
    #[test]
    fn tensor_round_trip_is_bit_exact(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>(), vals in prop::collection::vec(finite(), 256)) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| vals[(i + seed as usize) % vals.len()]).collect();
        let t = Tensor::new(dims, data).unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn clouds_round_trip(pts in prop::collection::vec((finite(), finite(), finite(), finite()), 0..200)) {
        let lidar: Vec<LidarPoint> = pts.iter().map(|&(x, y, z, intensity)| LidarPoint { x, y, z, intensity }).collect();
        prop_assert_eq!(decode_points::<LidarPoint>(&encode_points(&lidar)).unwrap(), lidar);
        let radar: Vec<RadarPoint> = pts.iter().map(|&(x, y, z, snr)| RadarPoint { x, y, z, snr, rcs: -snr }).collect();
        prop_assert_eq!(decode_points::<RadarPoint>(&encode_points(&radar)).unwrap(), radar);
    }

    #[test]
    fn truncated_payloads_are_rejected(n in 1usize..50, cut in 1usize..16) {
        let bytes = encode_points(&vec![LidarPoint::default(); n]);
        prop_assert!(decode_points::<LidarPoint>(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn sync_filter_is_monotone_in_tolerance(
        ts in prop::collection::vec((0i64..400_000, 0i64..400_000, 0i64..400_000), 0..60),
        a in 0u64..300_000,
        extra in 0u64..300_000,
    ) {
        let m = Manifest::new(ts.into_iter().map(entry).collect(), ".");
        let small = filter_synchronized(&m, a);
        let large = filter_synchronized(&m, a + extra);
        prop_assert!(small.entries.iter().all(|e| large.entries.contains(e)));
        prop_assert!(small.entries.iter().all(|e| e.max_time_gap() <= a));
    }
}
