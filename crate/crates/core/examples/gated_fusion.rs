//! Run the gated fusion block on random features, summarize the gates and
//! render the per-sample CSV export.

use lrc_weathernet::fusion_head::{gate_summary, gate_weighted_map, gates_csv, GateRow, GatedFusion};
use lrc_weathernet::rng::{stream, Purpose};
use lrc_weathernet::Tensor;
use rand::Rng;

fn main() -> lrc_weathernet::Result<()> {
    let d = 8;
    let mut r = stream(2, Purpose::Init, 0);
    let fusion = GatedFusion::<f32>::new(d, &mut r);
    let f_f = Tensor::from_fn(&[4, d], |_| r.gen_range(-1.0..1.0));
    // the camera branch is much louder than the BEV branch
    let f_c = Tensor::from_fn(&[4, d], |_| r.gen_range(-10.0..10.0));
    let (fused, cache) = fusion.forward(&f_f, &f_c)?;
    println!("fused features {:?}", fused.shape());

    let records = cache.records();
    let summary = gate_summary(&records)?;
    for (i, (gf, gc)) in summary.per_sample.iter().enumerate() {
        println!("sample {i}: mean g_f {gf:.3}, mean g_c {gc:.3}");
    }
    println!("batch mean: g_f {:.3}, g_c {:.3}", summary.batch.0, summary.batch.1);

    let rows: Vec<GateRow> = records
        .into_iter()
        .enumerate()
        .map(|(i, record)| GateRow { sample_id: i, label: i, prediction: i, record })
        .collect();
    print!("{}", gates_csv(&rows));

    let map = Tensor::from_fn(&[d, 4, 4], |i| (i % 7) as f32);
    let weighted = gate_weighted_map(&map, &rows[0].record.g_f)?;
    println!("gate-weighted activation map {:?}", weighted.shape());
    Ok(())
}
