//! Seeded fixtures shared by the criterion benchmarks under `benches/`.

use shmkit::eval::{BoundingBox, DetectionRecord};
use shmkit::fmap::{FeatureMap, SeededWeights};
use shmkit::hea::{ClassLabel, TaskId};

/// A `c×h×w` map with values in `[-1, 1)`.
pub fn synthetic_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
    let v = SeededWeights::generate(seed, c * h * w);
    FeatureMap::new(c, h, w, v.values().iter().map(|x| x * 10.0).collect())
        .expect("finite seeded values")
}

/// `n` ground-truth boxes and a jittered, scored detection for each.
pub fn synthetic_detections(n: usize, seed: u64) -> (Vec<DetectionRecord>, Vec<DetectionRecord>) {
    let v = SeededWeights::generate(seed, 4 * n);
    let mut gts = Vec::with_capacity(n);
    let mut dets = Vec::with_capacity(n);
    for k in 0..n {
        let u = |i: usize| (v.values()[4 * k + i] as f64 + 0.1) * 5.0;
        let label = ClassLabel::from_index(TaskId::Task8, k % 4).expect("Task8 has four classes");
        let x = (k % 10) as f64 * 40.0;
        let y = (k / 10) as f64 * 40.0;
        let gt = BoundingBox::new(x, y, x + 30.0, y + 30.0).expect("valid box");
        let det = BoundingBox::new(x + u(0), y + u(1), x + 30.0 + u(2), y + 30.0 + u(3))
            .expect("valid box");
        let image_id = format!("img{}", k % 3);
        gts.push(DetectionRecord {
            bbox: gt,
            label,
            score: 1.0,
            image_id: image_id.clone(),
        });
        dets.push(DetectionRecord {
            bbox: det,
            label,
            score: (u(0).abs() / 1.5).min(1.0),
            image_id,
        });
    }
    (dets, gts)
}
