#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use ltadapt::feature_store::{FeaturePack, PackKind};
use ltadapt::rng::Rng;

/// Random valid image pack; every class has at least one sample.
pub fn random_image_pack(rng: &mut Rng) -> FeaturePack {
    let k = 2 + rng.below(7);
    let dim = 1 + rng.below(24);
    let count = k + rng.below(40);
    let normalized = rng.below(2) == 0;
    let mut features = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.gaussian() * 3.0).collect();
        if row.iter().all(|v| *v == 0.0) {
            row[0] = 1.0;
        }
        if normalized {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        features.extend(row.into_iter().map(|v| v as f32));
    }
    let labels = (0..count)
        .map(|i| if i < k { i as u32 } else { rng.below(k) as u32 })
        .collect();
    FeaturePack {
        dataset: format!("random-{}", rng.below(1000)),
        split: "train".into(),
        kind: PackKind::Image,
        dim,
        class_names: (0..k).map(|c| format!("class \"{c}\" é")).collect(),
        features,
        labels,
        normalized,
        seed: if rng.below(2) == 0 { None } else { Some(rng.next_u64()) },
    }
}

pub fn ltadapt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltadapt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn ltadapt")
}

pub fn ok(args: &[&str], cwd: &Path) -> String {
    let out = ltadapt(args, cwd);
    assert!(
        out.status.success(),
        "ltadapt {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}
