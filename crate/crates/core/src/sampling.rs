//! Long-tailed subsets, base/new class splits and few-shot subsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeaturePack;
use crate::rng::Rng;

/// Per-class training counts following an exponential decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    /// Counts in decay order: `counts[i]` applies to the i-th base class.
    pub counts: Vec<usize>,
    pub max_per_class: usize,
    /// `max(counts) / min(counts)` after rounding and clamping.
    pub ratio: f64,
}

impl ImbalanceProfile {
    fn from_counts(counts: Vec<usize>) -> Self {
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().min().unwrap_or(0);
        ImbalanceProfile {
            ratio: if min > 0 { max as f64 / min as f64 } else { f64::INFINITY },
            max_per_class: max,
            counts,
        }
    }

    /// A flat profile of `n` samples for each of `num_base` classes.
    pub fn uniform(num_base: usize, n: usize) -> Self {
        Self::from_counts(vec![n; num_base])
    }
}

/// `n_i = round(n_max · r^(−i/(K_b−1)))`, clamped below at 1.
pub fn exp_decay_counts(num_base: usize, n_max: usize, ratio: f64) -> Result<ImbalanceProfile> {
    if num_base == 0 {
        return Err(Error::Parameter("need at least one base class".into()));
    }
    if n_max == 0 {
        return Err(Error::Parameter("max per class must be at least 1".into()));
    }
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::Parameter(format!("imbalance ratio must be >= 1, got {ratio}")));
    }
    let counts = (0..num_base)
        .map(|i| {
            if num_base == 1 {
                return n_max;
            }
            let exponent = -(i as f64) / (num_base - 1) as f64;
            let n = (n_max as f64 * ratio.powf(exponent)).round() as usize;
            n.max(1)
        })
        .collect();
    Ok(ImbalanceProfile::from_counts(counts))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub base_ids: Vec<usize>,
    pub new_ids: Vec<usize>,
}

impl ClassSplit {
    pub fn num_classes(&self) -> usize {
        self.base_ids.len() + self.new_ids.len()
    }

    pub fn is_base(&self, class: usize) -> bool {
        self.base_ids.contains(&class)
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let mut seen = vec![false; num_classes];
        for &c in self.base_ids.iter().chain(&self.new_ids) {
            if c >= num_classes || seen[c] {
                return Err(Error::Parameter(format!(
                    "class split is not a partition of 0..{num_classes}"
                )));
            }
            seen[c] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parameter(format!(
                "class split does not cover 0..{num_classes}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitPolicy {
    /// Base = first ⌈K/2⌉ classes in pack order.
    FirstHalf,
    /// Base = the listed class ids, in the given order.
    Explicit(Vec<usize>),
}

pub fn split_base_new(class_names: &[String], policy: &SplitPolicy) -> Result<ClassSplit> {
    let k = class_names.len();
    if k < 2 {
        return Err(Error::Parameter("base/new split needs at least 2 classes".into()));
    }
    let split = match policy {
        SplitPolicy::FirstHalf => {
            let nb = k.div_ceil(2);
            ClassSplit {
                base_ids: (0..nb).collect(),
                new_ids: (nb..k).collect(),
            }
        }
        SplitPolicy::Explicit(ids) => {
            let mut is_base = vec![false; k];
            for &c in ids {
                if c >= k {
                    return Err(Error::Parameter(format!("base class id {c} is outside 0..{k}")));
                }
                if is_base[c] {
                    return Err(Error::Parameter(format!("base class id {c} listed twice")));
                }
                is_base[c] = true;
            }
            if ids.is_empty() || ids.len() == k {
                return Err(Error::Parameter(
                    "explicit base list must be a non-empty proper subset of the classes".into(),
                ));
            }
            ClassSplit {
                base_ids: ids.clone(),
                new_ids: (0..k).filter(|&c| !is_base[c]).collect(),
            }
        }
    };
    Ok(split)
}

/// How decayed counts map onto base classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadOrder {
    /// The first base class is the head.
    Index,
    /// Seeded permutation of the base classes.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDraw {
    pub class: usize,
    pub name: String,
    pub requested: usize,
    pub available: usize,
    pub actual: usize,
}

/// Record of a sampling run, written next to the output pack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingManifest {
    pub seed: u64,
    pub policy: String,
    pub classes: Vec<ClassDraw>,
}

impl SamplingManifest {
    pub fn shortfalls(&self) -> impl Iterator<Item = &ClassDraw> {
        self.classes.iter().filter(|c| c.actual < c.requested)
    }
}

fn draw(
    pack: &FeaturePack,
    requests: &[(usize, usize)],
    rng: &mut Rng,
) -> (Vec<usize>, Vec<ClassDraw>) {
    let by_class = pack.indices_by_class();
    let mut chosen = Vec::new();
    let mut draws = Vec::with_capacity(requests.len());
    for &(class, requested) in requests {
        let mut idx = by_class[class].clone();
        rng.shuffle(&mut idx);
        idx.truncate(requested);
        draws.push(ClassDraw {
            class,
            name: pack.class_names[class].clone(),
            requested,
            available: by_class[class].len(),
            actual: idx.len(),
        });
        chosen.extend(idx);
    }
    (chosen, draws)
}

/// Down-samples the base classes of `pack` to the profile's counts; new
/// classes are dropped. Short classes contribute everything they have.
pub fn subsample(
    pack: &FeaturePack,
    profile: &ImbalanceProfile,
    split: &ClassSplit,
    order: HeadOrder,
    seed: u64,
) -> Result<(FeaturePack, SamplingManifest)> {
    split.validate(pack.num_classes())?;
    if profile.counts.len() != split.base_ids.len() {
        return Err(Error::Parameter(format!(
            "profile has {} counts for {} base classes",
            profile.counts.len(),
            split.base_ids.len()
        )));
    }
    let mut ranked = split.base_ids.clone();
    if order == HeadOrder::Random {
        Rng::from_tag(seed, "sampling/head-order").shuffle(&mut ranked);
    }
    let requests: Vec<(usize, usize)> = ranked.into_iter().zip(profile.counts.iter().copied()).collect();
    let mut rng = Rng::from_tag(seed, "sampling/subsample");
    let (chosen, classes) = draw(pack, &requests, &mut rng);
    if chosen.is_empty() {
        return Err(Error::Parameter("sampling produced an empty pack".into()));
    }
    let manifest = SamplingManifest {
        seed,
        policy: format!("exp-decay ratio={} head-order={order:?}", profile.ratio),
        classes,
    };
    Ok((pack.subset(&chosen), manifest))
}

/// At most `shots` samples for every class present in `pack`.
pub fn few_shot_sample(pack: &FeaturePack, shots: usize, seed: u64) -> Result<(FeaturePack, SamplingManifest)> {
    if shots == 0 {
        return Err(Error::Parameter("shots must be at least 1".into()));
    }
    let hist = pack.histogram();
    let requests: Vec<(usize, usize)> = (0..pack.num_classes())
        .filter(|&c| hist[c] > 0)
        .map(|c| (c, shots))
        .collect();
    let mut rng = Rng::from_tag(seed, "sampling/few-shot");
    let (chosen, classes) = draw(pack, &requests, &mut rng);
    if chosen.is_empty() {
        return Err(Error::Parameter("sampling produced an empty pack".into()));
    }
    let manifest = SamplingManifest {
        seed,
        policy: format!("few-shot shots={shots}"),
        classes,
    };
    Ok((pack.subset(&chosen), manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{SynthConfig, SynthWorld};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn pack(k: usize, per_class: usize) -> FeaturePack {
        SynthWorld::new(SynthConfig {
            num_classes: k,
            dim: 4,
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap()
        .image_pack("train", per_class)
    }

    #[test]
    fn decay_endpoints() {
        assert_eq!(exp_decay_counts(2, 100, 100.0).unwrap().counts, vec![100, 1]);
        assert_eq!(exp_decay_counts(10, 100, 1.0).unwrap().counts, vec![100; 10]);
        assert_eq!(exp_decay_counts(1, 37, 10.0).unwrap().counts, vec![37]);
    }

    #[test]
    fn decay_three_classes() {
        // 100 · 100^(−i/2) for i = 0, 1, 2.
        assert_eq!(exp_decay_counts(3, 100, 100.0).unwrap().counts, vec![100, 10, 1]);
    }

    #[test]
    fn decay_clamps_at_one() {
        let p = exp_decay_counts(4, 10, 1000.0).unwrap();
        assert_eq!(*p.counts.last().unwrap(), 1);
        assert!(p.counts.iter().all(|&n| n >= 1));
    }

    #[test]
    fn ratio_below_one_rejected() {
        assert!(matches!(exp_decay_counts(3, 100, 0.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn first_half_split() {
        let s = split_base_new(&names(10), &SplitPolicy::FirstHalf).unwrap();
        assert_eq!(s.base_ids, (0..5).collect::<Vec<_>>());
        assert_eq!(s.new_ids, (5..10).collect::<Vec<_>>());
        let s = split_base_new(&names(3), &SplitPolicy::FirstHalf).unwrap();
        assert_eq!((s.base_ids, s.new_ids), (vec![0, 1], vec![2]));
    }

    #[test]
    fn explicit_split() {
        let s = split_base_new(&names(3), &SplitPolicy::Explicit(vec![0, 2])).unwrap();
        assert_eq!((s.base_ids, s.new_ids), (vec![0, 2], vec![1]));
        assert!(split_base_new(&names(3), &SplitPolicy::Explicit(vec![0, 1, 2])).is_err());
        assert!(split_base_new(&names(3), &SplitPolicy::Explicit(vec![])).is_err());
        assert!(split_base_new(&names(3), &SplitPolicy::Explicit(vec![5])).is_err());
        assert!(split_base_new(&names(1), &SplitPolicy::FirstHalf).is_err());
    }

    #[test]
    fn subsample_histogram_follows_profile() {
        let p = pack(6, 100);
        let split = split_base_new(&p.class_names, &SplitPolicy::FirstHalf).unwrap();
        let profile = exp_decay_counts(3, 100, 100.0).unwrap();
        let (out, manifest) = subsample(&p, &profile, &split, HeadOrder::Index, 9).unwrap();
        assert_eq!(out.histogram(), vec![100, 10, 1, 0, 0, 0]);
        assert_eq!(manifest.shortfalls().count(), 0);
    }

    #[test]
    fn subsample_full_profile_is_permutation_of_base() {
        let p = pack(4, 20);
        let split = split_base_new(&p.class_names, &SplitPolicy::FirstHalf).unwrap();
        let (out, _) = subsample(&p, &ImbalanceProfile::uniform(2, 20), &split, HeadOrder::Index, 2).unwrap();
        let mut got: Vec<Vec<u32>> = (0..out.count()).map(|i| out.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        let mut want: Vec<Vec<u32>> = (0..40).map(|i| p.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn subsample_records_shortfall() {
        let p = pack(4, 5);
        let split = split_base_new(&p.class_names, &SplitPolicy::FirstHalf).unwrap();
        let (out, manifest) = subsample(&p, &ImbalanceProfile::uniform(2, 8), &split, HeadOrder::Index, 2).unwrap();
        assert_eq!(out.histogram(), vec![5, 5, 0, 0]);
        assert_eq!(manifest.shortfalls().count(), 2);
    }

    #[test]
    fn subsample_is_deterministic_and_seed_sensitive() {
        let p = pack(4, 50);
        let split = split_base_new(&p.class_names, &SplitPolicy::FirstHalf).unwrap();
        let prof = ImbalanceProfile::uniform(2, 10);
        let a = subsample(&p, &prof, &split, HeadOrder::Index, 5).unwrap().0;
        let b = subsample(&p, &prof, &split, HeadOrder::Index, 5).unwrap().0;
        let c = subsample(&p, &prof, &split, HeadOrder::Index, 6).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_head_order_permutes_counts() {
        let p = pack(8, 50);
        let split = split_base_new(&p.class_names, &SplitPolicy::FirstHalf).unwrap();
        let prof = exp_decay_counts(4, 40, 40.0).unwrap();
        let (out, _) = subsample(&p, &prof, &split, HeadOrder::Random, 3).unwrap();
        let mut h: Vec<usize> = out.histogram()[..4].to_vec();
        h.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(h, prof.counts);
    }

    #[test]
    fn few_shot_counts() {
        let p = pack(3, 100);
        let (out, _) = few_shot_sample(&p, 16, 1).unwrap();
        assert_eq!(out.histogram(), vec![16, 16, 16]);
        let (all, _) = few_shot_sample(&p, 500, 1).unwrap();
        assert_eq!(all.histogram(), vec![100, 100, 100]);
        assert_eq!(few_shot_sample(&p, 16, 1).unwrap().0, out);
        assert!(few_shot_sample(&p, 0, 1).is_err());
    }
}
