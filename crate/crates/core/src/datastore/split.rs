use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledSample;
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::keyed::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
}

fn default_fraction() -> f64 {
    0.30
}

fn default_stratified() -> bool {
    true
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: default_fraction(),
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("split.train_fraction", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// `round_half_even(train_fraction * n)`.
    pub fn train_size(&self, n: usize) -> usize {
        (self.train_fraction * n as f64).round_ties_even() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub warnings: Vec<String>,
}

/// Splits one user's samples into train and test.
///
/// Stratified mode shuffles each label separately and apportions the train
/// quota across labels by largest remainder. A label with a single sample
/// sends it to train. Both outputs keep the input order.
pub fn split(samples: &[LabeledSample], spec: &SplitSpec) -> Result<SplitOutcome> {
    spec.validate()?;
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let user = samples[0].user_id.as_bytes();
    let target = spec.train_size(samples.len());
    let mut in_train = vec![false; samples.len()];
    let mut warnings = Vec::new();

    if spec.stratified {
        let groups: Vec<(EmotionLabel, Vec<usize>)> = EmotionLabel::ALL
            .iter()
            .map(|&l| {
                let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == l).collect();
                (l, idx)
            })
            .filter(|(_, idx)| !idx.is_empty())
            .collect();

        let singletons = groups.iter().filter(|(_, idx)| idx.len() == 1).count();
        let seats = target.saturating_sub(singletons);
        let pool: usize = groups
            .iter()
            .filter(|(_, idx)| idx.len() > 1)
            .map(|(_, idx)| idx.len())
            .sum();

        // Hamilton apportionment of `seats` over the non-singleton labels.
        let mut alloc: Vec<usize> = Vec::with_capacity(groups.len());
        let mut remainders: Vec<(usize, usize)> = Vec::new();
        for (g, (_, idx)) in groups.iter().enumerate() {
            if idx.len() == 1 {
                alloc.push(1);
            } else {
                let num = seats * idx.len();
                alloc.push(num / pool.max(1));
                remainders.push((num % pool.max(1), g));
            }
        }
        let given: usize = groups
            .iter()
            .zip(&alloc)
            .filter(|((_, idx), _)| idx.len() > 1)
            .map(|(_, a)| *a)
            .sum();
        // larger remainder first, then canonical label order
        remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, g) in remainders.iter().take(seats - given) {
            alloc[g] += 1;
        }

        for ((label, idx), take) in groups.iter().zip(&alloc) {
            if idx.len() == 1 {
                warnings.push(format!(
                    "label {label} has a single sample for user {}; it goes to train",
                    samples[idx[0]].user_id
                ));
            }
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut keyed_rng(spec.seed, &[b"split", user, label.name().as_bytes()]));
            for &i in shuffled.iter().take(*take) {
                in_train[i] = true;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut keyed_rng(spec.seed, &[b"split", user]));
        for &i in order.iter().take(target) {
            in_train[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.iter().zip(in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    Ok(SplitOutcome { train, test, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ImageRef;
    use proptest::prelude::*;

    fn samples(counts: &[(EmotionLabel, usize)]) -> Vec<LabeledSample> {
        let mut out = Vec::new();
        for &(label, n) in counts {
            for _ in 0..n {
                let id = format!("s{}", out.len());
                out.push(LabeledSample {
                    image: ImageRef(format!("sim://u/{id}")),
                    sample_id: id,
                    user_id: "u".into(),
                    label,
                });
            }
        }
        out
    }

    fn balanced(n: usize) -> Vec<LabeledSample> {
        let counts: Vec<_> = EmotionLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, n / 8 + usize::from(i < n % 8)))
            .collect();
        samples(&counts)
    }

    #[test]
    fn hundred_balanced_samples() {
        let out = split(&balanced(100), &SplitSpec::default()).unwrap();
        assert_eq!(out.train.len(), 30);
        assert_eq!(out.test.len(), 70);
        for l in EmotionLabel::ALL {
            let k = out.train.iter().filter(|s| s.label == l).count();
            assert!((3..=4).contains(&k), "{l}: {k}");
        }
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn same_seed_same_split() {
        let s = balanced(57);
        let spec = SplitSpec { seed: 9, ..Default::default() };
        assert_eq!(split(&s, &spec).unwrap(), split(&s, &spec).unwrap());
        let other = SplitSpec { seed: 10, ..Default::default() };
        assert_ne!(split(&s, &spec).unwrap().train, split(&s, &other).unwrap().train);
    }

    #[test]
    fn singleton_label_goes_to_train() {
        let s = samples(&[
            (EmotionLabel::Awe, 5),
            (EmotionLabel::Fear, 4),
            (EmotionLabel::Anger, 1),
        ]);
        let out = split(&s, &SplitSpec::default()).unwrap();
        assert!(out.train.iter().any(|x| x.label == EmotionLabel::Anger));
        assert_eq!(out.train.len(), 3);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn bad_inputs() {
        assert!(split(&balanced(1), &SplitSpec::default()).is_err());
        let spec = SplitSpec { train_fraction: 1.0, ..Default::default() };
        assert!(matches!(split(&balanced(10), &spec), Err(Error::Config { .. })));
    }

    #[test]
    fn round_half_even() {
        let spec = SplitSpec { train_fraction: 0.5, ..Default::default() };
        assert_eq!(spec.train_size(5), 2);
        assert_eq!(spec.train_size(7), 4);
    }

    proptest! {
        #[test]
        fn partition_is_exact(
            counts in proptest::collection::vec(2usize..15, 1..=8),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
            stratified in any::<bool>(),
        ) {
            let labelled: Vec<_> = counts.iter().enumerate().map(|(i, &n)| (EmotionLabel::ALL[i], n)).collect();
            let s = samples(&labelled);
            let spec = SplitSpec { train_fraction: frac, seed, stratified };
            let out = split(&s, &spec).unwrap();
            prop_assert_eq!(out.train.len() + out.test.len(), s.len());
            prop_assert_eq!(out.train.len(), spec.train_size(s.len()));
            let mut ids: Vec<_> = out.train.iter().chain(&out.test).map(|x| x.sample_id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), s.len());
            if stratified {
                // every label within one seat of its proportional quota
                for (l, n) in labelled {
                    let k = out.train.iter().filter(|x| x.label == l).count() as f64;
                    let quota = out.train.len() as f64 * n as f64 / s.len() as f64;
                    prop_assert!((k - quota).abs() < 1.0 + 1e-9, "{} {} {}", l, k, quota);
                }
            }
        }
    }
}
