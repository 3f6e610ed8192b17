use std::collections::BTreeSet;

use proptest::prelude::*;
use trisleep_harness::{split, SplitConfig};
use trisleep_numcore::{SeedStream, Tensor};
use trisleep_sync::{LabeledSegment, Segment, Trimodal};

fn seg(t: f64, family: Option<u32>) -> LabeledSegment {
    LabeledSegment {
        segment: Segment {
            t_start: t,
            signals: Trimodal::new(Tensor::zeros(&[1, 4]), Tensor::zeros(&[1, 4]), Tensor::zeros(&[6, 2])),
        },
        label: (t as u64 % 2) as u8,
        family,
    }
}

fn families(set: &[LabeledSegment]) -> BTreeSet<u32> {
    set.iter().filter_map(|s| s.family).collect()
}

proptest! {
    #[test]
    fn family_splits_are_disjoint_and_complete(
        fams in proptest::collection::vec(0u32..9, 2..120),
        seed in any::<u64>(),
    ) {
        let distinct: BTreeSet<u32> = fams.iter().copied().collect();
        prop_assume!(distinct.len() >= 2);
        let segs: Vec<_> = fams.iter().enumerate().map(|(i, &f)| seg(i as f64, Some(f))).collect();
        let s = split(segs, &SplitConfig::default(), SeedStream::new(seed)).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), fams.len());
        prop_assert!(!s.train.is_empty() && !s.test.is_empty());
        let (a, b, c) = (families(&s.train), families(&s.val), families(&s.test));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), distinct.len());
    }

    #[test]
    fn unlabeled_families_split_into_time_blocks(n in 2usize..200, seed in any::<u64>()) {
        let segs: Vec<_> = (0..n).rev().map(|i| seg(i as f64, None)).collect();
        let s = split(segs, &SplitConfig::default(), SeedStream::new(seed)).unwrap();
        let order: Vec<f64> = s.train.iter().chain(&s.val).chain(&s.test).map(|x| x.segment.t_start).collect();
        prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(!s.train.is_empty() && !s.test.is_empty());
    }
}

#[test]
fn family_counts_are_proportional() {
    let segs: Vec<_> = (0..200).map(|i| seg(i as f64, Some(i / 10))).collect();
    let s = split(segs, &SplitConfig::default(), SeedStream::new(4)).unwrap();
    // 20 families: 5 test, 3 validation, 12 train.
    assert_eq!((families(&s.train).len(), families(&s.val).len(), families(&s.test).len()), (12, 3, 5));
}

#[test]
fn split_is_seed_deterministic() {
    let segs: Vec<_> = (0..60).map(|i| seg(i as f64, Some(i % 6))).collect();
    let a = split(segs.clone(), &SplitConfig::default(), SeedStream::new(9)).unwrap();
    let b = split(segs, &SplitConfig::default(), SeedStream::new(9)).unwrap();
    assert_eq!(a.test, b.test);
    assert_eq!(a.train, b.train);
}

#[test]
fn bad_fractions_and_single_family_are_errors() {
    let segs: Vec<_> = (0..10).map(|i| seg(i as f64, Some(0))).collect();
    assert!(split(segs.clone(), &SplitConfig::default(), SeedStream::new(0)).is_err());
    let cfg = SplitConfig {
        val_frac: 0.5,
        test_frac: 0.5,
    };
    assert!(split(segs, &cfg, SeedStream::new(0)).is_err());
}
