//! Residue-set overlap between pockets, cavity labeling for training and the
//! distance-to-closest-atom (DCA) criterion used for pocket identification.

use rand::seq::{index::sample, IndexedRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cavity::{Cavity, Pocket};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::moldata::LigandConformer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub negative_ratio: f64,
    pub rng_seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            tau_pos: 0.5,
            tau_neg: 0.1,
            negative_ratio: 0.5,
            rng_seed: 1,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_neg && self.tau_neg < self.tau_pos && self.tau_pos <= 1.0) {
            return Err(Error::Config("require 0 <= tau_neg < tau_pos <= 1".into()));
        }
        if !(self.negative_ratio > 0.0 && self.negative_ratio <= 1.0) {
            return Err(Error::Config("negative_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn label_for(&self, iou: f64) -> CavityLabel {
        if iou >= self.tau_pos {
            CavityLabel::Positive
        } else if iou <= self.tau_neg {
            CavityLabel::Negative
        } else {
            CavityLabel::Ignore
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CavityLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCavity {
    pub cavity: Cavity,
    pub pocket: Pocket,
    pub iou: f64,
    pub coverage: f64,
    pub label: CavityLabel,
}

/// Intersection over union of the two pockets' residue sets.
pub fn iou(a: &Pocket, b: &Pocket) -> Result<f64> {
    if a.residue_keys.is_empty() && b.residue_keys.is_empty() {
        return Err(Error::EmptyPocket("iou of two empty pockets".into()));
    }
    let inter = a.residue_keys.intersection(&b.residue_keys).count();
    let union = a.residue_keys.len() + b.residue_keys.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Fraction of the holo pocket's residues covered by the cavity pocket.
pub fn coverage(holo: &Pocket, cavity_pocket: &Pocket) -> Result<f64> {
    if holo.residue_keys.is_empty() {
        return Err(Error::EmptyPocket("coverage against an empty holo pocket".into()));
    }
    let inter = holo.residue_keys.intersection(&cavity_pocket.residue_keys).count();
    Ok(inter as f64 / holo.residue_keys.len() as f64)
}

/// Labels each (cavity, residue-level pocket) pair by its IoU with the holo pocket.
pub fn label_cavities(holo: &Pocket, cavities: Vec<(Cavity, Pocket)>, cfg: &LabelConfig) -> Result<Vec<LabeledCavity>> {
    if holo.residue_keys.is_empty() {
        return Err(Error::EmptyPocket("holo pocket has no residues".into()));
    }
    cavities
        .into_iter()
        .map(|(cavity, pocket)| {
            let iou = iou(holo, &pocket)?;
            let coverage = coverage(holo, &pocket)?;
            Ok(LabeledCavity {
                cavity,
                pocket,
                iou,
                coverage,
                label: cfg.label_for(iou),
            })
        })
        .collect()
}

/// Cavities drawn for one optimization step, as indices into the labeled list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingDraw {
    pub positive: Option<usize>,
    pub negatives: Vec<usize>,
}

/// One uniformly chosen positive and a uniform subset of
/// ⌈negative_ratio · |negatives|⌉ negatives.
pub fn sample_training_cavities(labeled: &[LabeledCavity], cfg: &LabelConfig, rng: &mut ChaCha8Rng) -> TrainingDraw {
    let positives: Vec<usize> = indices_with(labeled, CavityLabel::Positive);
    let negatives: Vec<usize> = indices_with(labeled, CavityLabel::Negative);
    let positive = positives.choose(rng).copied();
    let take = ((cfg.negative_ratio * negatives.len() as f64).ceil() as usize).min(negatives.len());
    let mut picked: Vec<usize> = sample(rng, negatives.len(), take)
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    picked.sort_unstable();
    TrainingDraw {
        positive,
        negatives: picked,
    }
}

fn indices_with(labeled: &[LabeledCavity], label: CavityLabel) -> Vec<usize> {
    labeled
        .iter()
        .enumerate()
        .filter(|(_, c)| c.label == label)
        .map(|(i, _)| i)
        .collect()
}

/// Distance from `center` to the closest heavy (non-hydrogen) ligand atom.
pub fn dca(center: Vec3, ligand: &LigandConformer) -> Result<f64> {
    ligand
        .atoms
        .iter()
        .filter(|a| !a.element.is_hydrogen())
        .map(|a| geom::dist(center, a.position))
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::Ligand(format!("{}: no heavy atoms", ligand.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity::PocketSource;
    use crate::moldata::{ActivityLabel, Atom, Element, ResidueKey};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    fn pocket(seqs: &[i32]) -> Pocket {
        Pocket {
            residue_keys: seqs
                .iter()
                .map(|&s| ResidueKey {
                    chain_id: 'A',
                    seq_num: s,
                })
                .collect(),
            atom_indices: seqs.iter().map(|&s| s as usize).collect(),
            center: [0.0; 3],
            source: PocketSource::Manual,
        }
    }

    fn labeled(iou: f64, cfg: &LabelConfig) -> LabeledCavity {
        LabeledCavity {
            cavity: Cavity::from_probes(vec![[iou, 0.0, 0.0]]).unwrap(),
            pocket: pocket(&[1]),
            iou,
            coverage: iou,
            label: cfg.label_for(iou),
        }
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&pocket(&[1, 2, 3]), &pocket(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(iou(&pocket(&[1, 2]), &pocket(&[3, 4])).unwrap(), 0.0);
        assert_eq!(iou(&pocket(&[1, 2, 3]), &pocket(&[2, 3, 4])).unwrap(), 0.5);
        assert!(iou(&pocket(&[]), &pocket(&[])).is_err());
    }

    #[test]
    fn coverage_cases() {
        assert_eq!(coverage(&pocket(&[2, 3]), &pocket(&[1, 2, 3, 4])).unwrap(), 1.0);
        assert_eq!(coverage(&pocket(&[1]), &pocket(&[2])).unwrap(), 0.0);
        assert_eq!(coverage(&pocket(&[1, 2, 3, 4]), &pocket(&[3, 4, 5])).unwrap(), 0.5);
        assert!(coverage(&pocket(&[]), &pocket(&[1])).is_err());
    }

    #[test]
    fn thresholds() {
        let cfg = LabelConfig::default();
        assert_eq!(cfg.label_for(0.6), CavityLabel::Positive);
        assert_eq!(cfg.label_for(0.05), CavityLabel::Negative);
        assert_eq!(cfg.label_for(0.3), CavityLabel::Ignore);
        assert_eq!(cfg.label_for(0.5), CavityLabel::Positive);
        assert_eq!(cfg.label_for(0.1), CavityLabel::Negative);
    }

    #[test]
    fn label_cavities_uses_iou() {
        let holo = pocket(&[1, 2, 3]);
        let cav = |s: &[i32]| (Cavity::from_probes(vec![[0.0; 3]]).unwrap(), pocket(s));
        let out = label_cavities(
            &holo,
            vec![cav(&[1, 2, 3]), cav(&[9]), cav(&[3, 4])],
            &LabelConfig::default(),
        )
        .unwrap();
        let labels: Vec<CavityLabel> = out.iter().map(|c| c.label).collect();
        assert_eq!(
            labels,
            vec![CavityLabel::Positive, CavityLabel::Negative, CavityLabel::Ignore]
        );
        assert_eq!(out[2].iou, 0.25);
        assert!((out[2].coverage - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_counts_and_determinism() {
        let cfg = LabelConfig::default();
        let set: Vec<LabeledCavity> = [0.7, 0.0, 0.02, 0.05, 0.08].iter().map(|&v| labeled(v, &cfg)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draw = sample_training_cavities(&set, &cfg, &mut rng);
        assert_eq!(draw.positive, Some(0));
        assert_eq!(draw.negatives.len(), 2);
        assert!(draw.negatives.iter().all(|&i| set[i].label == CavityLabel::Negative));

        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(
            sample_training_cavities(&set, &cfg, &mut r1),
            sample_training_cavities(&set, &cfg, &mut r2)
        );
    }

    #[test]
    fn sampling_without_positive() {
        let cfg = LabelConfig::default();
        let set: Vec<LabeledCavity> = [0.0, 0.3].iter().map(|&v| labeled(v, &cfg)).collect();
        let draw = sample_training_cavities(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(draw.positive, None);
        assert_eq!(draw.negatives, vec![0]);
    }

    fn lig(points: &[(Element, Vec3)]) -> LigandConformer {
        LigandConformer::new(
            "l",
            points.iter().map(|(e, p)| Atom::new(*e, *p)).collect(),
            ActivityLabel::Unlabeled,
        )
        .unwrap()
    }

    #[test]
    fn dca_cases() {
        let l = lig(&[(Element::C, [1.0, 2.0, 3.0])]);
        assert_eq!(dca([1.0, 2.0, 3.0], &l).unwrap(), 0.0);
        let l = lig(&[
            (Element::C, [3.0, 0.0, 0.0]),
            (Element::N, [0.0, 4.0, 0.0]),
            (Element::H, [0.5, 0.0, 0.0]),
        ]);
        assert_eq!(dca([0.0; 3], &l).unwrap(), 3.0);
        assert!(dca([0.0; 3], &lig(&[(Element::H, [0.0; 3])])).is_err());
    }

    fn brute_iou(a: &BTreeSet<i32>, b: &BTreeSet<i32>) -> f64 {
        let mut inter = 0;
        let mut all: Vec<i32> = a.iter().chain(b.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        for x in &all {
            if a.contains(x) && b.contains(x) {
                inter += 1;
            }
        }
        inter as f64 / all.len() as f64
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_matches_brute_force(
            a in prop::collection::btree_set(0i32..40, 1..20),
            b in prop::collection::btree_set(0i32..40, 1..20),
        ) {
            let pa = pocket(&a.iter().copied().collect::<Vec<_>>());
            let pb = pocket(&b.iter().copied().collect::<Vec<_>>());
            let v = iou(&pa, &pb).unwrap();
            prop_assert_eq!(v, iou(&pb, &pa).unwrap());
            prop_assert_eq!(v, brute_iou(&a, &b));
            prop_assert_eq!(iou(&pa, &pa).unwrap(), 1.0);
            // |a∩b|/|a∪b| = coverage(a,b)·|a|/|a∪b|
            let union = a.union(&b).count() as f64;
            let via_cov = coverage(&pa, &pb).unwrap() * a.len() as f64 / union;
            prop_assert!((v - via_cov).abs() < 1e-12);
            prop_assert!(v <= coverage(&pa, &pb).unwrap() + 1e-15);
        }

        #[test]
        fn label_partition_exhaustive(v in 0.0f64..=1.0) {
            let cfg = LabelConfig::default();
            let l = cfg.label_for(v);
            let pos = v >= cfg.tau_pos;
            let neg = v <= cfg.tau_neg;
            prop_assert!(!(pos && neg));
            match l {
                CavityLabel::Positive => prop_assert!(pos),
                CavityLabel::Negative => prop_assert!(neg),
                CavityLabel::Ignore => prop_assert!(!pos && !neg),
            }
        }

        #[test]
        fn dca_rigid_motion(
            q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            t in (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0),
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..10),
            c in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
        ) {
            prop_assume!((q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3) > 1e-3);
            let r = geom::quaternion_to_matrix([q.0, q.1, q.2, q.3]);
            let shift = [t.0, t.1, t.2];
            let motion = |p: Vec3| geom::add(geom::rotate(&r, p), shift);
            let atoms: Vec<(Element, Vec3)> = pts.iter().map(|p| (Element::C, [p.0, p.1, p.2])).collect();
            let moved: Vec<(Element, Vec3)> = atoms.iter().map(|(e, p)| (*e, motion(*p))).collect();
            let center = [c.0, c.1, c.2];
            let d0 = dca(center, &lig(&atoms)).unwrap();
            let d1 = dca(motion(center), &lig(&moved)).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
