mod common;

use std::collections::BTreeSet;

use cavscreen::cavity::{cavity_residue_pocket, detect_cavities, holo_pocket, DetectorConfig, PocketConfig};
use cavscreen::geom;
use cavscreen::pocketlabel::iou;
use common::*;
use rand::Rng;

fn ligand_case(r: &mut impl Rng) -> cavscreen::moldata::LigandConformer {
    let n = r.random_range(1..15);
    let center = random_point(r, 6.0);
    random_ligand(r, n, center, 3.0)
}

#[test]
fn holo_pocket_and_iou_match_brute_force() {
    let cfg = PocketConfig::default();
    for seed in 0..1000 {
        let mut r = rng(seed);
        let n_atoms = r.random_range(20..120);
        let structure = random_structure(&mut r, n_atoms, 12.0);
        let ligand = ligand_case(&mut r);
        let expected = brute_holo_atoms(&structure, &ligand, cfg.holo_radius_d);
        match holo_pocket(&structure, &ligand, &cfg) {
            Ok(p) => {
                assert_eq!(
                    p.atom_indices.iter().copied().collect::<BTreeSet<_>>(),
                    expected,
                    "seed {seed}"
                );
                let other = ligand_case(&mut r);
                if let Ok(q) = holo_pocket(&structure, &other, &cfg) {
                    let got = iou(&p, &q).unwrap();
                    assert_eq!(got, brute_iou(&p.residue_keys, &q.residue_keys), "seed {seed}");
                    assert_eq!(got, iou(&q, &p).unwrap());
                }
            }
            Err(_) => assert!(expected.is_empty(), "seed {seed}"),
        }
    }
}

#[test]
fn detector_recovers_planted_shell_voids() {
    let cfg = DetectorConfig::default();
    let mut hits = 0;
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let center = random_point(&mut r, 20.0);
        let void_radius = r.random_range(4.5..6.5);
        let shell = hollow_shell(&mut r, center, void_radius, 6.0);
        let cavities = detect_cavities(&shell, &cfg).unwrap();
        if cavities
            .iter()
            .any(|c| geom::dist(c.center, center) <= 2.0 * cfg.grid_spacing)
        {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn detection_is_translation_equivariant() {
    let cfg = DetectorConfig::default();
    let mut r = rng(3);
    let shell = hollow_shell(&mut r, [0.0; 3], 5.5, 6.0);
    // whole grid steps keep the lattice aligned with the atoms
    let shift = [3.0, -2.0, 5.0];
    let mut moved = shell.clone();
    for a in &mut moved.atoms {
        a.position = geom::add(a.position, shift);
    }
    let a = detect_cavities(&shell, &cfg).unwrap();
    let b = detect_cavities(&moved, &cfg).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.size_score, y.size_score);
        assert!(geom::dist(geom::add(x.center, shift), y.center) < 1e-9);
    }
}

#[test]
fn shell_void_pocket_is_the_inner_surface() {
    let mut r = rng(5);
    let shell = hollow_shell(&mut r, [0.0; 3], 5.5, 6.0);
    let cavities = detect_cavities(&shell, &DetectorConfig::default()).unwrap();
    let cav = cavities
        .iter()
        .find(|c| geom::norm(c.center) < 2.0)
        .expect("void found");
    let pocket = cavity_residue_pocket(&shell, cav, &PocketConfig::default()).unwrap();
    assert!(pocket.is_valid());
    for &i in &pocket.atom_indices {
        let r = geom::norm(shell.atoms[i].position);
        assert!(r < 5.5 + 6.0 + 0.5);
    }
    // the outermost layer is out of reach of any probe
    assert!(pocket.atom_indices.len() < shell.atoms.len());
}
