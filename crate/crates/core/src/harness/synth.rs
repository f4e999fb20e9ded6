//! Synthetic planted-ground-truth world.
//!
//! Each structure is a jittered lattice ball of atoms with a few spherical
//! voids carved out. One void is the binding site: its lining shell is
//! enriched with the heteroatoms of a chemotype code. Actives carry the same
//! code, decoys carry other codes, and a holo ligand sits in the binding
//! void. Screening targets come with a library; training structures come
//! with a few activity-only ligands.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::derive_seed;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::moldata::{ActivityLabel, Atom, Element, LigandConformer, ProteinStructure, Residue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldSpec {
    pub n_targets: usize,
    pub min_cavities: usize,
    pub max_cavities: usize,
    pub actives_per_target: usize,
    pub decoys_per_target: usize,
    /// Element-composition codes, e.g. `"NO"` = nitrogen and oxygen.
    pub chemotype_alphabet: Vec<String>,
    /// Gaussian positional noise on ligand atoms, Å.
    pub noise_scale: f64,
    pub n_train_complexes: usize,
    pub activity_ligands_per_complex: usize,
    pub protein_radius: f64,
    pub lattice_spacing: f64,
    pub void_radius_min: f64,
    pub void_radius_max: f64,
    /// Chance that a lining atom of the binding void takes a code element.
    pub lining_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            n_targets: 20,
            min_cavities: 3,
            max_cavities: 6,
            actives_per_target: 20,
            decoys_per_target: 400,
            chemotype_alphabet: ["N", "O", "S", "P", "NO", "NS", "OS", "NP"].map(String::from).to_vec(),
            noise_scale: 0.3,
            n_train_complexes: 160,
            activity_ligands_per_complex: 2,
            protein_radius: 24.0,
            lattice_spacing: 2.6,
            void_radius_min: 5.5,
            void_radius_max: 6.5,
            lining_probability: 0.7,
            seed: 1,
        }
    }
}

/// Shell thickness beyond the void radius that receives code elements.
const LINING_DEPTH: f64 = 3.0;
const LATTICE_JITTER: f64 = 0.3;
const RESIDUE_CELL: f64 = 4.0;
const LIGAND_RADIUS: f64 = 3.8;
const PLACEMENT_RETRIES: usize = 100;
const SAMPLES_PER_VOID: usize = 500;
pub const MIN_BINDING_SEPARATION: f64 = 8.0;

fn code_elements(code: &str) -> Result<Vec<Element>> {
    let els: Vec<Element> = code.chars().map(|c| Element::from_symbol(&c.to_string())).collect();
    if els.is_empty() || els.iter().any(|e| matches!(e, Element::C | Element::X | Element::H)) {
        return Err(Error::Config(format!(
            "chemotype code {code:?} must list heteroatoms among N, O, S, P"
        )));
    }
    Ok(els)
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.n_targets == 0 {
            return err("n_targets must be >= 1");
        }
        if self.min_cavities < 2 || self.min_cavities > self.max_cavities {
            return err("planted cavities need 2 <= min_cavities <= max_planted_cavities");
        }
        if self.actives_per_target == 0 || self.decoys_per_target == 0 {
            return err("targets need at least one active and one decoy");
        }
        if self.chemotype_alphabet.len() < 2 {
            return err("chemotype_alphabet needs at least two codes");
        }
        for code in &self.chemotype_alphabet {
            code_elements(code)?;
        }
        let mut uniq = self.chemotype_alphabet.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != self.chemotype_alphabet.len() {
            return err("chemotype_alphabet has duplicate codes");
        }
        if !(self.noise_scale >= 0.0) {
            return err("noise_scale must be >= 0");
        }
        if !(self.lattice_spacing > 0.5 && self.protein_radius > self.lattice_spacing) {
            return err("lattice_spacing must exceed 0.5 Å and be below protein_radius");
        }
        if !(self.void_radius_min > 0.0 && self.void_radius_min <= self.void_radius_max) {
            return err("void radii must satisfy 0 < void_radius_min <= void_radius_max");
        }
        if !(0.0..=1.0).contains(&self.lining_probability) {
            return err("lining_probability must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteRole {
    Screening,
    Training,
}

/// One generated structure with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSite {
    pub id: String,
    pub role: SiteRole,
    pub structure: ProteinStructure,
    pub code: String,
    pub void_centers: Vec<Vec3>,
    pub void_radii: Vec<f64>,
    /// Index of the binding void in `void_centers`.
    pub binding_index: usize,
    pub holo_ligand: LigandConformer,
    /// Screening library (actives and decoys), or activity-only ligands for
    /// training structures.
    pub ligands: Vec<LigandConformer>,
}

impl PlantedSite {
    pub fn binding_center(&self) -> Vec3 {
        self.void_centers[self.binding_index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: SyntheticWorldSpec,
    pub targets: Vec<PlantedSite>,
    pub train: Vec<PlantedSite>,
}

impl SyntheticWorld {
    pub fn sites(&self) -> impl Iterator<Item = &PlantedSite> {
        self.targets.iter().chain(&self.train)
    }
}

fn place_voids(spec: &SyntheticWorldSpec, n: usize, rng: &mut ChaCha8Rng, id: &str) -> Result<(Vec<Vec3>, Vec<f64>)> {
    'attempt: for _ in 0..PLACEMENT_RETRIES {
        let mut centers: Vec<Vec3> = Vec::with_capacity(n);
        let mut radii: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.random_range(spec.void_radius_min..=spec.void_radius_max);
            let reach = spec.protein_radius - r - 2.0;
            if reach <= 0.0 {
                break 'attempt;
            }
            let mut placed = false;
            for _ in 0..SAMPLES_PER_VOID {
                let c = [
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                    rng.random_range(-reach..reach),
                ];
                if geom::norm(c) > reach {
                    continue;
                }
                let clear = centers
                    .iter()
                    .zip(&radii)
                    .all(|(o, ro)| geom::dist(c, *o) >= (r + ro + 2.0).max(MIN_BINDING_SEPARATION));
                if clear {
                    centers.push(c);
                    radii.push(r);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        if centers.len() == n {
            return Ok((centers, radii));
        }
    }
    Err(Error::InfeasibleGeometry(format!(
        "{id}: could not place {n} separated voids of radius up to {} Å in a {} Å ball after {PLACEMENT_RETRIES} retries",
        spec.void_radius_max, spec.protein_radius
    )))
}

fn background_element(rng: &mut ChaCha8Rng) -> Element {
    let u: f64 = rng.random();
    if u < 0.8 {
        Element::C
    } else if u < 0.9 {
        Element::N
    } else {
        Element::O
    }
}

fn build_protein(
    spec: &SyntheticWorldSpec,
    id: &str,
    centers: &[Vec3],
    radii: &[f64],
    binding: usize,
    code: &[Element],
    rng: &mut ChaCha8Rng,
) -> Result<ProteinStructure> {
    let r = spec.protein_radius;
    let s = spec.lattice_spacing;
    let steps = (r / s).floor() as i64;
    let jitter = LATTICE_JITTER.min(0.25 * s);
    let mut placed: Vec<(Vec3, Element)> = Vec::new();
    for i in -steps..=steps {
        for j in -steps..=steps {
            for k in -steps..=steps {
                let p = [
                    i as f64 * s + rng.random_range(-jitter..=jitter),
                    j as f64 * s + rng.random_range(-jitter..=jitter),
                    k as f64 * s + rng.random_range(-jitter..=jitter),
                ];
                if geom::norm(p) > r {
                    continue;
                }
                if centers.iter().zip(radii).any(|(c, rv)| geom::dist(p, *c) < *rv) {
                    continue;
                }
                let d_bind = geom::dist(p, centers[binding]);
                let lining = d_bind < radii[binding] + LINING_DEPTH;
                let element = if lining && rng.random::<f64>() < spec.lining_probability {
                    code[rng.random_range(0..code.len())]
                } else {
                    background_element(rng)
                };
                placed.push((p, element));
            }
        }
    }

    let cell = |p: Vec3| -> [i64; 3] { p.map(|c| (c / RESIDUE_CELL).floor() as i64) };
    let mut by_cell: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, (p, _)) in placed.iter().enumerate() {
        by_cell.entry(cell(*p)).or_default().push(i);
    }
    let mut atoms = Vec::with_capacity(placed.len());
    let mut residues = Vec::with_capacity(by_cell.len());
    for (ri, members) in by_cell.values().enumerate() {
        let start = atoms.len();
        for &m in members {
            let (p, e) = placed[m];
            atoms.push(Atom {
                name: e.symbol().to_string(),
                element: e,
                position: p,
                residue_index: Some(ri),
            });
        }
        residues.push(Residue {
            chain_id: 'A',
            seq_num: ri as i32 + 1,
            name: "GLY".into(),
            atom_indices: (start..atoms.len()).collect(),
        });
    }
    ProteinStructure::new(id, atoms, residues)
}

fn make_ligand(
    id: String,
    code: &[Element],
    center: Vec3,
    noise: &Normal<f64>,
    label: ActivityLabel,
    rng: &mut ChaCha8Rng,
) -> Result<LigandConformer> {
    let n = rng.random_range(8..=14usize);
    let n_het = n / 2;
    let offset = rng.random_range(0..code.len());
    let mut atoms = Vec::with_capacity(n);
    for a in 0..n {
        let element = if a < n_het {
            code[(offset + a) % code.len()]
        } else {
            Element::C
        };
        let p = loop {
            let p = [
                rng.random_range(-LIGAND_RADIUS..=LIGAND_RADIUS),
                rng.random_range(-LIGAND_RADIUS..=LIGAND_RADIUS),
                rng.random_range(-LIGAND_RADIUS..=LIGAND_RADIUS),
            ];
            if geom::norm(p) <= LIGAND_RADIUS {
                break p;
            }
        };
        let jittered = [0, 1, 2].map(|c| center[c] + p[c] + noise.sample(rng));
        atoms.push(Atom::new(element, jittered));
    }
    LigandConformer::new(id, atoms, label)
}

fn generate_site(spec: &SyntheticWorldSpec, id: String, role: SiteRole) -> Result<PlantedSite> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &id));
    let noise = Normal::new(0.0, spec.noise_scale).map_err(|e| Error::Config(format!("noise_scale: {e}")))?;
    let n_voids = rng.random_range(spec.min_cavities..=spec.max_cavities);
    let (void_centers, void_radii) = place_voids(spec, n_voids, &mut rng, &id)?;
    let binding_index = rng.random_range(0..n_voids);
    let code_idx = rng.random_range(0..spec.chemotype_alphabet.len());
    let code = spec.chemotype_alphabet[code_idx].clone();
    let code_els = code_elements(&code)?;
    let structure = build_protein(
        spec,
        &id,
        &void_centers,
        &void_radii,
        binding_index,
        &code_els,
        &mut rng,
    )?;
    let holo_ligand = make_ligand(
        format!("{id}_holo"),
        &code_els,
        void_centers[binding_index],
        &noise,
        ActivityLabel::Active,
        &mut rng,
    )?;

    let mut ligands = Vec::new();
    match role {
        SiteRole::Screening => {
            for a in 0..spec.actives_per_target {
                ligands.push(make_ligand(
                    format!("{id}_a{a:03}"),
                    &code_els,
                    [0.0; 3],
                    &noise,
                    ActivityLabel::Active,
                    &mut rng,
                )?);
            }
            let others: Vec<usize> = (0..spec.chemotype_alphabet.len()).filter(|&c| c != code_idx).collect();
            for d in 0..spec.decoys_per_target {
                let c = others[rng.random_range(0..others.len())];
                let els = code_elements(&spec.chemotype_alphabet[c])?;
                ligands.push(make_ligand(
                    format!("{id}_d{d:03}"),
                    &els,
                    [0.0; 3],
                    &noise,
                    ActivityLabel::Decoy,
                    &mut rng,
                )?);
            }
            ligands.shuffle(&mut rng);
        }
        SiteRole::Training => {
            for a in 0..spec.activity_ligands_per_complex {
                ligands.push(make_ligand(
                    format!("{id}_act{a:02}"),
                    &code_els,
                    [0.0; 3],
                    &noise,
                    ActivityLabel::Active,
                    &mut rng,
                )?);
            }
        }
    }

    Ok(PlantedSite {
        id,
        role,
        structure,
        code,
        void_centers,
        void_radii,
        binding_index,
        holo_ligand,
        ligands,
    })
}

/// Generates the whole world; every structure has its own seeded stream, so
/// parallel generation is deterministic.
pub fn gen_synthetic(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let jobs: Vec<(String, SiteRole)> = (0..spec.n_targets)
        .map(|i| (format!("t{i:03}"), SiteRole::Screening))
        .chain((0..spec.n_train_complexes).map(|i| (format!("c{i:04}"), SiteRole::Training)))
        .collect();
    let sites: Vec<PlantedSite> = jobs
        .into_par_iter()
        .map(|(id, role)| generate_site(spec, id, role))
        .collect::<Result<_>>()?;
    let (targets, train) = sites.into_iter().partition(|s| s.role == SiteRole::Screening);
    Ok(SyntheticWorld {
        spec: spec.clone(),
        targets,
        train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticWorldSpec {
        SyntheticWorldSpec {
            n_targets: 2,
            actives_per_target: 3,
            decoys_per_target: 5,
            n_train_complexes: 2,
            protein_radius: 20.0,
            ..SyntheticWorldSpec::default()
        }
    }

    #[test]
    fn deterministic_and_separated() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        for site in a.sites() {
            let bc = site.binding_center();
            for (i, c) in site.void_centers.iter().enumerate() {
                if i != site.binding_index {
                    assert!(geom::dist(bc, *c) >= MIN_BINDING_SEPARATION);
                }
            }
            let n = site.void_centers.len();
            assert!((3..=6).contains(&n));
            for atom in &site.structure.atoms {
                for (c, r) in site.void_centers.iter().zip(&site.void_radii) {
                    assert!(geom::dist(atom.position, *c) >= *r);
                }
            }
        }
        assert_eq!(a.targets[0].ligands.len(), 8);
        assert_eq!(a.targets[0].ligands.iter().filter(|l| l.is_active()).count(), 3);
    }

    #[test]
    fn infeasible_geometry_reported() {
        let spec = SyntheticWorldSpec {
            protein_radius: 12.0,
            min_cavities: 6,
            ..small()
        };
        assert!(matches!(gen_synthetic(&spec), Err(Error::InfeasibleGeometry(_))));
    }

    #[test]
    fn invalid_codes_rejected() {
        let spec = SyntheticWorldSpec {
            chemotype_alphabet: vec!["N".into(), "CQ".into()],
            ..small()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }
}
