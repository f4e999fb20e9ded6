//! Grid-based cavity detection and pocket construction.
//!
//! The detector is a protein–solvent–protein (PSP) scan: empty grid points
//! enclosed by protein along enough scan directions are buried probe points,
//! and connected groups of probe points are cavities. Pockets are crops of
//! the protein around a ligand (atom-level), around a cavity's probe points
//! (residue-level), or around a center within a larger radius with seeded
//! down-sampling.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::moldata::{Element, LigandConformer, ProteinStructure, ResidueKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cavity {
    pub probe_points: Vec<Vec3>,
    pub center: Vec3,
    pub size_score: usize,
}

impl Cavity {
    pub fn from_probes(probe_points: Vec<Vec3>) -> Result<Self> {
        let center = geom::mean(&probe_points).ok_or(Error::EmptyInput("cavity without probe points"))?;
        let size_score = probe_points.len();
        Ok(Cavity {
            probe_points,
            center,
            size_score,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PocketSource {
    Holo,
    Cavity,
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pocket {
    pub residue_keys: BTreeSet<ResidueKey>,
    /// Sorted indices into the protein's atom list.
    pub atom_indices: Vec<usize>,
    pub center: Vec3,
    pub source: PocketSource,
}

impl Pocket {
    /// Residue-level cavity pockets may legitimately come back empty; such
    /// pockets must not be used for encoding.
    pub fn is_valid(&self) -> bool {
        !self.atom_indices.is_empty()
    }

    pub fn atoms(&self, structure: &ProteinStructure) -> Vec<crate::moldata::Atom> {
        self.atom_indices.iter().map(|&i| structure.atoms[i].clone()).collect()
    }

    fn from_atoms(structure: &ProteinStructure, atom_indices: Vec<usize>, center: Vec3, source: PocketSource) -> Self {
        let residue_keys = atom_indices.iter().map(|&i| structure.residue_key_of(i)).collect();
        Pocket {
            residue_keys,
            atom_indices,
            center,
            source,
        }
    }
}

/// Van der Waals radii per element, Å.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdwTable([f64; Element::COUNT]);

impl Default for VdwTable {
    fn default() -> Self {
        let mut r = [1.70; Element::COUNT];
        r[Element::H.index()] = 1.20;
        r[Element::C.index()] = 1.70;
        r[Element::N.index()] = 1.55;
        r[Element::O.index()] = 1.52;
        r[Element::S.index()] = 1.80;
        r[Element::P.index()] = 1.80;
        r[Element::X.index()] = 1.70;
        VdwTable(r)
    }
}

impl VdwTable {
    pub fn radius(&self, element: Element) -> f64 {
        self.0[element.index()]
    }

    pub fn set(&mut self, element: Element, radius: f64) {
        self.0[element.index()] = radius;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub grid_spacing: f64,
    pub psp_min_events: u8,
    pub min_cluster_points: usize,
    pub max_cavities: usize,
    pub vdw_radii: VdwTable,
    pub probe_margin: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            grid_spacing: 1.0,
            psp_min_events: 3,
            min_cluster_points: 30,
            max_cavities: 10,
            vdw_radii: VdwTable::default(),
            probe_margin: 1.4,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::Config("grid_spacing must be > 0".into()));
        }
        if !(1..=7).contains(&self.psp_min_events) {
            return Err(Error::Config("psp_min_events must lie in 1..7".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketConfig {
    pub holo_radius_d: f64,
    pub enlarged_radius: f64,
    pub cavity_residue_radius: f64,
    pub max_pocket_atoms: usize,
    pub downsample_seed: u64,
}

impl Default for PocketConfig {
    fn default() -> Self {
        PocketConfig {
            holo_radius_d: 6.0,
            enlarged_radius: 10.0,
            cavity_residue_radius: 6.0,
            max_pocket_atoms: 256,
            downsample_seed: 1,
        }
    }
}

impl PocketConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("holo_radius_d", self.holo_radius_d),
            ("enlarged_radius", self.enlarged_radius),
            ("cavity_residue_radius", self.cavity_residue_radius),
        ] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.max_pocket_atoms < 8 {
            return Err(Error::Config("max_pocket_atoms must be >= 8".into()));
        }
        Ok(())
    }
}

/// Axis scans plus the four cube diagonals. Every direction is either an
/// axis or has a +1 x component, so a single ascending (x, y, z) sweep sees
/// each point's predecessor before the point itself.
const SCAN_DIRECTIONS: [[i64; 3]; 7] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

const GRID_PADDING: f64 = 5.0;

struct Grid {
    origin: Vec3,
    spacing: f64,
    dims: [usize; 3],
}

impl Grid {
    fn covering(points: &[Vec3], spacing: f64) -> Grid {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let origin = [lo[0] - GRID_PADDING, lo[1] - GRID_PADDING, lo[2] - GRID_PADDING];
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k] + 2.0 * GRID_PADDING) / spacing).ceil() as usize + 1);
        Grid { origin, spacing, dims }
    }

    fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        ]
    }

    #[inline]
    fn offset(&self, ijk: [usize; 3], d: [i64; 3]) -> Option<usize> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let v = ijk[a] as i64 + d[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            out[a] = v as usize;
        }
        Some(self.index(out[0], out[1], out[2]))
    }
}

fn occupancy(structure: &ProteinStructure, grid: &Grid, cfg: &DetectorConfig) -> Vec<bool> {
    let mut occ = vec![false; grid.len()];
    for atom in &structure.atoms {
        let r = cfg.vdw_radii.radius(atom.element) + cfg.probe_margin;
        let r2 = r * r;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let rel = atom.position[a] - grid.origin[a];
            lo[a] = ((rel - r) / grid.spacing).floor().max(0.0) as usize;
            hi[a] = (((rel + r) / grid.spacing).ceil() as usize).min(grid.dims[a] - 1);
        }
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if geom::dist2(grid.point(i, j, k), atom.position) <= r2 {
                        occ[grid.index(i, j, k)] = true;
                    }
                }
            }
        }
    }
    occ
}

/// Number of scan directions along which each point sees protein on both sides.
fn psp_counts(grid: &Grid, occ: &[bool]) -> Vec<u8> {
    let n = grid.len();
    let [nx, ny, nz] = grid.dims;
    let mut counts = vec![0u8; n];
    let mut before = vec![false; n];
    let mut after = vec![false; n];
    for d in SCAN_DIRECTIONS {
        let back = [-d[0], -d[1], -d[2]];
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let idx = grid.index(i, j, k);
                    before[idx] = grid.offset([i, j, k], back).is_some_and(|p| occ[p] || before[p]);
                }
            }
        }
        for i in (0..nx).rev() {
            for j in (0..ny).rev() {
                for k in (0..nz).rev() {
                    let idx = grid.index(i, j, k);
                    after[idx] = grid.offset([i, j, k], d).is_some_and(|p| occ[p] || after[p]);
                }
            }
        }
        for idx in 0..n {
            if before[idx] && after[idx] {
                counts[idx] += 1;
            }
        }
    }
    counts
}

/// Detects buried cavities, largest first.
pub fn detect_cavities(structure: &ProteinStructure, cfg: &DetectorConfig) -> Result<Vec<Cavity>> {
    cfg.validate()?;
    if structure.atoms.is_empty() {
        return Err(Error::EmptyStructure);
    }
    let grid = Grid::covering(&structure.positions(), cfg.grid_spacing);
    let occ = occupancy(structure, &grid, cfg);
    let counts = psp_counts(&grid, &occ);
    let buried: Vec<bool> = (0..grid.len())
        .map(|i| !occ[i] && counts[i] >= cfg.psp_min_events)
        .collect();

    let [nx, ny, nz] = grid.dims;
    let mut visited = vec![false; grid.len()];
    let mut cavities = Vec::new();
    let mut queue = VecDeque::new();
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let start = grid.index(i, j, k);
                if !buried[start] || visited[start] {
                    continue;
                }
                visited[start] = true;
                queue.push_back([i, j, k]);
                let mut members = Vec::new();
                while let Some(ijk) = queue.pop_front() {
                    members.push(ijk);
                    for di in -1..=1 {
                        for dj in -1..=1 {
                            for dk in -1..=1 {
                                if di == 0 && dj == 0 && dk == 0 {
                                    continue;
                                }
                                if let Some(nb) = grid.offset(ijk, [di, dj, dk]) {
                                    if buried[nb] && !visited[nb] {
                                        visited[nb] = true;
                                        let nb_ijk = [
                                            (ijk[0] as i64 + di) as usize,
                                            (ijk[1] as i64 + dj) as usize,
                                            (ijk[2] as i64 + dk) as usize,
                                        ];
                                        queue.push_back(nb_ijk);
                                    }
                                }
                            }
                        }
                    }
                }
                if members.len() >= cfg.min_cluster_points {
                    members.sort_unstable();
                    let probes = members.iter().map(|m| grid.point(m[0], m[1], m[2])).collect();
                    cavities.push(Cavity::from_probes(probes)?);
                }
            }
        }
    }
    cavities.sort_by(|a, b| {
        b.size_score
            .cmp(&a.size_score)
            .then_with(|| a.center[0].total_cmp(&b.center[0]))
            .then_with(|| a.center[1].total_cmp(&b.center[1]))
            .then_with(|| a.center[2].total_cmp(&b.center[2]))
    });
    cavities.truncate(cfg.max_cavities);
    Ok(cavities)
}

/// Atom-level pocket: protein atoms within `holo_radius_d` of any ligand atom.
pub fn holo_pocket(structure: &ProteinStructure, ligand: &LigandConformer, cfg: &PocketConfig) -> Result<Pocket> {
    if ligand.atoms.is_empty() {
        return Err(Error::EmptyInput("ligand without atoms"));
    }
    let d2 = cfg.holo_radius_d * cfg.holo_radius_d;
    let members: Vec<usize> = structure
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| ligand.atoms.iter().any(|l| geom::dist2(a.position, l.position) <= d2))
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyPocket(format!(
            "no atom of {} within {} Å of ligand {}",
            structure.id, cfg.holo_radius_d, ligand.id
        )));
    }
    let pts: Vec<Vec3> = members.iter().map(|&i| structure.atoms[i].position).collect();
    let center = geom::mean(&pts).expect("non-empty");
    Ok(Pocket::from_atoms(structure, members, center, PocketSource::Holo))
}

/// Residue-level pocket: every residue with an atom within
/// `cavity_residue_radius` of a probe point, with all of its atoms.
pub fn cavity_residue_pocket(structure: &ProteinStructure, cavity: &Cavity, cfg: &PocketConfig) -> Result<Pocket> {
    if cavity.probe_points.is_empty() {
        return Err(Error::EmptyInput("cavity without probe points"));
    }
    let d = cfg.cavity_residue_radius;
    let d2 = d * d;
    let reach = cavity
        .probe_points
        .iter()
        .map(|p| geom::dist(*p, cavity.center))
        .fold(0.0, f64::max)
        + d;
    let reach2 = reach * reach;
    let mut residue_hit = vec![false; structure.residues.len()];
    for atom in &structure.atoms {
        let ri = atom.residue_index.expect("protein atom");
        if residue_hit[ri] || geom::dist2(atom.position, cavity.center) > reach2 {
            continue;
        }
        if cavity.probe_points.iter().any(|p| geom::dist2(*p, atom.position) <= d2) {
            residue_hit[ri] = true;
        }
    }
    let mut atom_indices: Vec<usize> = structure
        .residues
        .iter()
        .enumerate()
        .filter(|(ri, _)| residue_hit[*ri])
        .flat_map(|(_, r)| r.atom_indices.iter().copied())
        .collect();
    atom_indices.sort_unstable();
    Ok(Pocket::from_atoms(
        structure,
        atom_indices,
        cavity.center,
        PocketSource::Cavity,
    ))
}

fn downsample_seed(seed: u64, structure_id: &str, center: Vec3) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(structure_id.as_bytes());
    for c in center {
        // millimetre rounding keeps the key stable against float noise
        h.update(((c * 1000.0).round() as i64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Atoms within `enlarged_radius` of `center`, uniformly down-sampled to at
/// most `max_pocket_atoms` with a generator keyed to the structure and center.
pub fn crop_enlarged(structure: &ProteinStructure, center: Vec3, cfg: &PocketConfig) -> Result<Pocket> {
    let r2 = cfg.enlarged_radius * cfg.enlarged_radius;
    let within: Vec<usize> = structure
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| geom::dist2(a.position, center) <= r2)
        .map(|(i, _)| i)
        .collect();
    if within.is_empty() {
        return Err(Error::EmptyPocket(format!(
            "no atom of {} within {} Å of ({:.2}, {:.2}, {:.2})",
            structure.id, cfg.enlarged_radius, center[0], center[1], center[2]
        )));
    }
    let kept = if within.len() > cfg.max_pocket_atoms {
        let mut rng = ChaCha8Rng::seed_from_u64(downsample_seed(cfg.downsample_seed, &structure.id, center));
        let mut picks: Vec<usize> = sample(&mut rng, within.len(), cfg.max_pocket_atoms)
            .into_iter()
            .map(|i| within[i])
            .collect();
        picks.sort_unstable();
        picks
    } else {
        within
    };
    Ok(Pocket::from_atoms(structure, kept, center, PocketSource::Manual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moldata::{ActivityLabel, Atom, Residue};

    /// One residue per atom, seq numbers 1..
    pub(crate) fn structure_from_points(points: &[Vec3]) -> ProteinStructure {
        let atoms = points
            .iter()
            .enumerate()
            .map(|(i, p)| Atom {
                name: "C".into(),
                element: Element::C,
                position: *p,
                residue_index: Some(i),
            })
            .collect();
        let residues = (0..points.len())
            .map(|i| Residue {
                chain_id: 'A',
                seq_num: i as i32 + 1,
                name: "GLY".into(),
                atom_indices: vec![i],
            })
            .collect();
        ProteinStructure::new("s", atoms, residues).unwrap()
    }

    fn ligand_at(points: &[Vec3]) -> LigandConformer {
        LigandConformer::new(
            "l",
            points.iter().map(|p| Atom::new(Element::C, *p)).collect(),
            ActivityLabel::Unlabeled,
        )
        .unwrap()
    }

    #[test]
    fn solid_slab_has_no_cavities() {
        let mut pts = Vec::new();
        let mut x = 0.0;
        while x <= 20.0 {
            let mut y = 0.0;
            while y <= 20.0 {
                let mut z = 0.0;
                while z <= 20.0 {
                    pts.push([x, y, z]);
                    z += 2.0;
                }
                y += 2.0;
            }
            x += 2.0;
        }
        let s = structure_from_points(&pts);
        assert!(detect_cavities(&s, &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn holo_pocket_distance_rule() {
        let s = structure_from_points(&[[0.0, 0.0, 0.0], [0.0, 0.0, 7.0]]);
        let lig = ligand_at(&[[0.0, 0.0, 5.0]]);
        // atom 1 sits at distance 2 from the ligand, atom 0 at 5
        let p = holo_pocket(&s, &lig, &PocketConfig::default()).unwrap();
        assert_eq!(p.atom_indices, vec![0, 1]);

        let s = structure_from_points(&[[0.0, 0.0, 7.0]]);
        let lig = ligand_at(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            holo_pocket(&s, &lig, &PocketConfig::default()),
            Err(Error::EmptyPocket(_))
        ));
    }

    #[test]
    fn holo_pocket_on_a_line() {
        let pts: Vec<Vec3> = (0..10).map(|x| [x as f64, 0.0, 0.0]).collect();
        let s = structure_from_points(&pts);
        let p = holo_pocket(&s, &ligand_at(&[[0.0; 3]]), &PocketConfig::default()).unwrap();
        assert_eq!(p.atom_indices, (0..=6).collect::<Vec<_>>());
        assert_eq!(p.residue_keys.len(), 7);
        assert_eq!(p.source, PocketSource::Holo);
        assert!((p.center[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn residue_pocket_threshold() {
        let s = structure_from_points(&[[5.9, 0.0, 0.0], [0.0, 6.1, 0.0]]);
        let cav = Cavity::from_probes(vec![[0.0; 3]]).unwrap();
        let p = cavity_residue_pocket(&s, &cav, &PocketConfig::default()).unwrap();
        let seqs: Vec<i32> = p.residue_keys.iter().map(|k| k.seq_num).collect();
        assert_eq!(seqs, vec![1]);
        assert_eq!(p.center, cav.center);
    }

    #[test]
    fn residue_pocket_includes_whole_residue() {
        // residue 1 has two atoms, only the first near the probe
        let atoms = vec![
            Atom {
                name: "C".into(),
                element: Element::C,
                position: [1.0, 0.0, 0.0],
                residue_index: Some(0),
            },
            Atom {
                name: "C".into(),
                element: Element::C,
                position: [30.0, 0.0, 0.0],
                residue_index: Some(0),
            },
            Atom {
                name: "C".into(),
                element: Element::C,
                position: [0.0, 40.0, 0.0],
                residue_index: Some(1),
            },
        ];
        let residues = vec![
            Residue {
                chain_id: 'A',
                seq_num: 1,
                name: "GLY".into(),
                atom_indices: vec![0, 1],
            },
            Residue {
                chain_id: 'A',
                seq_num: 2,
                name: "GLY".into(),
                atom_indices: vec![2],
            },
        ];
        let s = ProteinStructure::new("s", atoms, residues).unwrap();
        let cav = Cavity::from_probes(vec![[0.0; 3]]).unwrap();
        let p = cavity_residue_pocket(&s, &cav, &PocketConfig::default()).unwrap();
        assert_eq!(p.atom_indices, vec![0, 1]);
    }

    #[test]
    fn residue_pocket_three_residue_chain() {
        let s = structure_from_points(&[[0.0, 0.0, 0.0], [20.0, 0.0, 0.0], [40.0, 0.0, 0.0]]);
        let cav = Cavity::from_probes(vec![[1.0, 0.0, 0.0], [39.0, 0.0, 0.0]]).unwrap();
        let p = cavity_residue_pocket(&s, &cav, &PocketConfig::default()).unwrap();
        // brute force over residue–probe distances
        let expect: BTreeSet<ResidueKey> = s
            .residues
            .iter()
            .filter(|r| {
                r.atom_indices.iter().any(|&a| {
                    cav.probe_points
                        .iter()
                        .any(|c| geom::dist(*c, s.atoms[a].position) <= 6.0)
                })
            })
            .map(|r| r.key())
            .collect();
        assert_eq!(p.residue_keys, expect);
        let seqs: Vec<i32> = p.residue_keys.iter().map(|k| k.seq_num).collect();
        assert_eq!(seqs, vec![1, 3]);
    }

    #[test]
    fn far_cavity_gives_invalid_pocket() {
        let s = structure_from_points(&[[0.0; 3]]);
        let cav = Cavity::from_probes(vec![[100.0, 0.0, 0.0]]).unwrap();
        let p = cavity_residue_pocket(&s, &cav, &PocketConfig::default()).unwrap();
        assert!(!p.is_valid());
    }

    fn ball_of_points(n: usize, radius: f64, seed: u64) -> Vec<Vec3> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let p = [
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
            ];
            if geom::norm(p) <= radius {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn crop_under_limit_keeps_everything() {
        let s = structure_from_points(&ball_of_points(100, 9.0, 3));
        let p = crop_enlarged(&s, [0.0; 3], &PocketConfig::default()).unwrap();
        assert_eq!(p.atom_indices, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn crop_over_limit_is_deterministic() {
        let s = structure_from_points(&ball_of_points(500, 9.0, 4));
        let cfg = PocketConfig::default();
        let a = crop_enlarged(&s, [0.0; 3], &cfg).unwrap();
        let b = crop_enlarged(&s, [0.0; 3], &cfg).unwrap();
        assert_eq!(a.atom_indices.len(), 256);
        assert_eq!(a, b);
        let other = PocketConfig {
            downsample_seed: 99,
            ..cfg
        };
        assert_ne!(
            crop_enlarged(&s, [0.0; 3], &other).unwrap().atom_indices,
            a.atom_indices
        );
    }

    #[test]
    fn crop_far_from_atoms_fails() {
        let s = structure_from_points(&ball_of_points(50, 5.0, 5));
        let err = crop_enlarged(&s, [25.0, 0.0, 0.0], &PocketConfig::default());
        assert!(matches!(err, Err(Error::EmptyPocket(_))));
    }

    #[test]
    fn crop_size_is_min_of_count_and_limit() {
        for (n, seed) in [(10usize, 1u64), (300, 2), (40, 3), (1000, 4)] {
            let s = structure_from_points(&ball_of_points(n, 12.0, seed));
            let cfg = PocketConfig {
                max_pocket_atoms: 64,
                ..PocketConfig::default()
            };
            let within = s
                .atoms
                .iter()
                .filter(|a| geom::norm(a.position) <= cfg.enlarged_radius)
                .count();
            if within == 0 {
                continue;
            }
            let p = crop_enlarged(&s, [0.0; 3], &cfg).unwrap();
            assert_eq!(p.atom_indices.len(), within.min(64));
        }
    }

    #[test]
    fn residue_pocket_monotone_in_radius() {
        let s = structure_from_points(&ball_of_points(300, 15.0, 8));
        let cav = Cavity::from_probes(vec![[0.0; 3], [1.0, 1.0, 0.0], [2.0, 0.0, 1.0]]).unwrap();
        let small = cavity_residue_pocket(&s, &cav, &PocketConfig::default()).unwrap();
        let big = cavity_residue_pocket(
            &s,
            &cav,
            &PocketConfig {
                cavity_residue_radius: 8.0,
                ..PocketConfig::default()
            },
        )
        .unwrap();
        assert!(small.residue_keys.is_subset(&big.residue_keys));
        assert!(small.residue_keys.len() < big.residue_keys.len());
    }

    #[test]
    fn detector_config_validation() {
        let bad = DetectorConfig {
            psp_min_events: 0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectorConfig {
            grid_spacing: 0.0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
