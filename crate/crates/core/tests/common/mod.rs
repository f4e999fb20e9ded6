// Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use cavscreen::encoder::{EncoderConfig, ModelParams, ParamSet, PreparedCloud};
use cavscreen::geom::Vec3;
use cavscreen::metrics::RankedEntry;
use cavscreen::moldata::{ActivityLabel, Atom, Element, LigandConformer, ProteinStructure, Residue, ResidueKey};
use cavscreen::objectives::{
    agg_loss_embedded, align_loss_and_grad, AggEmbedded, AlignBatch, AlignComplex, SampleOrigin, SupervisionTarget,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ELEMENTS: [Element; 6] = [Element::C, Element::N, Element::O, Element::S, Element::P, Element::H];

pub fn random_element(rng: &mut impl Rng) -> Element {
    ELEMENTS[rng.random_range(0..ELEMENTS.len())]
}

pub fn random_point(rng: &mut impl Rng, half: f64) -> Vec3 {
    [
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    ]
}

/// Structure with atoms scattered in a cube and grouped into residues of
/// random length.
pub fn random_structure(rng: &mut impl Rng, n_atoms: usize, half: f64) -> ProteinStructure {
    let mut atoms = Vec::with_capacity(n_atoms);
    let mut residues: Vec<Residue> = Vec::new();
    let mut i = 0;
    while i < n_atoms {
        let len = rng.random_range(1..=6).min(n_atoms - i);
        let ri = residues.len();
        residues.push(Residue {
            chain_id: if ri % 2 == 0 { 'A' } else { 'B' },
            seq_num: ri as i32 + 1,
            name: "ALA".into(),
            atom_indices: (i..i + len).collect(),
        });
        for _ in 0..len {
            let mut a = Atom::new(random_element(rng), random_point(rng, half));
            a.residue_index = Some(ri);
            atoms.push(a);
        }
        i += len;
    }
    ProteinStructure::new("rand", atoms, residues).expect("valid structure")
}

pub fn random_ligand(rng: &mut impl Rng, n_atoms: usize, center: Vec3, spread: f64) -> LigandConformer {
    let atoms = (0..n_atoms)
        .map(|_| {
            let p = random_point(rng, spread);
            Atom::new(
                random_element(rng),
                [center[0] + p[0], center[1] + p[1], center[2] + p[2]],
            )
        })
        .collect();
    LigandConformer::new("lig", atoms, ActivityLabel::Unlabeled).expect("non-empty")
}

/// Closed shell of lattice atoms around a spherical void, one atom per residue.
pub fn hollow_shell(rng: &mut impl Rng, center: Vec3, void_radius: f64, thickness: f64) -> ProteinStructure {
    let spacing = 2.4;
    let outer = void_radius + thickness;
    let steps = (outer / spacing).ceil() as i64;
    let mut atoms = Vec::new();
    let mut residues = Vec::new();
    for i in -steps..=steps {
        for j in -steps..=steps {
            for k in -steps..=steps {
                let off = [i as f64 * spacing, j as f64 * spacing, k as f64 * spacing];
                let r = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
                if r < void_radius || r > outer {
                    continue;
                }
                let jit = random_point(rng, 0.25);
                let p = [
                    center[0] + off[0] + jit[0],
                    center[1] + off[1] + jit[1],
                    center[2] + off[2] + jit[2],
                ];
                let ri = residues.len();
                residues.push(Residue {
                    chain_id: 'A',
                    seq_num: ri as i32 + 1,
                    name: "GLY".into(),
                    atom_indices: vec![atoms.len()],
                });
                let mut a = Atom::new(Element::C, p);
                a.residue_index = Some(ri);
                atoms.push(a);
            }
        }
    }
    ProteinStructure::new("shell", atoms, residues).expect("valid shell")
}

pub fn brute_holo_atoms(structure: &ProteinStructure, ligand: &LigandConformer, d: f64) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (i, a) in structure.atoms.iter().enumerate() {
        for l in &ligand.atoms {
            let dx = a.position[0] - l.position[0];
            let dy = a.position[1] - l.position[1];
            let dz = a.position[2] - l.position[2];
            if dx * dx + dy * dy + dz * dz <= d * d {
                out.insert(i);
                break;
            }
        }
    }
    out
}

pub fn brute_iou(a: &BTreeSet<ResidueKey>, b: &BTreeSet<ResidueKey>) -> f64 {
    let mut all: Vec<ResidueKey> = a.iter().chain(b.iter()).copied().collect();
    all.sort();
    all.dedup();
    if all.is_empty() {
        return 0.0;
    }
    let both = all.iter().filter(|k| a.contains(k) && b.contains(k)).count();
    both as f64 / all.len() as f64
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Library generator: scores drawn from a small integer range when `tied`,
/// so that equal scores are common.
pub fn random_library(rng: &mut impl Rng, n: usize, n_active: usize, tied: bool) -> Vec<RankedEntry> {
    let mut labels: Vec<bool> = (0..n).map(|i| i < n_active).collect();
    labels.shuffle(rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, is_active)| RankedEntry {
            ligand_id: format!("l{i}"),
            score: if tied {
                rng.random_range(0..8) as f64
            } else {
                rng.random_range(-1.0..1.0) + if is_active { 0.3 } else { 0.0 }
            },
            is_active,
        })
        .collect()
}

/// 1-based active ranks under the documented tie rule: descending score,
/// equal scores in input order.
pub fn oracle_ranks(entries: &[RankedEntry]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && entries[order[j - 1]].score < entries[order[j]].score {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    order
        .iter()
        .enumerate()
        .filter(|(_, &e)| entries[e].is_active)
        .map(|(r, _)| r + 1)
        .collect()
}

pub fn oracle_bedroc(entries: &[RankedEntry], alpha: f64) -> f64 {
    let ranks = oracle_ranks(entries);
    let n = entries.len() as f64;
    let ra = ranks.len() as f64 / n;
    let s = compensated_sum(ranks.iter().map(|&r| (-alpha * r as f64 / n).exp()));
    let z = ra * (1.0 - (-alpha).exp()) / (alpha / n).exp_m1();
    let num = ra * (alpha / 2.0).sinh();
    let den = (alpha / 2.0).cosh() - (alpha / 2.0 - alpha * ra).cosh();
    s / z * num / den + 1.0 / (1.0 - (alpha * (1.0 - ra)).exp())
}

pub fn oracle_ef(entries: &[RankedEntry], delta_pct: f64) -> f64 {
    let n = entries.len();
    let n_act = entries.iter().filter(|e| e.is_active).count();
    let mut k = 1;
    while (k as f64) < delta_pct * n as f64 / 100.0 {
        k += 1;
    }
    let k = k.min(n);
    let hits = oracle_ranks(entries).iter().filter(|&&r| r <= k).count();
    (hits as f64 / k as f64) / (n_act as f64 / n as f64)
}

pub fn oracle_auroc(entries: &[RankedEntry]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for a in entries.iter().filter(|e| e.is_active) {
        for d in entries.iter().filter(|e| !e.is_active) {
            pairs += 1.0;
            if a.score > d.score {
                wins += 1.0;
            } else if a.score == d.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn small_encoder_config() -> EncoderConfig {
    EncoderConfig {
        element_dim: 4,
        rbf_count: 6,
        rbf_max: 8.0,
        rbf_width: 1.5,
        hidden_dim: 8,
        embed_dim: 6,
    }
}

pub fn random_cloud(rng: &mut impl Rng, params: &ModelParams, n: usize) -> PreparedCloud {
    let atoms: Vec<Atom> = (0..n)
        .map(|_| Atom::new(random_element(rng), random_point(rng, 4.0)))
        .collect();
    params.pocket_encoder.prepare(&atoms, [0.0; 3]).expect("prepared")
}

/// Model at a generic point: encoders from `seed`, loss and adapter
/// parameters moved away from their structured initial values.
pub fn perturbed_model(cfg: &EncoderConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::init(cfg, 5.0, seed).expect("init");
    let mut r = rng(seed ^ 0xabcd);
    params.loss_params.t_log += r.random_range(-0.5..0.5);
    params.loss_params.b += r.random_range(-2.0..2.0);
    for v in params.adapter.projection.weight.data.iter_mut() {
        *v += r.random_range(-0.2..0.2);
    }
    for v in params.adapter.projection.bias.iter_mut() {
        *v += r.random_range(-0.1..0.1);
    }
    for v in params.adapter.key.data.iter_mut() {
        *v += r.random_range(-0.5..0.5);
    }
    params
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Flat `(tensor, element)` coordinates of a parameter set, restricted to
/// tensors whose name starts with one of `prefixes`.
pub fn coordinates(params: &impl ParamSet, prefixes: &[&str]) -> Vec<(usize, usize)> {
    params
        .tensors()
        .iter()
        .enumerate()
        .filter(|(_, t)| prefixes.iter().any(|p| t.name.starts_with(p)))
        .flat_map(|(ti, t)| (0..t.values.len()).map(move |e| (ti, e)))
        .collect()
}

pub fn value_at(params: &impl ParamSet, (t, e): (usize, usize)) -> f64 {
    params.tensors()[t].values[e]
}

pub fn nudge<P: ParamSet>(params: &mut P, (t, e): (usize, usize), delta: f64) {
    params.tensors_mut()[t][e] += delta;
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error of the alignment-loss gradient over `n_coords`
/// random coordinates at one random init.
pub fn align_gradient_error(seed: u64, n_coords: usize) -> f64 {
    let cfg = small_encoder_config();
    let params = perturbed_model(&cfg, seed);
    let mut r = rng(seed);
    let b = 4;
    let clouds: Vec<[PreparedCloud; 4]> = (0..b)
        .map(|_| {
            std::array::from_fn(|_| {
                let n = r.random_range(3..8);
                random_cloud(&mut r, &params, n)
            })
        })
        .collect();
    let complexes = clouds
        .iter()
        .enumerate()
        .map(|(i, c)| AlignComplex {
            ligand: &c[0],
            holo: &c[1],
            positive: (i % 3 != 2).then_some(&c[2]),
            negatives: vec![&c[3]],
        })
        .collect();
    let batch = AlignBatch { complexes };
    let (_, grads) = align_loss_and_grad(&batch, &params).expect("loss");
    let coords = coordinates(&params, &["pocket_encoder", "ligand_encoder", "loss_params"]);
    let mut worst: f64 = 0.0;
    for _ in 0..n_coords {
        let c = coords[r.random_range(0..coords.len())];
        let mut plus = params.clone();
        nudge(&mut plus, c, FD_STEP);
        let mut minus = params.clone();
        nudge(&mut minus, c, -FD_STEP);
        let lp = align_loss_and_grad(&batch, &plus).expect("loss").0;
        let lm = align_loss_and_grad(&batch, &minus).expect("loss").0;
        worst = worst.max(rel_err(value_at(&grads, c), (lp - lm) / (2.0 * FD_STEP)));
    }
    worst
}

/// Worst relative error of the aggregation-loss gradient with respect to
/// the adapter, frozen embeddings, one random init.
pub fn agg_gradient_error(seed: u64, n_coords: usize) -> f64 {
    let cfg = small_encoder_config();
    let params = perturbed_model(&cfg, seed);
    let mut r = rng(seed.wrapping_add(77));
    let batch: Vec<AggEmbedded> = (0..5)
        .map(|i| {
            let n_cav = r.random_range(1..5);
            let ligand = params
                .ligand_encoder
                .forward(&random_cloud(&mut r, &params, 5))
                .expect("forward")
                .embedding
                .0;
            let cavities: Vec<Vec<f64>> = (0..n_cav)
                .map(|_| {
                    params
                        .cavity_encoder()
                        .forward(&random_cloud(&mut r, &params, 6))
                        .expect("forward")
                        .embedding
                        .0
                })
                .collect();
            let (supervision, origin) = if i % 2 == 0 {
                (
                    SupervisionTarget::one_hot(n_cav, r.random_range(0..n_cav)).expect("target"),
                    SampleOrigin::Complex,
                )
            } else {
                let raw: Vec<f64> = (0..n_cav).map(|_| r.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                (
                    SupervisionTarget::soft(raw.iter().map(|v| v / s).collect()).expect("target"),
                    SampleOrigin::Activity,
                )
            };
            AggEmbedded {
                ligand,
                cavities,
                supervision,
                origin,
            }
        })
        .collect();
    let lambda = 0.7;
    let lp = params.loss_params;
    let (_, grads) = agg_loss_embedded(&batch, &params.adapter, &lp, lambda).expect("loss");
    let coords = coordinates(&params.adapter, &[""]);
    let mut worst: f64 = 0.0;
    for _ in 0..n_coords {
        let c = coords[r.random_range(0..coords.len())];
        let mut plus = params.adapter.clone();
        nudge(&mut plus, c, FD_STEP);
        let mut minus = params.adapter.clone();
        nudge(&mut minus, c, -FD_STEP);
        let lp_ = agg_loss_embedded(&batch, &plus, &lp, lambda).expect("loss").0;
        let lm_ = agg_loss_embedded(&batch, &minus, &lp, lambda).expect("loss").0;
        worst = worst.max(rel_err(value_at(&grads, c), (lp_ - lm_) / (2.0 * FD_STEP)));
    }
    worst
}

/// Uniform random rotation from a normalised Gaussian quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    use rand_distr::StandardNormal;
    let q: [f64; 4] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    cavscreen::geom::quaternion_to_matrix(q)
}

pub fn rigid(r: &[[f64; 3]; 3], t: Vec3, p: Vec3) -> Vec3 {
    let q = cavscreen::geom::rotate(r, p);
    [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
