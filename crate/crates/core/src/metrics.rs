//! Screening metrics, blind multi-pocket scoring and pocket identification.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cavity::Pocket;
use crate::encoder::{dot, encode, encode_ligand, Embedding, ModelParams};
use crate::error::{Error, Result};
use crate::moldata::{LigandConformer, ProteinStructure, ScreeningTarget};
use crate::objectives::{attention, project_ligand};
use crate::pocketlabel::dca;

/// Recorded in every report.
pub const TIE_POLICY: &str = "descending score; equal scores keep library input order";

pub const DEFAULT_BEDROC_ALPHA: f64 = 80.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub ligand_id: String,
    pub score: f64,
    pub is_active: bool,
}

/// A scored library sorted by descending score (stable for ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLibrary {
    entries: Vec<RankedEntry>,
}

impl RankedLibrary {
    pub fn new(mut entries: Vec<RankedEntry>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite score", e.ligand_id)));
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(RankedLibrary { entries })
    }

    pub fn from_scores(ligands: &[LigandConformer], scores: &[f64]) -> Result<Self> {
        if ligands.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ligands, {} scores",
                ligands.len(),
                scores.len()
            )));
        }
        RankedLibrary::new(
            ligands
                .iter()
                .zip(scores)
                .map(|(l, s)| RankedEntry {
                    ligand_id: l.id.clone(),
                    score: *s,
                    is_active: l.is_active(),
                })
                .collect(),
        )
    }

    /// Entries in rank order (rank 1 first).
    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.entries.iter().filter(|e| e.is_active).count()
    }

    /// 1-based ranks of the actives.
    pub fn active_ranks(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_active)
            .map(|(i, _)| i + 1)
            .collect()
    }

    fn require_both_classes(&self, metric: &str) -> Result<(usize, usize)> {
        let n = self.len();
        let na = self.n_active();
        if na == 0 || na == n {
            return Err(Error::UndefinedMetric(format!(
                "{metric} needs actives and inactives (N={n}, actives={na})"
            )));
        }
        Ok((n, na))
    }
}

pub fn bedroc(ranked: &RankedLibrary, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::UndefinedMetric(format!("BEDROC alpha must be > 0, got {alpha}")));
    }
    let (n, na) = ranked.require_both_classes("BEDROC")?;
    let n = n as f64;
    let ra = na as f64 / n;
    let sum: f64 = ranked
        .active_ranks()
        .iter()
        .map(|&r| (-alpha * r as f64 / n).exp())
        .sum();
    let z = ra * (1.0 - (-alpha).exp()) / ((alpha / n).exp() - 1.0);
    let half = alpha / 2.0;
    let factor = ra * half.sinh() / (half.cosh() - (half - alpha * ra).cosh());
    let offset = 1.0 / (1.0 - (alpha * (1.0 - ra)).exp());
    Ok(sum / z * factor + offset)
}

/// `EF_δ = n_δ · N / (k · N_act)` with `k = ⌈δN/100⌉`.
pub fn enrichment_factor(ranked: &RankedLibrary, delta_pct: f64) -> Result<f64> {
    let n = ranked.len();
    let na = ranked.n_active();
    if na == 0 {
        return Err(Error::UndefinedMetric("enrichment factor without actives".into()));
    }
    if !(delta_pct > 0.0 && delta_pct <= 100.0) {
        return Err(Error::UndefinedMetric(format!(
            "EF fraction must lie in (0, 100], got {delta_pct}"
        )));
    }
    let k = top_k(n, delta_pct);
    let hits = ranked.entries[..k].iter().filter(|e| e.is_active).count();
    Ok((hits * n) as f64 / (k * na) as f64)
}

pub(crate) fn top_k(n: usize, delta_pct: f64) -> usize {
    ((delta_pct * n as f64 / 100.0).ceil() as usize).clamp(1, n)
}

/// Rank-sum AUROC with midranks for tied scores.
pub fn auroc(ranked: &RankedLibrary) -> Result<f64> {
    let (n, na) = ranked.require_both_classes("AUROC")?;
    let nd = n - na;
    // ascending order; ties get the mean of their positions
    let asc: Vec<&RankedEntry> = ranked.entries.iter().rev().collect();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && asc[j].score == asc[i].score {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * asc[i..j].iter().filter(|e| e.is_active).count() as f64;
        i = j;
    }
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    Ok(u / (na * nd) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub auroc: f64,
    pub bedroc: f64,
    pub ef1: f64,
}

impl TargetMetrics {
    pub fn of(ranked: &RankedLibrary) -> Result<Self> {
        Ok(TargetMetrics {
            auroc: auroc(ranked)?,
            bedroc: bedroc(ranked, DEFAULT_BEDROC_ALPHA)?,
            ef1: enrichment_factor(ranked, 1.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_target: BTreeMap<String, TargetMetrics>,
    /// Unweighted means over targets.
    pub averages: TargetMetrics,
    pub tie_policy: String,
}

impl MetricsReport {
    pub fn from_per_target(per_target: BTreeMap<String, TargetMetrics>) -> Result<Self> {
        if per_target.is_empty() {
            return Err(Error::EmptyInput("metrics report without targets"));
        }
        let n = per_target.len() as f64;
        let mean = |f: fn(&TargetMetrics) -> f64| per_target.values().map(f).sum::<f64>() / n;
        let averages = TargetMetrics {
            auroc: mean(|m| m.auroc),
            bedroc: mean(|m| m.bedroc),
            ef1: mean(|m| m.ef1),
        };
        Ok(MetricsReport {
            per_target,
            averages,
            tie_policy: TIE_POLICY.into(),
        })
    }

    pub fn from_libraries<'a>(libraries: impl IntoIterator<Item = (&'a str, &'a RankedLibrary)>) -> Result<Self> {
        let per_target = libraries
            .into_iter()
            .map(|(id, lib)| Ok((id.to_string(), TargetMetrics::of(lib)?)))
            .collect::<Result<_>>()?;
        MetricsReport::from_per_target(per_target)
    }

    /// `target_id,auroc,bedroc,ef1` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_id,auroc,bedroc,ef1\n");
        for (id, m) in &self.per_target {
            out.push_str(&format!("{id},{},{},{}\n", m.auroc, m.bedroc, m.ef1));
        }
        out
    }
}

/// How cavities are combined when the binding site is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlindMode {
    MaxPool,
    Adapter,
}

impl std::str::FromStr for BlindMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_pool" => Ok(BlindMode::MaxPool),
            "adapter" => Ok(BlindMode::Adapter),
            other => Err(Error::Config(format!("unknown blind mode {other:?}"))),
        }
    }
}

/// Embeds `pocket` with the shared pocket encoder about its center.
pub fn pocket_embedding(structure: &ProteinStructure, pocket: &Pocket, params: &ModelParams) -> Result<Embedding> {
    if !pocket.is_valid() {
        return Err(Error::EmptyPocket(format!("{}: pocket has no atoms", structure.id)));
    }
    encode(params.cavity_encoder(), &pocket.atoms(structure), pocket.center)
}

pub fn library_embeddings(library: &[LigandConformer], params: &ModelParams) -> Result<Vec<Embedding>> {
    library
        .par_iter()
        .map(|l| encode_ligand(&params.ligand_encoder, &l.atoms))
        .collect()
}

/// Raw scores `t·(e_p · e_l) + b`.
pub fn annotated_scores(ligands: &[Embedding], pocket: &Embedding, params: &ModelParams) -> Vec<f64> {
    ligands
        .iter()
        .map(|l| params.loss_params.logit(l.dot(pocket)))
        .collect()
}

pub fn blind_scores(
    ligands: &[Embedding],
    cavities: &[Embedding],
    params: &ModelParams,
    mode: BlindMode,
) -> Result<Vec<f64>> {
    if cavities.is_empty() {
        return Err(Error::EmptyInput("blind screening without cavities"));
    }
    let lp = &params.loss_params;
    match mode {
        BlindMode::MaxPool => Ok(ligands
            .iter()
            .map(|l| {
                cavities
                    .iter()
                    .map(|c| lp.logit(l.dot(c)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()),
        BlindMode::Adapter => {
            let cavs: Vec<Vec<f64>> = cavities.iter().map(|c| c.0.clone()).collect();
            ligands
                .par_iter()
                .map(|l| {
                    let (_, agg) = attention(&l.0, &cavs, &params.adapter)?;
                    Ok(lp.logit(dot(&agg, &project_ligand(&l.0, &params.adapter))))
                })
                .collect()
        }
    }
}

fn require_library(target: &ScreeningTarget) -> Result<()> {
    if target.library.is_empty() {
        return Err(Error::EmptyInput("screening an empty library"));
    }
    Ok(())
}

/// Ranks the library against one known pocket.
pub fn screen_annotated(target: &ScreeningTarget, pocket: &Pocket, params: &ModelParams) -> Result<RankedLibrary> {
    require_library(target)?;
    let p = pocket_embedding(&target.structure, pocket, params)?;
    let ligs = library_embeddings(&target.library, params)?;
    RankedLibrary::from_scores(&target.library, &annotated_scores(&ligs, &p, params))
}

/// Ranks the library when any of `cavities` may be the binding site.
pub fn screen_blind(
    target: &ScreeningTarget,
    cavities: &[Pocket],
    params: &ModelParams,
    mode: BlindMode,
) -> Result<RankedLibrary> {
    require_library(target)?;
    if cavities.is_empty() {
        return Err(Error::EmptyInput("blind screening without cavities"));
    }
    let cavs: Vec<Embedding> = cavities
        .iter()
        .map(|c| pocket_embedding(&target.structure, c, params))
        .collect::<Result<_>>()?;
    let ligs = library_embeddings(&target.library, params)?;
    RankedLibrary::from_scores(&target.library, &blind_scores(&ligs, &cavs, params, mode)?)
}

/// Cavity ordering used for pocket identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PocketRanking {
    /// Raw score `t·dot + b` against the ligand.
    Score,
    /// Adapter attention weight for the ligand query.
    Attention,
    /// Increasing DCA: the best any ranking can do.
    Ideal,
}

impl PocketRanking {
    pub fn label(self) -> &'static str {
        match self {
            PocketRanking::Score => "score",
            PocketRanking::Attention => "attention",
            PocketRanking::Ideal => "ideal_oracle",
        }
    }
}

pub const DCA_THRESHOLDS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Top-1 / top-n hit counts per DCA threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketIdTable {
    pub thresholds: Vec<f64>,
    pub cases: usize,
    pub top1_hits: Vec<usize>,
    pub topn_hits: Vec<usize>,
}

impl PocketIdTable {
    pub fn empty(thresholds: &[f64]) -> Self {
        PocketIdTable {
            thresholds: thresholds.to_vec(),
            cases: 0,
            top1_hits: vec![0; thresholds.len()],
            topn_hits: vec![0; thresholds.len()],
        }
    }

    pub fn merge(&mut self, other: &PocketIdTable) -> Result<()> {
        if self.thresholds != other.thresholds {
            return Err(Error::ShapeMismatch("pocket-id tables use different thresholds".into()));
        }
        self.cases += other.cases;
        for k in 0..self.thresholds.len() {
            self.top1_hits[k] += other.top1_hits[k];
            self.topn_hits[k] += other.topn_hits[k];
        }
        Ok(())
    }

    /// Adds one case given cavity DCAs in rank order.
    pub fn record(&mut self, ranked_dcas: &[f64], n: usize) {
        let best_n = ranked_dcas.iter().take(n).copied().fold(f64::INFINITY, f64::min);
        let top1 = ranked_dcas.first().copied().unwrap_or(f64::INFINITY);
        for (k, &t) in self.thresholds.iter().enumerate() {
            if top1 <= t {
                self.top1_hits[k] += 1;
            }
            if best_n <= t {
                self.topn_hits[k] += 1;
            }
        }
    }

    fn rates(&self, hits: &[usize]) -> Vec<f64> {
        hits.iter()
            .map(|&h| {
                if self.cases == 0 {
                    0.0
                } else {
                    h as f64 / self.cases as f64
                }
            })
            .collect()
    }

    pub fn top1_rates(&self) -> Vec<f64> {
        self.rates(&self.top1_hits)
    }

    pub fn topn_rates(&self) -> Vec<f64> {
        self.rates(&self.topn_hits)
    }
}

/// CSV with one row per method: top-1 rates per threshold, then top-n rates.
pub fn pocket_id_csv(rows: &[(String, PocketIdTable)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::from("method\n");
    };
    let mut out = String::from("method");
    for prefix in ["top1", "topn"] {
        for t in &first.thresholds {
            out.push_str(&format!(",{prefix}_dca_{t}A"));
        }
    }
    out.push_str(",cases\n");
    for (name, table) in rows {
        out.push_str(name);
        for r in table.top1_rates().into_iter().chain(table.topn_rates()) {
            out.push_str(&format!(",{r:.4}"));
        }
        out.push_str(&format!(",{}\n", table.cases));
    }
    out
}

/// Cavity order for one ligand. Ties keep cavity input order.
fn cavity_order(
    ligand: &LigandConformer,
    cavities: &[Pocket],
    cavity_embs: &[Embedding],
    params: &ModelParams,
    ranking: PocketRanking,
) -> Result<Vec<usize>> {
    let keys: Vec<f64> = match ranking {
        PocketRanking::Ideal => cavities
            .iter()
            .map(|c| dca(c.center, ligand).map(|d| -d))
            .collect::<Result<_>>()?,
        PocketRanking::Score => {
            let e = encode_ligand(&params.ligand_encoder, &ligand.atoms)?;
            cavity_embs.iter().map(|c| params.loss_params.logit(e.dot(c))).collect()
        }
        PocketRanking::Attention => {
            let e = encode_ligand(&params.ligand_encoder, &ligand.atoms)?;
            let cavs: Vec<Vec<f64>> = cavity_embs.iter().map(|c| c.0.clone()).collect();
            attention(&e.0, &cavs, &params.adapter)?.0
        }
    };
    let mut order: Vec<usize> = (0..cavities.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    Ok(order)
}

/// Pocket identification on one structure: each holo ligand ranks the
/// cavities; a hit at threshold `x` means DCA ≤ `x`. Top-n uses
/// `n = |holo_ligands|`. Without cavities every case is a miss.
pub fn pocket_id(
    structure: &ProteinStructure,
    cavities: &[Pocket],
    holo_ligands: &[LigandConformer],
    params: &ModelParams,
    thresholds: &[f64],
    ranking: PocketRanking,
) -> Result<PocketIdTable> {
    if holo_ligands.is_empty() {
        return Err(Error::EmptyInput("pocket identification without ligands"));
    }
    let mut table = PocketIdTable::empty(thresholds);
    table.cases = holo_ligands.len();
    if cavities.is_empty() {
        return Ok(table);
    }
    let cavity_embs: Vec<Embedding> = match ranking {
        PocketRanking::Ideal => Vec::new(),
        _ => cavities
            .iter()
            .map(|c| pocket_embedding(structure, c, params))
            .collect::<Result<_>>()?,
    };
    let n = holo_ligands.len();
    for lig in holo_ligands {
        let order = cavity_order(lig, cavities, &cavity_embs, params, ranking)?;
        let dcas: Vec<f64> = order
            .iter()
            .map(|&i| dca(cavities[i].center, lig))
            .collect::<Result<_>>()?;
        table.record(&dcas, n);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity::PocketSource;
    use crate::encoder::EncoderConfig;
    use crate::moldata::{ActivityLabel, Atom, Element};
    use std::collections::BTreeSet;

    fn lib(scores: &[f64], actives: &[bool]) -> RankedLibrary {
        RankedLibrary::new(
            scores
                .iter()
                .zip(actives)
                .enumerate()
                .map(|(i, (s, a))| RankedEntry {
                    ligand_id: format!("l{i}"),
                    score: *s,
                    is_active: *a,
                })
                .collect(),
        )
        .unwrap()
    }

    fn single_active(n: usize, rank: usize) -> RankedLibrary {
        let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let actives: Vec<bool> = (0..n).map(|i| i + 1 == rank).collect();
        lib(&scores, &actives)
    }

    #[test]
    fn bedroc_boundaries() {
        assert!((bedroc(&single_active(100, 1), 80.5).unwrap() - 1.0).abs() < 1e-3);
        assert!(bedroc(&single_active(100, 100), 80.5).unwrap() <= 1e-3);
        assert!(matches!(
            bedroc(&lib(&[1.0, 2.0], &[false, false]), 80.5),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn enrichment_examples() {
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let actives: Vec<bool> = (0..n)
            .map(|i| (i < 10 && i % 2 == 0) || (500..505).contains(&i))
            .collect();
        assert_eq!(enrichment_factor(&lib(&scores, &actives), 1.0).unwrap(), 50.0);
        let last: Vec<bool> = (0..n).map(|i| i >= n - 10).collect();
        assert_eq!(enrichment_factor(&lib(&scores, &last), 1.0).unwrap(), 0.0);
        assert_eq!(top_k(150, 1.0), 2);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(
            auroc(&lib(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false])).unwrap(),
            1.0
        );
        assert_eq!(auroc(&lib(&[1.0, 1.0], &[true, false])).unwrap(), 0.5);
    }

    #[test]
    fn stable_ties() {
        let l = lib(&[1.0, 1.0, 2.0], &[false, true, false]);
        let ids: Vec<&str> = l.entries().iter().map(|e| e.ligand_id.as_str()).collect();
        assert_eq!(ids, vec!["l2", "l0", "l1"]);
    }

    #[test]
    fn report_averages() {
        let mut per = BTreeMap::new();
        per.insert(
            "a".into(),
            TargetMetrics {
                auroc: 0.5,
                bedroc: 0.2,
                ef1: 3.0,
            },
        );
        per.insert(
            "b".into(),
            TargetMetrics {
                auroc: 1.0,
                bedroc: 0.4,
                ef1: 5.0,
            },
        );
        let r = MetricsReport::from_per_target(per).unwrap();
        assert_eq!(
            r.averages,
            TargetMetrics {
                auroc: 0.75,
                bedroc: 0.30000000000000004,
                ef1: 4.0
            }
        );
        assert!(r.to_csv().starts_with("target_id,auroc,bedroc,ef1\na,0.5,"));
    }

    fn structure() -> ProteinStructure {
        let atoms: Vec<Atom> = (0..6)
            .map(|i| Atom {
                residue_index: Some(i),
                ..Atom::new(Element::C, [i as f64, 0.0, 0.0])
            })
            .collect();
        let residues = (0..6)
            .map(|i| crate::moldata::Residue {
                chain_id: 'A',
                seq_num: i as i32 + 1,
                name: "GLY".into(),
                atom_indices: vec![i],
            })
            .collect();
        ProteinStructure::new("s", atoms, residues).unwrap()
    }

    fn pocket_at(center: [f64; 3], atoms: Vec<usize>) -> Pocket {
        Pocket {
            residue_keys: BTreeSet::new(),
            atom_indices: atoms,
            center,
            source: PocketSource::Manual,
        }
    }

    #[test]
    fn pocket_id_hand_case() {
        let s = structure();
        let lig = LigandConformer::new(
            "h",
            vec![Atom::new(Element::C, [0.0, 0.0, 0.0])],
            ActivityLabel::Unlabeled,
        )
        .unwrap();
        let params = ModelParams::init(&EncoderConfig::default(), 5.0, 1).unwrap();
        let cavs = vec![
            pocket_at([2.5, 0.0, 0.0], vec![1, 2]),
            pocket_at([0.5, 0.0, 0.0], vec![0]),
        ];
        // force the 2.5 Å cavity first
        let order = cavity_order(&lig, &cavs, &[], &params, PocketRanking::Ideal).unwrap();
        assert_eq!(order, vec![1, 0]);
        let mut t = PocketIdTable::empty(&[1.0, 2.0]);
        t.cases = 1;
        t.record(&[2.5, 0.5], 2);
        assert_eq!((t.top1_hits.clone(), t.topn_hits.clone()), (vec![0, 0], vec![1, 1]));
        let two = vec![
            lig.clone(),
            LigandConformer::new("g", lig.atoms.clone(), ActivityLabel::Unlabeled).unwrap(),
        ];
        let ideal = pocket_id(&s, &cavs, &two, &params, &[1.0, 2.0], PocketRanking::Ideal).unwrap();
        assert_eq!(ideal.top1_hits, vec![2, 2]);
        let none = pocket_id(&s, &[], &two, &params, &[1.0, 2.0], PocketRanking::Score).unwrap();
        assert_eq!((none.cases, none.top1_hits.clone()), (2, vec![0, 0]));
    }
}
