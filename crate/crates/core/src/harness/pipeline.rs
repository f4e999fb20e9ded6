//! Pipeline stages over an output directory.
//!
//! ```text
//! OUT/dataset/manifest.json              planted ground truth
//! OUT/dataset/structures/<id>.pdb
//! OUT/dataset/ligands/<id>_holo.jsonl    <id>_library.jsonl | <id>_activity.jsonl
//! OUT/cavities/<id>.json                 detected cavities with probe points
//! OUT/labels/<id>.json                   IoU, coverage and label per cavity
//! OUT/checkpoints/align.json             + align_trace.json
//! OUT/checkpoints/adapter.json           + adapter_trace.json
//! OUT/scores/<run>.json                  ranked libraries per target
//! OUT/pocket_id.json, pocket_id.csv, binding_site_selection.json
//! OUT/metrics/<run>.json, <run>.csv
//! OUT/report.json
//! ```
//!
//! Every stage reads its inputs from disk, so each one is a pure function
//! of the files before it, the configuration and the seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Mode, RunConfig, Setting};
use super::synth::{gen_synthetic, PlantedSite, SiteRole, SyntheticWorldSpec};
use crate::cavity::{
    cavity_residue_pocket, crop_enlarged, detect_cavities, holo_pocket, Cavity, Pocket, PocketConfig, PocketSource,
};
use crate::encoder::{Checkpoint, Embedding, EncoderParams, ModelParams, PreparedCloud};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::metrics::{
    annotated_scores, blind_scores, library_embeddings, pocket_embedding, pocket_id, pocket_id_csv, BlindMode,
    MetricsReport, PocketIdTable, PocketRanking, RankedEntry, RankedLibrary, DCA_THRESHOLDS, TIE_POLICY,
};
use crate::moldata::{
    centroid, parse_ligands, parse_protein, write_ligands, write_protein, ActivityLabel, LigandConformer,
    ProteinStructure,
};
use crate::objectives::{
    attention, complex_supervision, soft_labels_from_frozen_model, train_adapter, train_align, AdapterTrace,
    AggEmbedded, AlignComplexData, AlignTrace, SampleOrigin,
};
use crate::pocketlabel::{label_cavities, CavityLabel, LabeledCavity};

/// Detected cavity counts as recovering a planted void within this distance.
pub const RECOVERY_DISTANCE: f64 = 2.0;
/// A selected cavity hits the planted binding site within this distance.
pub const SELECTION_DISTANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: SiteRole,
    pub code: String,
    pub void_centers: Vec<Vec3>,
    pub void_radii: Vec<f64>,
    pub binding_index: usize,
    pub binding_center: Vec3,
    pub holo_ligand_id: String,
    pub ligand_labels: BTreeMap<String, ActivityLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticWorldSpec,
    pub sites: Vec<ManifestEntry>,
}

/// A dataset structure as read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSite {
    pub entry: ManifestEntry,
    pub structure: ProteinStructure,
    pub holo_ligand: LigandConformer,
    pub ligands: Vec<LigandConformer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityLabelRecord {
    pub rank: usize,
    pub center: Vec3,
    pub size_score: usize,
    pub iou: f64,
    pub coverage: f64,
    pub label: CavityLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub holo_center: Vec3,
    pub holo_atoms: usize,
    pub holo_residues: usize,
    pub cavities: Vec<CavityLabelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub cases: usize,
    pub hits: usize,
    pub rate: f64,
    /// Per target: rank of the selected cavity, or `None` without cavities.
    pub selected: BTreeMap<String, Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub structures: usize,
    pub cavities: usize,
    pub planted_voids: usize,
    pub recovered_voids: usize,
    /// Structures where at most one planted void went undetected.
    pub structures_nearly_complete: usize,
    pub binding_voids_recovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub positive: usize,
    pub negative: usize,
    pub ignore: usize,
    pub structures_without_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub manifest_sha256: String,
    pub checkpoint_hashes: BTreeMap<String, BTreeMap<String, String>>,
    pub tie_policy: String,
    pub metrics: BTreeMap<String, MetricsReport>,
    pub pocket_id: BTreeMap<String, PocketIdTable>,
    pub binding_site_selection: BTreeMap<String, SelectionSummary>,
    pub detection: DetectionSummary,
    pub labels: LabelSummary,
    pub training: BTreeMap<String, TrainingSummary>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Paths under one output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("dataset/manifest.json")
    }

    fn structure(&self, id: &str) -> PathBuf {
        self.root.join(format!("dataset/structures/{id}.pdb"))
    }

    fn holo(&self, id: &str) -> PathBuf {
        self.root.join(format!("dataset/ligands/{id}_holo.jsonl"))
    }

    fn ligands(&self, id: &str, role: SiteRole) -> PathBuf {
        let kind = match role {
            SiteRole::Screening => "library",
            SiteRole::Training => "activity",
        };
        self.root.join(format!("dataset/ligands/{id}_{kind}.jsonl"))
    }

    fn cavities(&self, id: &str) -> PathBuf {
        self.root.join(format!("cavities/{id}.json"))
    }

    fn labels(&self, id: &str) -> PathBuf {
        self.root.join(format!("labels/{id}.json"))
    }

    pub fn align_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/align.json")
    }

    pub fn adapter_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints/adapter.json")
    }

    fn align_trace(&self) -> PathBuf {
        self.root.join("checkpoints/align_trace.json")
    }

    fn adapter_trace(&self) -> PathBuf {
        self.root.join("checkpoints/adapter_trace.json")
    }

    fn scores(&self, run: &str) -> PathBuf {
        self.root.join(format!("scores/{run}.json"))
    }

    fn metrics(&self, run: &str, ext: &str) -> PathBuf {
        self.root.join(format!("metrics/{run}.{ext}"))
    }

    fn pocket_id_json(&self) -> PathBuf {
        self.root.join("pocket_id.json")
    }

    fn pocket_id_csv(&self) -> PathBuf {
        self.root.join("pocket_id.csv")
    }

    fn selection(&self) -> PathBuf {
        self.root.join("binding_site_selection.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string(value)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn manifest_entry(site: &PlantedSite) -> ManifestEntry {
    ManifestEntry {
        id: site.id.clone(),
        role: site.role,
        code: site.code.clone(),
        void_centers: site.void_centers.clone(),
        void_radii: site.void_radii.clone(),
        binding_index: site.binding_index,
        binding_center: site.binding_center(),
        holo_ligand_id: site.holo_ligand.id.clone(),
        ligand_labels: site.ligands.iter().map(|l| (l.id.clone(), l.activity_label)).collect(),
    }
}

/// `gen-synth`: writes the planted world.
pub fn stage_gen_synth(cfg: &RunConfig, ws: &Workspace) -> Result<Manifest> {
    let world = gen_synthetic(&cfg.world_spec())?;
    let sites: Vec<&PlantedSite> = world.sites().collect();
    sites.par_iter().try_for_each(|site| -> Result<()> {
        write_text(&ws.structure(&site.id), &write_protein(&site.structure))?;
        write_text(
            &ws.holo(&site.id),
            &write_ligands(std::slice::from_ref(&site.holo_ligand)),
        )?;
        write_text(&ws.ligands(&site.id, site.role), &write_ligands(&site.ligands))
    })?;
    let manifest = Manifest {
        spec: world.spec.clone(),
        sites: sites.iter().map(|s| manifest_entry(s)).collect(),
    };
    write_text(&ws.manifest(), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn load_manifest(ws: &Workspace) -> Result<(Manifest, String)> {
    let path = ws.manifest();
    if !path.exists() {
        return Err(Error::Data(format!("no dataset manifest at {}", path.display())));
    }
    let text = read_text(&path)?;
    Ok((serde_json::from_str(&text)?, sha256_hex(text.as_bytes())))
}

fn load_sites(ws: &Workspace, manifest: &Manifest) -> Result<Vec<LoadedSite>> {
    manifest
        .sites
        .par_iter()
        .map(|entry| {
            let structure = parse_protein(&entry.id, &read_text(&ws.structure(&entry.id))?)?;
            let holo_ligand = parse_ligands(&read_text(&ws.holo(&entry.id))?)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Data(format!("{}: empty holo ligand file", entry.id)))?;
            let ligands = parse_ligands(&read_text(&ws.ligands(&entry.id, entry.role))?)?;
            Ok(LoadedSite {
                entry: entry.clone(),
                structure,
                holo_ligand,
                ligands,
            })
        })
        .collect()
}

/// `detect`: cavities for every structure.
pub fn stage_detect(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let (manifest, _) = load_manifest(ws)?;
    let sites = load_sites(ws, &manifest)?;
    let det = cfg.detector_config();
    sites.par_iter().try_for_each(|s| -> Result<()> {
        let cavities = detect_cavities(&s.structure, &det)?;
        write_json(&ws.cavities(&s.entry.id), &cavities)
    })
}

fn load_cavities(ws: &Workspace, id: &str) -> Result<Vec<Cavity>> {
    let path = ws.cavities(id);
    if !path.exists() {
        return Err(Error::Data(format!(
            "{id}: no cavities at {} (run detect first)",
            path.display()
        )));
    }
    read_json(&path)
}

fn label_site(site: &LoadedSite, cavities: &[Cavity], cfg: &RunConfig) -> Result<LabelFile> {
    let pcfg = cfg.pocket_config();
    let holo = holo_pocket(&site.structure, &site.holo_ligand, &pcfg)?;
    let pairs = cavities
        .iter()
        .map(|c| Ok((c.clone(), cavity_residue_pocket(&site.structure, c, &pcfg)?)))
        .collect::<Result<Vec<_>>>()?;
    let labeled = label_cavities(&holo, pairs, &cfg.label_config())?;
    Ok(LabelFile {
        holo_center: holo.center,
        holo_atoms: holo.atom_indices.len(),
        holo_residues: holo.residue_keys.len(),
        cavities: labeled
            .iter()
            .enumerate()
            .map(|(rank, l)| CavityLabelRecord {
                rank,
                center: l.cavity.center,
                size_score: l.cavity.size_score,
                iou: l.iou,
                coverage: l.coverage,
                label: l.label,
            })
            .collect(),
    })
}

/// `label`: IoU-based labels for every structure's cavities.
pub fn stage_label(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let (manifest, _) = load_manifest(ws)?;
    let sites = load_sites(ws, &manifest)?;
    sites.par_iter().try_for_each(|s| -> Result<()> {
        let cavities = load_cavities(ws, &s.entry.id)?;
        write_json(&ws.labels(&s.entry.id), &label_site(s, &cavities, cfg)?)
    })
}

fn load_labels(ws: &Workspace, id: &str, n_cavities: usize) -> Result<LabelFile> {
    let path = ws.labels(id);
    if !path.exists() {
        return Err(Error::Data(format!(
            "{id}: no labels at {} (run label first)",
            path.display()
        )));
    }
    let labels: LabelFile = read_json(&path)?;
    if labels.cavities.len() != n_cavities {
        return Err(Error::Data(format!("{id}: labels do not match detected cavities")));
    }
    Ok(labels)
}

/// Everything downstream stages need per structure.
struct SiteContext {
    site: LoadedSite,
    cavities: Vec<Cavity>,
    labels: LabelFile,
    /// Enlarged crops at each cavity center, encoder inputs for cavities.
    crops: Vec<Pocket>,
}

fn load_context(cfg: &RunConfig, ws: &Workspace) -> Result<(Manifest, String, Vec<SiteContext>)> {
    let (manifest, hash) = load_manifest(ws)?;
    let sites = load_sites(ws, &manifest)?;
    let pcfg = cfg.pocket_config();
    let contexts = sites
        .into_par_iter()
        .map(|site| {
            let cavities = load_cavities(ws, &site.entry.id)?;
            let labels = load_labels(ws, &site.entry.id, cavities.len())?;
            let crops = cavities
                .iter()
                .map(|c| {
                    let mut p = crop_enlarged(&site.structure, c.center, &pcfg)?;
                    p.source = PocketSource::Cavity;
                    Ok(p)
                })
                .collect::<Result<_>>()?;
            Ok(SiteContext {
                site,
                cavities,
                labels,
                crops,
            })
        })
        .collect::<Result<_>>()?;
    Ok((manifest, hash, contexts))
}

fn prepare_pocket(enc: &EncoderParams, structure: &ProteinStructure, pocket: &Pocket) -> Result<PreparedCloud> {
    enc.prepare(&pocket.atoms(structure), pocket.center)
}

fn prepare_ligand(enc: &EncoderParams, ligand: &LigandConformer) -> Result<PreparedCloud> {
    enc.prepare(&ligand.atoms, centroid(&ligand.atoms)?)
}

fn align_data(ctx: &SiteContext, params: &ModelParams, pcfg: &PocketConfig) -> Result<AlignComplexData> {
    let s = &ctx.site;
    let holo = holo_pocket(&s.structure, &s.holo_ligand, pcfg)?;
    let labeled: Vec<LabeledCavity> = ctx
        .cavities
        .iter()
        .zip(&ctx.labels.cavities)
        .map(|(c, rec)| {
            Ok(LabeledCavity {
                cavity: c.clone(),
                pocket: cavity_residue_pocket(&s.structure, c, pcfg)?,
                iou: rec.iou,
                coverage: rec.coverage,
                label: rec.label,
            })
        })
        .collect::<Result<_>>()?;
    let enc = params.cavity_encoder();
    Ok(AlignComplexData {
        id: s.entry.id.clone(),
        ligand: prepare_ligand(&params.ligand_encoder, &s.holo_ligand)?,
        holo: prepare_pocket(params.holo_encoder(), &s.structure, &holo)?,
        labeled,
        cavity_clouds: ctx
            .crops
            .iter()
            .map(|p| prepare_pocket(enc, &s.structure, p))
            .collect::<Result<_>>()?,
    })
}

fn training_contexts(contexts: &[SiteContext]) -> Vec<&SiteContext> {
    contexts
        .iter()
        .filter(|c| c.site.entry.role == SiteRole::Training)
        .collect()
}

fn screening_contexts(contexts: &[SiteContext]) -> Vec<&SiteContext> {
    contexts
        .iter()
        .filter(|c| c.site.entry.role == SiteRole::Screening)
        .collect()
}

/// `train-align`: phase 1 on the training structures.
pub fn stage_train_align(cfg: &RunConfig, ws: &Workspace) -> Result<AlignTrace> {
    let (_, _, contexts) = load_context(cfg, ws)?;
    let init = ModelParams::init(&cfg.encoder_config(), cfg.adapter_temperature, cfg.init_seed())?;
    let pcfg = cfg.pocket_config();
    let data: Vec<AlignComplexData> = training_contexts(&contexts)
        .par_iter()
        .map(|c| align_data(c, &init, &pcfg))
        .collect::<Result<_>>()?;
    let (params, trace) = train_align(&data, &init, &cfg.objective_config(), &cfg.label_config())?;
    write_text(&ws.align_checkpoint(), &Checkpoint::from_params(&params).to_json())?;
    write_json(&ws.align_trace(), &trace)?;
    Ok(trace)
}

fn crop_embeddings(ctx: &SiteContext, params: &ModelParams) -> Result<Vec<Embedding>> {
    ctx.crops
        .iter()
        .map(|p| pocket_embedding(&ctx.site.structure, p, params))
        .collect()
}

/// `train-adapter`: phase 2 on frozen embeddings of the training structures.
pub fn stage_train_adapter(cfg: &RunConfig, ws: &Workspace) -> Result<AdapterTrace> {
    let params = Checkpoint::load(&ws.align_checkpoint())?.to_params()?;
    let (_, _, contexts) = load_context(cfg, ws)?;
    let train = training_contexts(&contexts);
    let per_site: Vec<(Option<AggEmbedded>, Vec<AggEmbedded>)> = train
        .par_iter()
        .map(|ctx| -> Result<_> {
            if ctx.crops.is_empty() {
                return Ok((None, Vec::new()));
            }
            let cavs: Vec<Vec<f64>> = crop_embeddings(ctx, &params)?.into_iter().map(|e| e.0).collect();
            let ious: Vec<f64> = ctx.labels.cavities.iter().map(|c| c.iou).collect();
            let sizes: Vec<f64> = ctx.labels.cavities.iter().map(|c| c.size_score as f64).collect();
            let holo = crate::encoder::encode_ligand(&params.ligand_encoder, &ctx.site.holo_ligand.atoms)?;
            let complex = AggEmbedded {
                ligand: holo.0,
                cavities: cavs.clone(),
                supervision: complex_supervision(&ious, &sizes)?,
                origin: SampleOrigin::Complex,
            };
            let activity = library_embeddings(&ctx.site.ligands, &params)?
                .into_iter()
                .map(|e| {
                    Ok(AggEmbedded {
                        supervision: soft_labels_from_frozen_model(&e.0, &cavs, &params.loss_params)?,
                        ligand: e.0,
                        cavities: cavs.clone(),
                        origin: SampleOrigin::Activity,
                    })
                })
                .collect::<Result<_>>()?;
            Ok((Some(complex), activity))
        })
        .collect::<Result<_>>()?;
    let mut complex = Vec::new();
    let mut activity = Vec::new();
    for (c, a) in per_site {
        complex.extend(c);
        activity.extend(a);
    }
    let (trained, trace) = train_adapter(&complex, &activity, &params, &cfg.adapter_objective_config())?;
    write_text(&ws.adapter_checkpoint(), &Checkpoint::from_params(&trained).to_json())?;
    write_json(&ws.adapter_trace(), &trace)?;
    Ok(trace)
}

/// Screening runs implied by the configured setting and mode.
pub fn screening_runs(cfg: &RunConfig) -> Vec<&'static str> {
    let mut runs = Vec::new();
    if matches!(cfg.setting, Setting::Oracle | Setting::All) {
        runs.push("oracle");
    }
    if matches!(cfg.setting, Setting::Annotated | Setting::All) {
        runs.push("annotated");
    }
    if matches!(cfg.setting, Setting::Blind | Setting::All) {
        if matches!(cfg.mode, Mode::MaxPool | Mode::All) {
            runs.push("blind_max_pool");
        }
        if matches!(cfg.mode, Mode::Adapter | Mode::All) {
            runs.push("blind_adapter");
        }
    }
    runs
}

/// Cavity chosen in the annotated setting.
fn annotated_index(labels: &LabelFile) -> Result<usize> {
    let ious: Vec<f64> = labels.cavities.iter().map(|c| c.iou).collect();
    let sizes: Vec<f64> = labels.cavities.iter().map(|c| c.size_score as f64).collect();
    Ok(complex_supervision(&ious, &sizes)?.argmax())
}

fn screen_target(run: &str, ctx: &SiteContext, params: &ModelParams, cfg: &RunConfig) -> Result<Vec<RankedEntry>> {
    let s = &ctx.site;
    if s.ligands.is_empty() {
        return Err(Error::EmptyInput("screening an empty library"));
    }
    let ligs = library_embeddings(&s.ligands, params)?;
    let no_cavities = || Error::Data(format!("{}: no detected cavities to screen against", s.entry.id));
    let scores = match run {
        "oracle" => {
            let holo = holo_pocket(&s.structure, &s.holo_ligand, &cfg.pocket_config())?;
            annotated_scores(&ligs, &pocket_embedding(&s.structure, &holo, params)?, params)
        }
        "annotated" => {
            if ctx.crops.is_empty() {
                return Err(no_cavities());
            }
            let best = &ctx.crops[annotated_index(&ctx.labels)?];
            annotated_scores(&ligs, &pocket_embedding(&s.structure, best, params)?, params)
        }
        "blind_max_pool" | "blind_adapter" => {
            if ctx.crops.is_empty() {
                return Err(no_cavities());
            }
            let mode = if run == "blind_adapter" {
                BlindMode::Adapter
            } else {
                BlindMode::MaxPool
            };
            blind_scores(&ligs, &crop_embeddings(ctx, params)?, params, mode)?
        }
        other => return Err(Error::Config(format!("unknown screening run {other:?}"))),
    };
    Ok(RankedLibrary::from_scores(&s.ligands, &scores)?.entries().to_vec())
}

fn checkpoint_for(run: &str, ws: &Workspace) -> PathBuf {
    if run == "blind_adapter" {
        ws.adapter_checkpoint()
    } else {
        ws.align_checkpoint()
    }
}

/// `screen`: ranked libraries for every configured run.
pub fn stage_screen(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let runs = screening_runs(cfg);
    let mut checkpoints = BTreeMap::new();
    for run in &runs {
        let path = checkpoint_for(run, ws);
        checkpoints.insert(*run, Checkpoint::load(&path)?.to_params()?);
    }
    let (_, _, contexts) = load_context(cfg, ws)?;
    let targets = screening_contexts(&contexts);
    for run in runs {
        let params = &checkpoints[run];
        let ranked: BTreeMap<String, Vec<RankedEntry>> = targets
            .par_iter()
            .map(|ctx| Ok((ctx.site.entry.id.clone(), screen_target(run, ctx, params, cfg)?)))
            .collect::<Result<_>>()?;
        write_json(&ws.scores(run), &ranked)?;
    }
    Ok(())
}

fn selection_summary(
    targets: &[&SiteContext],
    choose: impl Fn(&SiteContext) -> Result<Option<usize>> + Sync,
) -> Result<SelectionSummary> {
    let picks: Vec<(String, Option<usize>, bool)> = targets
        .par_iter()
        .map(|ctx| {
            let pick = choose(ctx)?;
            let hit = pick.is_some_and(|i| {
                geom::dist(ctx.cavities[i].center, ctx.site.entry.binding_center) <= SELECTION_DISTANCE
            });
            Ok((ctx.site.entry.id.clone(), pick, hit))
        })
        .collect::<Result<_>>()?;
    let hits = picks.iter().filter(|p| p.2).count();
    Ok(SelectionSummary {
        cases: picks.len(),
        hits,
        rate: hits as f64 / picks.len().max(1) as f64,
        selected: picks.into_iter().map(|(id, p, _)| (id, p)).collect(),
    })
}

fn argmax_index(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// `pocket-id`: DCA hit rates and binding-site selection with the holo
/// ligands of the screening targets.
pub fn stage_pocket_id(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let align = Checkpoint::load(&ws.align_checkpoint())?.to_params()?;
    let adapter = if cfg.wants_adapter() {
        Some(Checkpoint::load(&ws.adapter_checkpoint())?.to_params()?)
    } else {
        None
    };
    let (_, _, contexts) = load_context(cfg, ws)?;
    let targets = screening_contexts(&contexts);

    let mut rankings: Vec<(PocketRanking, &ModelParams)> = vec![(PocketRanking::Score, &align)];
    if let Some(a) = adapter.as_ref() {
        rankings.push((PocketRanking::Attention, a));
    }
    rankings.push((PocketRanking::Ideal, &align));

    let mut tables = BTreeMap::new();
    let mut rows = Vec::new();
    for (ranking, params) in rankings {
        let per: Vec<PocketIdTable> = targets
            .par_iter()
            .map(|ctx| {
                pocket_id(
                    &ctx.site.structure,
                    &ctx.crops,
                    std::slice::from_ref(&ctx.site.holo_ligand),
                    params,
                    &DCA_THRESHOLDS,
                    ranking,
                )
            })
            .collect::<Result<_>>()?;
        let mut total = PocketIdTable::empty(&DCA_THRESHOLDS);
        for t in &per {
            total.merge(t)?;
        }
        rows.push((ranking.label().to_string(), total.clone()));
        tables.insert(ranking.label().to_string(), total);
    }
    write_json(&ws.pocket_id_json(), &tables)?;
    write_text(&ws.pocket_id_csv(), &pocket_id_csv(&rows))?;

    let mut selection = BTreeMap::new();
    selection.insert(
        "score".to_string(),
        selection_summary(&targets, |ctx| {
            if ctx.crops.is_empty() {
                return Ok(None);
            }
            let lig = crate::encoder::encode_ligand(&align.ligand_encoder, &ctx.site.holo_ligand.atoms)?;
            let scores: Vec<f64> = crop_embeddings(ctx, &align)?.iter().map(|c| lig.dot(c)).collect();
            Ok(Some(argmax_index(&scores)))
        })?,
    );
    if let Some(a) = adapter.as_ref() {
        selection.insert(
            "attention".to_string(),
            selection_summary(&targets, |ctx| {
                if ctx.crops.is_empty() {
                    return Ok(None);
                }
                let lig = crate::encoder::encode_ligand(&a.ligand_encoder, &ctx.site.holo_ligand.atoms)?;
                let cavs: Vec<Vec<f64>> = crop_embeddings(ctx, a)?.into_iter().map(|e| e.0).collect();
                let (w, _) = attention(&lig.0, &cavs, &a.adapter)?;
                Ok(Some(argmax_index(&w)))
            })?,
        );
    }
    write_json(&ws.selection(), &selection)
}

fn detection_summary(contexts: &[SiteContext]) -> DetectionSummary {
    let mut out = DetectionSummary {
        structures: contexts.len(),
        cavities: 0,
        planted_voids: 0,
        recovered_voids: 0,
        structures_nearly_complete: 0,
        binding_voids_recovered: 0,
    };
    for ctx in contexts {
        let e = &ctx.site.entry;
        out.cavities += ctx.cavities.len();
        out.planted_voids += e.void_centers.len();
        let found = |v: &Vec3| {
            ctx.cavities
                .iter()
                .any(|c| geom::dist(c.center, *v) <= RECOVERY_DISTANCE)
        };
        let recovered = e.void_centers.iter().filter(|v| found(v)).count();
        out.recovered_voids += recovered;
        if recovered + 1 >= e.void_centers.len() {
            out.structures_nearly_complete += 1;
        }
        if found(&e.binding_center) {
            out.binding_voids_recovered += 1;
        }
    }
    out
}

fn label_summary(contexts: &[SiteContext]) -> LabelSummary {
    let mut out = LabelSummary {
        positive: 0,
        negative: 0,
        ignore: 0,
        structures_without_positive: 0,
    };
    for ctx in contexts {
        let mut any_pos = false;
        for c in &ctx.labels.cavities {
            match c.label {
                CavityLabel::Positive => {
                    out.positive += 1;
                    any_pos = true;
                }
                CavityLabel::Negative => out.negative += 1,
                CavityLabel::Ignore => out.ignore += 1,
            }
        }
        if !any_pos {
            out.structures_without_positive += 1;
        }
    }
    out
}

fn summarize(initial: f64, fin: f64, epochs: usize, best: usize) -> TrainingSummary {
    TrainingSummary {
        initial_train_loss: initial,
        final_train_loss: fin,
        epochs_run: epochs,
        best_epoch: best,
    }
}

/// `eval`: metrics for every screened run plus the full attributable report.
pub fn stage_eval(cfg: &RunConfig, ws: &Workspace) -> Result<RunReport> {
    let (_, manifest_sha256, contexts) = load_context(cfg, ws)?;
    let mut metrics = BTreeMap::new();
    for run in screening_runs(cfg) {
        let path = ws.scores(run);
        if !path.exists() {
            return Err(Error::Data(format!(
                "no scores at {} (run screen first)",
                path.display()
            )));
        }
        let ranked: BTreeMap<String, Vec<RankedEntry>> = read_json(&path)?;
        let libs: BTreeMap<String, RankedLibrary> = ranked
            .into_iter()
            .map(|(id, entries)| Ok((id, RankedLibrary::new(entries)?)))
            .collect::<Result<_>>()?;
        let report = MetricsReport::from_libraries(libs.iter().map(|(id, l)| (id.as_str(), l)))?;
        write_text(&ws.metrics(run, "json"), &serde_json::to_string_pretty(&report)?)?;
        write_text(&ws.metrics(run, "csv"), &report.to_csv())?;
        metrics.insert(run.to_string(), report);
    }

    let mut checkpoint_hashes = BTreeMap::new();
    let mut training = BTreeMap::new();
    let align = Checkpoint::load(&ws.align_checkpoint())?;
    checkpoint_hashes.insert("align".to_string(), align.component_hashes());
    let trace: AlignTrace = read_json(&ws.align_trace())?;
    training.insert(
        "align".to_string(),
        summarize(
            trace.initial_train_loss,
            trace.final_train_loss,
            trace.epochs.len(),
            trace.best_epoch,
        ),
    );
    if cfg.wants_adapter() {
        let adapter = Checkpoint::load(&ws.adapter_checkpoint())?;
        checkpoint_hashes.insert("adapter".to_string(), adapter.component_hashes());
        let trace: AdapterTrace = read_json(&ws.adapter_trace())?;
        training.insert(
            "adapter".to_string(),
            summarize(
                trace.initial_train_loss,
                trace.final_train_loss,
                trace.epochs.len(),
                trace.best_epoch,
            ),
        );
    }

    let report = RunReport {
        config: cfg.echo(),
        seeds: cfg.seeds(),
        manifest_sha256,
        checkpoint_hashes,
        tie_policy: TIE_POLICY.to_string(),
        metrics,
        pocket_id: read_json(&ws.pocket_id_json())?,
        binding_site_selection: read_json(&ws.selection())?,
        detection: detection_summary(&contexts),
        labels: label_summary(&contexts),
        training,
    };
    write_text(&ws.report(), &report.to_json())?;
    Ok(report)
}

/// `run`: every stage in order.
pub fn run_pipeline(cfg: &RunConfig, ws: &Workspace) -> Result<RunReport> {
    stage_gen_synth(cfg, ws)?;
    stage_detect(cfg, ws)?;
    stage_label(cfg, ws)?;
    stage_train_align(cfg, ws)?;
    if cfg.wants_adapter() {
        stage_train_adapter(cfg, ws)?;
    }
    stage_screen(cfg, ws)?;
    stage_pocket_id(cfg, ws)?;
    stage_eval(cfg, ws)
}
