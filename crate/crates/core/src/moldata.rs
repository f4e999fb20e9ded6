//! Atom-level records for proteins and ligands, plus the two on-disk formats:
//! a fixed-column subset of PDB for proteins and JSON-lines for ligand
//! libraries.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Elements the toolkit distinguishes. Anything else is folded into `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    S,
    P,
    X,
}

impl Element {
    pub const ALL: [Element; 7] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::X,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Case-insensitive symbol lookup; unknown symbols map to `X`.
    pub fn from_symbol(symbol: &str) -> Element {
        match symbol.trim().to_ascii_uppercase().as_str() {
            "H" | "D" => Element::H,
            "C" => Element::C,
            "N" => Element::N,
            "O" => Element::O,
            "S" => Element::S,
            "P" => Element::P,
            _ => Element::X,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::X => "X",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_hydrogen(self) -> bool {
        self == Element::H
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub name: String,
    pub element: Element,
    pub position: Vec3,
    /// Index into the owning structure's residue list; `None` for ligand atoms.
    pub residue_index: Option<usize>,
}

impl Atom {
    pub fn new(element: Element, position: Vec3) -> Self {
        Atom {
            name: element.symbol().to_string(),
            element,
            position,
            residue_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residue {
    pub chain_id: char,
    pub seq_num: i32,
    pub name: String,
    pub atom_indices: Vec<usize>,
}

impl Residue {
    pub fn key(&self) -> ResidueKey {
        ResidueKey {
            chain_id: self.chain_id,
            seq_num: self.seq_num,
        }
    }
}

/// Residue identity within a structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResidueKey {
    pub chain_id: char,
    pub seq_num: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProteinStructure {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub residues: Vec<Residue>,
}

impl ProteinStructure {
    /// Builds a structure, checking atom/residue cross references.
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>, residues: Vec<Residue>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyStructure);
        }
        let mut keys = HashSet::new();
        for (ri, res) in residues.iter().enumerate() {
            if res.atom_indices.is_empty() {
                return Err(Error::Data(format!("residue {ri} has no atoms")));
            }
            if !keys.insert(res.key()) {
                return Err(Error::Data(format!(
                    "duplicate residue {}:{}",
                    res.chain_id, res.seq_num
                )));
            }
            for &ai in &res.atom_indices {
                match atoms.get(ai) {
                    Some(a) if a.residue_index == Some(ri) => {}
                    _ => return Err(Error::Data(format!("residue {ri} references inconsistent atom {ai}"))),
                }
            }
        }
        for (ai, atom) in atoms.iter().enumerate() {
            if !atom.position.iter().all(|c| c.is_finite()) {
                return Err(Error::Data(format!("atom {ai} has non-finite position")));
            }
            match atom.residue_index {
                Some(ri) if ri < residues.len() => {}
                _ => return Err(Error::Data(format!("atom {ai} has no valid residue"))),
            }
        }
        Ok(ProteinStructure {
            id: id.into(),
            atoms,
            residues,
        })
    }

    pub fn residue_key_of(&self, atom_index: usize) -> ResidueKey {
        let ri = self.atoms[atom_index]
            .residue_index
            .expect("protein atoms always carry a residue index");
        self.residues[ri].key()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.atoms.iter().map(|a| a.position).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityLabel {
    Active,
    Decoy,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LigandConformer {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub activity_label: ActivityLabel,
}

impl LigandConformer {
    pub fn new(id: impl Into<String>, atoms: Vec<Atom>, activity_label: ActivityLabel) -> Result<Self> {
        let id = id.into();
        if atoms.is_empty() {
            return Err(Error::Ligand(format!("{id}: ligand has no atoms")));
        }
        Ok(LigandConformer {
            id,
            atoms,
            activity_label,
        })
    }

    pub fn is_active(&self) -> bool {
        self.activity_label == ActivityLabel::Active
    }
}

/// One benchmark unit: a structure, its optional co-crystallized ligand and
/// the library to rank against it.
#[derive(Debug, Clone)]
pub struct ScreeningTarget {
    pub target_id: String,
    pub structure: ProteinStructure,
    pub holo_ligand: Option<LigandConformer>,
    pub library: Vec<LigandConformer>,
}

impl ScreeningTarget {
    pub fn new(
        target_id: impl Into<String>,
        structure: ProteinStructure,
        holo_ligand: Option<LigandConformer>,
        library: Vec<LigandConformer>,
    ) -> Result<Self> {
        let target_id = target_id.into();
        let mut seen = HashSet::new();
        for lig in &library {
            if !seen.insert(lig.id.as_str()) {
                return Err(Error::Ligand(format!("{}: duplicate id in library", lig.id)));
            }
        }
        Ok(ScreeningTarget {
            target_id,
            structure,
            holo_ligand,
            library,
        })
    }
}

/// Arithmetic mean of atom positions.
pub fn centroid(atoms: &[Atom]) -> Result<Vec3> {
    let points: Vec<Vec3> = atoms.iter().map(|a| a.position).collect();
    geom::mean(&points).ok_or(Error::EmptyInput("centroid of zero atoms"))
}

/// 1-based inclusive column slice; short lines yield a truncated or empty field.
fn columns(line: &str, start: usize, end: usize) -> &str {
    let bytes = line.as_bytes();
    let lo = (start - 1).min(bytes.len());
    let hi = end.min(bytes.len());
    line.get(lo..hi).unwrap_or("")
}

fn parse_coord(line: &str, start: usize, end: usize, line_no: usize, axis: char) -> Result<f64> {
    let field = columns(line, start, end).trim();
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("malformed {axis} coordinate {field:?}"),
        })
}

/// Parses ATOM records of the first model. HETATM records are skipped.
pub fn parse_protein(id: &str, text: &str) -> Result<ProteinStructure> {
    let mut atoms = Vec::new();
    let mut residues: Vec<Residue> = Vec::new();
    let mut residue_lookup: HashMap<ResidueKey, usize> = HashMap::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let record = columns(line, 1, 6).trim_end();
        match record {
            "ENDMDL" | "END" => break,
            "ATOM" => {}
            _ => continue,
        }
        let name = columns(line, 13, 16).trim().to_string();
        let res_name = columns(line, 18, 20).trim().to_string();
        let chain_id = columns(line, 22, 22).chars().next().unwrap_or(' ');
        let seq_field = columns(line, 23, 26).trim();
        let seq_num: i32 = seq_field.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("malformed residue number {seq_field:?}"),
        })?;
        let position = [
            parse_coord(line, 31, 38, line_no, 'x')?,
            parse_coord(line, 39, 46, line_no, 'y')?,
            parse_coord(line, 47, 54, line_no, 'z')?,
        ];
        let element_field = columns(line, 77, 78).trim();
        let element = if element_field.is_empty() {
            let first = name.chars().find(|c| c.is_ascii_alphabetic());
            first.map_or(Element::X, |c| Element::from_symbol(&c.to_string()))
        } else {
            Element::from_symbol(element_field)
        };

        let key = ResidueKey { chain_id, seq_num };
        let atom_index = atoms.len();
        let ri = *residue_lookup.entry(key).or_insert_with(|| {
            residues.push(Residue {
                chain_id,
                seq_num,
                name: res_name.clone(),
                atom_indices: Vec::new(),
            });
            residues.len() - 1
        });
        residues[ri].atom_indices.push(atom_index);
        atoms.push(Atom {
            name,
            element,
            position,
            residue_index: Some(ri),
        });
    }

    if atoms.is_empty() {
        return Err(Error::EmptyStructure);
    }
    ProteinStructure::new(id, atoms, residues)
}

/// Writes the structure in the same fixed-column layout `parse_protein` reads.
pub fn write_protein(structure: &ProteinStructure) -> String {
    let mut out = String::new();
    for (i, atom) in structure.atoms.iter().enumerate() {
        let res = &structure.residues[atom.residue_index.unwrap_or(0)];
        let name = if atom.name.len() < 4 {
            format!(" {}", atom.name)
        } else {
            atom.name.clone()
        };
        let [x, y, z] = atom.position;
        let _ = writeln!(
            out,
            "{:<6}{:>5} {:<4} {:>3} {}{:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}          {:>2}",
            "ATOM",
            (i + 1) % 100_000,
            name,
            res.name,
            res.chain_id,
            res.seq_num,
            x,
            y,
            z,
            1.0,
            0.0,
            atom.element.symbol()
        );
    }
    out.push_str("END\n");
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct LigandRecord {
    id: String,
    elements: Vec<String>,
    coords: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Parses one ligand per non-blank line.
pub fn parse_ligands(text: &str) -> Result<Vec<LigandConformer>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LigandRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.elements.len() != rec.coords.len() {
            return Err(Error::Ligand(format!("{}: length mismatch", rec.id)));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Ligand(format!("{}: duplicate id", rec.id)));
        }
        let label = match rec.label.as_deref() {
            None | Some("unlabeled") => ActivityLabel::Unlabeled,
            Some("active") => ActivityLabel::Active,
            Some("decoy") => ActivityLabel::Decoy,
            Some(other) => return Err(Error::Ligand(format!("{}: unknown label {other:?}", rec.id))),
        };
        let atoms = rec
            .elements
            .iter()
            .zip(&rec.coords)
            .map(|(e, c)| Atom::new(Element::from_symbol(e), *c))
            .collect();
        out.push(LigandConformer::new(rec.id, atoms, label)?);
    }
    Ok(out)
}

pub fn write_ligands(ligands: &[LigandConformer]) -> String {
    let mut out = String::new();
    for lig in ligands {
        let rec = LigandRecord {
            id: lig.id.clone(),
            elements: lig.atoms.iter().map(|a| a.element.symbol().to_string()).collect(),
            coords: lig.atoms.iter().map(|a| a.position).collect(),
            label: match lig.activity_label {
                ActivityLabel::Active => Some("active".into()),
                ActivityLabel::Decoy => Some("decoy".into()),
                ActivityLabel::Unlabeled => None,
            },
        };
        out.push_str(&serde_json::to_string(&rec).expect("ligand records serialize"));
        out.push('\n');
    }
    out
}
