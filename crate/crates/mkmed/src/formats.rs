//! Dataset files: molecules.jsonl, modalities.jsonl, ehr.jsonl, ddi.json
//! and rules.json.
//!
//! Float arrays (image pixels, conformer coordinates) travel as base64 of
//! little-endian f64 so a written dataset reloads bit-for-bit.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mkmed_core::align::{KgFacts, MultimodalRecord};
use mkmed_core::clinical::{DdiMatrix, PatientHistory, Visit, Vocab};
use mkmed_core::molkit::{parse_smiles, Conformer, KgTriple, MoleculeImage, PropertyVector, TextDescription};
use mkmed_core::synthgen::{RuleTable, SynthDataset};

use crate::error::{CliError, CliResult};

pub const MOLECULES: &str = "molecules.jsonl";
pub const MODALITIES: &str = "modalities.jsonl";
pub const EHR: &str = "ehr.jsonl";
pub const DDI: &str = "ddi.json";
pub const RULES: &str = "rules.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MoleculeLine {
    id: String,
    smiles: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageBlob {
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
    pixels: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextBlob {
    tokens: Vec<usize>,
    segments: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConformerBlob {
    atoms: usize,
    seed: u64,
    coords: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PropsBlob {
    molecular_weight: f64,
    hba: u32,
    hbd: u32,
    psa: f64,
    aromatic_rings: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KgBlob {
    entity: usize,
    triples: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModalityLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<ImageBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<TextBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conformer: Option<ConformerBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    props: Option<PropsBlob>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kg: Option<KgBlob>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitLine {
    d: Vec<usize>,
    p: Vec<usize>,
    m: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    patient_id: String,
    visits: Vec<VisitLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DdiFile {
    size: usize,
    pairs: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    disease_meds: Vec<Vec<usize>>,
    procedure_meds: Vec<Vec<usize>>,
    chronic: Vec<(String, Vec<usize>)>,
}

pub fn encode_f64(xs: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = xs.into_iter().flat_map(f64::to_le_bytes).collect();
    B64.encode(bytes)
}

pub fn decode_f64(s: &str) -> Result<Vec<f64>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("blob of {} bytes is not a whole number of f64 values", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn modality_line(r: &MultimodalRecord) -> ModalityLine {
    ModalityLine {
        id: r.mol_id.clone(),
        image: r.image.as_ref().map(|im| ImageBlob {
            height: im.height,
            width: im.width,
            channels: im.channels,
            seed: im.seed,
            pixels: encode_f64(im.pixels.iter().copied()),
        }),
        text: r.text.as_ref().map(|t| TextBlob {
            tokens: t.tokens.clone(),
            segments: t.segments.iter().map(|s| [s.start, s.end]).collect(),
        }),
        conformer: r.conformer.as_ref().map(|c| ConformerBlob {
            atoms: c.coords.len(),
            seed: c.seed,
            coords: encode_f64(c.coords.iter().flatten().copied()),
        }),
        props: r.props.map(|p| PropsBlob {
            molecular_weight: p.molecular_weight,
            hba: p.hba,
            hbd: p.hbd,
            psa: p.psa,
            aromatic_rings: p.aromatic_rings,
        }),
        kg: r.kg.as_ref().map(|k| KgBlob {
            entity: k.entity,
            triples: k.triples.iter().map(|t| [t.head, t.relation, t.tail]).collect(),
        }),
    }
}

fn record_from(mol: MoleculeLine, line: ModalityLine) -> Result<MultimodalRecord, String> {
    if mol.id != line.id {
        return Err(format!("modality record {:?} does not match molecule {:?}", line.id, mol.id));
    }
    let graph = parse_smiles(&mol.smiles).map_err(|e| format!("{}: {e}", mol.id))?;
    let image = match line.image {
        Some(b) => {
            let pixels = decode_f64(&b.pixels)?;
            if pixels.len() != b.height * b.width * b.channels {
                return Err(format!("{}: image holds {} values, shape needs {}", mol.id, pixels.len(), b.height * b.width * b.channels));
            }
            Some(MoleculeImage { height: b.height, width: b.width, channels: b.channels, pixels, seed: b.seed })
        }
        None => None,
    };
    let text = match line.text {
        Some(b) => {
            let mut end = 0;
            for &[s, e] in &b.segments {
                if s != end || e < s {
                    return Err(format!("{}: text segments must be contiguous", mol.id));
                }
                end = e;
            }
            if end != b.tokens.len() {
                return Err(format!("{}: text segments do not cover the tokens", mol.id));
            }
            Some(TextDescription { tokens: b.tokens, segments: b.segments.iter().map(|&[s, e]| s..e).collect() })
        }
        None => None,
    };
    let conformer = match line.conformer {
        Some(b) => {
            let xs = decode_f64(&b.coords)?;
            if b.atoms != graph.atoms().len() || xs.len() != 3 * b.atoms {
                return Err(format!("{}: conformer shape does not match the molecule", mol.id));
            }
            Some(Conformer { coords: xs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(), seed: b.seed })
        }
        None => None,
    };
    let props = line.props.map(|p| PropertyVector {
        molecular_weight: p.molecular_weight,
        hba: p.hba,
        hbd: p.hbd,
        psa: p.psa,
        aromatic_rings: p.aromatic_rings,
    });
    let kg = line.kg.map(|k| KgFacts {
        entity: k.entity,
        triples: k.triples.iter().map(|&[head, relation, tail]| KgTriple { head, relation, tail }).collect(),
    });
    Ok(MultimodalRecord { mol_id: mol.id, smiles: mol.smiles, graph, image, text, conformer, props, kg })
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult<()> {
    let f = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CliError::format(path, e))?;
        w.write_all(b"\n").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let f = fs::File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::format(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(CliError::io(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let s = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&s).map_err(|e| CliError::format(path, e))
}

pub fn write_records(dir: &Path, molecules: &[(String, String)], records: &[MultimodalRecord]) -> CliResult<()> {
    write_jsonl(
        &dir.join(MOLECULES),
        molecules.iter().map(|(id, smiles)| MoleculeLine { id: id.clone(), smiles: smiles.clone() }),
    )?;
    write_jsonl(&dir.join(MODALITIES), records.iter().map(modality_line))
}

pub fn read_records(dir: &Path) -> CliResult<Vec<MultimodalRecord>> {
    let mols: Vec<MoleculeLine> = read_jsonl(&dir.join(MOLECULES))?;
    let lines: Vec<ModalityLine> = read_jsonl(&dir.join(MODALITIES))?;
    let path = dir.join(MODALITIES);
    if mols.len() != lines.len() {
        return Err(CliError::format(path, format!("{} records for {} molecules", lines.len(), mols.len())));
    }
    mols.into_iter().zip(lines).map(|(m, l)| record_from(m, l).map_err(|e| CliError::format(&path, e))).collect()
}

pub fn write_patients(path: &Path, patients: &[PatientHistory]) -> CliResult<()> {
    write_jsonl(
        path,
        patients.iter().map(|p| PatientLine {
            patient_id: p.patient_id.clone(),
            visits: p
                .visits
                .iter()
                .map(|v| VisitLine { d: v.diseases.clone(), p: v.procedures.clone(), m: v.medications.clone() })
                .collect(),
        }),
    )
}

pub fn read_patients(path: &Path) -> CliResult<Vec<PatientHistory>> {
    let lines: Vec<PatientLine> = read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|l| PatientHistory {
            patient_id: l.patient_id,
            visits: l.visits.into_iter().map(|v| Visit::new(v.d, v.p, v.m)).collect(),
        })
        .collect())
}

pub fn write_ddi(path: &Path, ddi: &DdiMatrix) -> CliResult<()> {
    write_json(path, &DdiFile { size: ddi.size(), pairs: ddi.pairs().into_iter().map(|(i, j)| [i, j]).collect() })
}

pub fn read_ddi(path: &Path) -> CliResult<DdiMatrix> {
    let f: DdiFile = read_json(path)?;
    let pairs: Vec<(usize, usize)> = f.pairs.iter().map(|&[i, j]| (i, j)).collect();
    Ok(DdiMatrix::from_pairs(f.size, &pairs)?)
}

pub fn write_rules(path: &Path, rules: &RuleTable) -> CliResult<()> {
    write_json(
        path,
        &RulesFile {
            disease_meds: rules.disease_meds.clone(),
            procedure_meds: rules.procedure_meds.clone(),
            chronic: rules.chronic.clone(),
        },
    )
}

pub fn read_rules(path: &Path) -> CliResult<RuleTable> {
    let f: RulesFile = read_json(path)?;
    Ok(RuleTable { disease_meds: f.disease_meds, procedure_meds: f.procedure_meds, chronic: f.chronic })
}

/// A dataset directory as loaded by the training commands.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub records: Vec<MultimodalRecord>,
    pub patients: Vec<PatientHistory>,
    pub ddi: DdiMatrix,
    pub vocab: Vocab,
}

pub fn write_dataset(dir: &Path, data: &SynthDataset) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    write_records(dir, &data.molecules, &data.records)?;
    write_patients(&dir.join(EHR), &data.patients)?;
    write_ddi(&dir.join(DDI), &data.ddi)?;
    write_rules(&dir.join(RULES), &data.rules)
}

/// Vocabulary sizes are inferred: medications from the interaction
/// matrix, diseases and procedures from the rule table when present,
/// otherwise from the largest index seen.
pub fn read_dataset(dir: &Path) -> CliResult<Dataset> {
    let records = read_records(dir)?;
    let patients = read_patients(&dir.join(EHR))?;
    let ddi = read_ddi(&dir.join(DDI))?;
    let max_code = |f: &dyn Fn(&Visit) -> &[usize]| {
        patients.iter().flat_map(|p| &p.visits).flat_map(|v| f(v).iter().map(|&x| x + 1)).max().unwrap_or(0)
    };
    let rules_path = dir.join(RULES);
    let (diseases, procedures) = if rules_path.exists() {
        let r = read_rules(&rules_path)?;
        (r.disease_meds.len(), r.procedure_meds.len())
    } else {
        (max_code(&|v| &v.diseases), max_code(&|v| &v.procedures))
    };
    let vocab = Vocab { diseases, procedures, medications: ddi.size() };
    Ok(Dataset { dir: dir.to_path_buf(), records, patients, ddi, vocab })
}
