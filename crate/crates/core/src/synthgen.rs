//! Seeded generators for the molecule corpus, modality coverage, the
//! interaction matrix and a learnable synthetic EHR with its hidden rules.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use crate::align::{CoverageProfile, KgFacts, Modality, MultimodalRecord};
use crate::clinical::{DdiMatrix, PatientHistory, Visit, Vocab};
use crate::error::{Error, Result};
use crate::molkit::{self, MoleculeGraph, DEFAULT_IMAGE_SIZE};
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_molecules: usize,
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub coverage: CoverageProfile,
    pub n_patients: usize,
    pub visits_mean: f64,
    pub rule_noise: f64,
    pub ddi_density: f64,
    /// Medications a patient may take persistently across visits.
    pub chronic_pool: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_molecules: 1000,
            n_diseases: 30,
            n_procedures: 20,
            n_medications: 131,
            coverage: CoverageProfile::uniform(0.4, 0),
            n_patients: 2000,
            visits_mean: 2.4,
            rule_noise: 0.05,
            ddi_density: 0.08,
            chronic_pool: 24,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if self.n_molecules == 0 || self.n_diseases == 0 || self.n_procedures == 0 || self.n_medications == 0 {
            return bad("all vocabulary and corpus counts must be at least 1");
        }
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1");
        }
        if self.n_medications > self.n_molecules {
            return bad("n_medications cannot exceed n_molecules");
        }
        if self.chronic_pool > self.n_medications {
            return bad("chronic_pool cannot exceed n_medications");
        }
        if !(self.visits_mean >= 1.0 && self.visits_mean.is_finite()) {
            return bad("visits_mean must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rule_noise) || !(0.0..=1.0).contains(&self.ddi_density) {
            return bad("rule_noise and ddi_density must lie in [0, 1]");
        }
        self.coverage.validate()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab { diseases: self.n_diseases, procedures: self.n_procedures, medications: self.n_medications }
    }
}

const RINGS: [&str; 8] =
    ["c1ccccc1", "C1CCCCC1", "C1CCCC1", "c1ccncc1", "C1CCNCC1", "C1CCOC1", "C1CC1", "c1ccc2ccccc2c1"];
const SUBSTITUENTS: [&str; 6] = ["O", "N", "F", "Cl", "C", "C(=O)O"];
const BRANCHES: [&str; 6] = ["(C)", "(O)", "(=O)", "(N)", "(F)", "(CC)"];

fn pick<'a>(r: &mut SeededRng, xs: &'a [&'a str]) -> &'a str {
    xs[r.random_range(0..xs.len())]
}

fn sample_smiles(r: &mut SeededRng) -> String {
    let mut s = String::new();
    let ring = r.random_bool(0.55);
    if ring {
        let base = pick(r, &RINGS);
        if base == "c1ccccc1" && r.random_bool(0.35) {
            s.push_str("c1ccc(");
            s.push_str(pick(r, &SUBSTITUENTS));
            s.push_str(")cc1");
        } else {
            s.push_str(base);
        }
    }
    let len = if ring { r.random_range(0..=6) } else { r.random_range(1..=8) };
    for k in 0..len {
        if ring || k > 0 {
            let u: f64 = r.random();
            if u < 0.12 {
                s.push('=');
            } else if u < 0.16 {
                s.push('#');
            }
        }
        let u: f64 = r.random();
        let atom = if k + 1 == len && u < 0.08 {
            pick(r, &["F", "Cl", "Br"])
        } else if u < 0.62 {
            "C"
        } else if u < 0.77 {
            "N"
        } else if u < 0.92 {
            "O"
        } else {
            "S"
        };
        s.push_str(atom);
        if k + 1 < len && r.random_bool(0.18) {
            s.push_str(pick(r, &BRANCHES));
        }
    }
    s
}

/// Every non-aromatic atom stays within its highest normal valence.
fn valence_ok(g: &MoleculeGraph) -> bool {
    g.atoms().iter().enumerate().all(|(i, a)| {
        let used: u8 = g.neighbors(i).iter().map(|&(_, b)| g.bonds()[b].order.valence()).sum();
        let max = *a.element.valences().last().unwrap_or(&0);
        a.aromatic || used <= max
    })
}

/// `n` structurally distinct molecules as `(id, SMILES)`.
pub fn gen_molecules(spec: &SynthSpec) -> Result<Vec<(String, String)>> {
    let mut r = rng::stream(spec.seed, rng::streams::MOLECULES);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(spec.n_molecules);
    let budget = 200 * spec.n_molecules + 1000;
    for _ in 0..budget {
        if out.len() == spec.n_molecules {
            break;
        }
        let s = sample_smiles(&mut r);
        let Ok(g) = molkit::parse_smiles(&s) else { continue };
        if !valence_ok(&g) {
            continue;
        }
        if seen.insert(String::from(g.canonical_id())) {
            out.push((alloc::format!("mol{:04}", out.len()), s));
        }
    }
    if out.len() < spec.n_molecules {
        return Err(Error::ExhaustedAttempts { got: out.len(), wanted: spec.n_molecules });
    }
    Ok(out)
}

/// Build one record per molecule; each modality is present independently
/// with its coverage probability.
pub fn gen_modalities(
    molecules: &[(String, String)],
    coverage: &CoverageProfile,
    seed: u64,
) -> Result<Vec<MultimodalRecord>> {
    coverage.validate()?;
    let graphs = molecules
        .iter()
        .map(|(_, s)| molkit::parse_smiles(s).map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    let props: Vec<_> = graphs.iter().map(molkit::descriptors).collect();
    let kg = molkit::synth_kg(&props, rng::mix(seed, rng::streams::KG));
    let mut mask_rng = rng::stream(rng::mix(seed, coverage.seed), rng::streams::COVERAGE);
    let mut out = Vec::with_capacity(graphs.len());
    for (i, ((id, smiles), graph)) in molecules.iter().zip(graphs).enumerate() {
        let mut present = [false; 5];
        for m in Modality::ALL {
            present[m.index()] = rng::uniform(&mut mask_rng, 0.0, 1.0) < coverage.p[m.index()];
        }
        let s = rng::mix(seed, i as u64);
        let on = |m: Modality| present[m.index()];
        let image = on(Modality::Image).then(|| molkit::rasterize(&graph, DEFAULT_IMAGE_SIZE, s));
        let text = on(Modality::Text).then(|| molkit::describe(&graph, s));
        let conformer = if on(Modality::Structure) { Some(molkit::generate_conformer(&graph, s)?) } else { None };
        let props = on(Modality::Props).then(|| props[i]);
        let kg = on(Modality::Kg).then(|| KgFacts { entity: i, triples: kg.triples_of(i).copied().collect() });
        out.push(MultimodalRecord { mol_id: id.clone(), smiles: smiles.clone(), graph, image, text, conformer, props, kg });
    }
    Ok(out)
}

/// Symmetric Bernoulli interaction matrix.
pub fn gen_ddi(spec: &SynthSpec) -> DdiMatrix {
    let n = spec.n_medications;
    let mut r = rng::stream(spec.seed, rng::streams::DDI);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng::uniform(&mut r, 0.0, 1.0) < spec.ddi_density {
                pairs.push((i, j));
            }
        }
    }
    DdiMatrix::from_pairs(n, &pairs).expect("generated pairs are in range and off-diagonal")
}

/// The hidden prescription rules behind the synthetic EHR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    pub disease_meds: Vec<Vec<usize>>,
    pub procedure_meds: Vec<Vec<usize>>,
    /// Persistent medications per patient, in patient order.
    pub chronic: Vec<(String, Vec<usize>)>,
}

impl RuleTable {
    /// Noise-free prescription for `visit` of a patient with `chronic` meds.
    pub fn prescribe(&self, visit: &Visit, chronic: &[usize]) -> Vec<usize> {
        let mut set = BTreeSet::new();
        visit.diseases.iter().for_each(|&d| set.extend(self.disease_meds[d].iter().copied()));
        visit.procedures.iter().for_each(|&p| set.extend(self.procedure_meds[p].iter().copied()));
        set.extend(chronic.iter().copied());
        set.into_iter().collect()
    }

    pub fn chronic_of(&self, patient_id: &str) -> &[usize] {
        self.chronic.iter().find(|(p, _)| p == patient_id).map(|(_, c)| c.as_slice()).unwrap_or(&[])
    }
}

fn distinct(r: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    rng::shuffle(r, &mut all);
    all.truncate(k.min(n));
    all.sort_unstable();
    all
}

/// Patients whose medications follow the hidden rules, with noise: each rule
/// medication is dropped with probability `rule_noise / 2`, and one random
/// extra medication is added with probability `rule_noise / 2`.
pub fn gen_ehr(spec: &SynthSpec, ddi: &DdiMatrix) -> Result<(Vec<PatientHistory>, RuleTable)> {
    spec.validate()?;
    if ddi.size() != spec.n_medications {
        return Err(Error::VocabMismatch(alloc::format!(
            "interaction matrix covers {} medications, spec has {}",
            ddi.size(),
            spec.n_medications
        )));
    }
    let m = spec.n_medications;
    let mut r = rng::stream(spec.seed, rng::streams::EHR);
    let disease_meds = (0..spec.n_diseases)
        .map(|_| {
            let k = r.random_range(1..=3);
            distinct(&mut r, m, k)
        })
        .collect();
    let procedure_meds = (0..spec.n_procedures)
        .map(|_| {
            let k = r.random_range(0..=2);
            distinct(&mut r, m, k)
        })
        .collect();
    let chronic_candidates = distinct(&mut r, m, spec.chronic_pool);
    let mut rules = RuleTable { disease_meds, procedure_meds, chronic: Vec::with_capacity(spec.n_patients) };
    let extra = Poisson::new(spec.visits_mean - 1.0).ok();
    let mut patients = Vec::with_capacity(spec.n_patients);
    for pi in 0..spec.n_patients {
        let id = alloc::format!("p{pi:05}");
        let n_visits = 1 + extra.as_ref().map_or(0, |d| d.sample(&mut r) as usize);
        let chronic = if chronic_candidates.is_empty() {
            Vec::new()
        } else {
            let k = r.random_range(1..=3usize);
            let picks: Vec<usize> = distinct(&mut r, chronic_candidates.len(), k);
            picks.into_iter().map(|i| chronic_candidates[i]).collect()
        };
        let mut visits: Vec<Visit> = Vec::with_capacity(n_visits);
        for t in 0..n_visits {
            let k = r.random_range(1..=5usize);
            let mut diseases: Vec<usize> = Vec::new();
            if t > 0 {
                for &d in &visits[t - 1].diseases {
                    if diseases.len() < k && r.random_bool(0.5) {
                        diseases.push(d);
                    }
                }
            }
            while diseases.len() < k {
                let d = r.random_range(0..spec.n_diseases);
                if !diseases.contains(&d) {
                    diseases.push(d);
                }
                if diseases.len() == spec.n_diseases {
                    break;
                }
            }
            let kp = r.random_range(0..=3usize);
            let procedures = distinct(&mut r, spec.n_procedures, kp);
            let mut visit = Visit::new(diseases, procedures, Vec::new());
            let mut meds = rules.prescribe(&visit, &chronic);
            if spec.rule_noise > 0.0 {
                meds.retain(|_| !r.random_bool(spec.rule_noise / 2.0));
                if r.random_bool(spec.rule_noise / 2.0) {
                    meds.push(r.random_range(0..m));
                }
            }
            visit.medications = Visit::new(vec![], vec![], meds).medications;
            visits.push(visit);
        }
        rules.chronic.push((id.clone(), chronic));
        patients.push(PatientHistory { patient_id: id, visits });
    }
    Ok((patients, rules))
}

/// Everything the pipeline consumes, generated from one spec.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub molecules: Vec<(String, String)>,
    pub records: Vec<MultimodalRecord>,
    pub ddi: DdiMatrix,
    pub patients: Vec<PatientHistory>,
    pub rules: RuleTable,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let molecules = gen_molecules(spec)?;
    let records = gen_modalities(&molecules, &spec.coverage, spec.seed)?;
    let ddi = gen_ddi(spec);
    let (patients, rules) = gen_ehr(spec, &ddi)?;
    Ok(SynthDataset { molecules, records, ddi, patients, rules })
}
