//! Dataset manifests, referable labelling, patient-level splits, k-fold
//! partitioning and stratified label-fraction subsampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid DR grade {0}; expected 0..=4")]
    InvalidGrade(i64),
    #[error("label fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("split fractions must be non-negative and sum to 1 (got {0})")]
    SplitFractions(f64),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("training split is empty")]
    EmptyTrainingSplit,
    #[error("k-fold needs k >= 2 and at most one fold per patient (k = {k}, patients = {patients})")]
    FoldCount { k: usize, patients: usize },
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("split tag refers to unknown image id `{0}`")]
    UnknownId(String),
    #[error("patient `{0}` appears in more than one of train/val/test")]
    PatientLeak(String),
    #[error("malformed manifest rows: {}", format_rows(.0))]
    MalformedRows(Vec<(u64, String)>),
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_rows(rows: &[(u64, String)]) -> String {
    rows.iter()
        .map(|(line, msg)| format!("line {line}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Diabetic retinopathy severity, 0 (no DR) through 4 (proliferative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct DrGrade(u8);

impl DrGrade {
    pub const REFERABLE_THRESHOLD: u8 = 2;

    pub fn new(value: i64) -> Result<Self, DataError> {
        if (0..=4).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(DataError::InvalidGrade(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for DrGrade {
    type Error = DataError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DrGrade> for i64 {
    fn from(g: DrGrade) -> i64 {
        i64::from(g.0)
    }
}

/// Moderate NPDR and above is referable.
pub fn grade_to_referable(grade: DrGrade) -> bool {
    grade.value() >= DrGrade::REFERABLE_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "OD")]
    Right,
    #[serde(rename = "OS")]
    Left,
    #[serde(rename = "U")]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundusRecord {
    pub image_id: String,
    pub image_uri: String,
    pub grade: DrGrade,
    pub patient_id: String,
    pub eye: Eye,
}

impl FundusRecord {
    pub fn referable(&self) -> bool {
        grade_to_referable(self.grade)
    }

    pub fn label(&self) -> u8 {
        u8::from(self.referable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "excluded" => Ok(Split::Excluded),
            other => Err(DataError::UnknownSplit(other.to_string())),
        }
    }
}

/// Ordered records plus optional split tags. Relative image URIs resolve
/// against `root` (the directory the manifest was read from).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<FundusRecord>,
    pub split_tags: BTreeMap<String, Split>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<FundusRecord>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(DataError::DuplicateId(r.image_id.clone()));
            }
        }
        Ok(Self {
            records,
            split_tags: BTreeMap::new(),
            root: PathBuf::new(),
        })
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &FundusRecord) -> PathBuf {
        let p = Path::new(&record.image_uri);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(FundusRecord::label).collect()
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.split_tags.get(image_id).copied()
    }

    /// Records that take part in training: those tagged `train`, or every
    /// non-excluded record when no train tags exist.
    pub fn training_records(&self) -> Vec<&FundusRecord> {
        let any_train = self.split_tags.values().any(|s| *s == Split::Train);
        self.records
            .iter()
            .filter(|r| match self.split_of(&r.image_id) {
                Some(Split::Train) => true,
                None => !any_train,
                _ => false,
            })
            .collect()
    }

    /// Sub-manifest with the records whose ids pass `keep`, in input order.
    pub fn subset(&self, mut keep: impl FnMut(&FundusRecord) -> bool) -> DatasetManifest {
        let records: Vec<FundusRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let ids: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
        let split_tags = self
            .split_tags
            .iter()
            .filter(|(id, _)| ids.contains(id.as_str()))
            .map(|(id, s)| (id.clone(), *s))
            .collect();
        DatasetManifest {
            records,
            split_tags,
            root: self.root.clone(),
        }
    }

    pub fn with_split(&self, split: Split) -> DatasetManifest {
        self.subset(|r| self.split_of(&r.image_id) == Some(split))
    }

    /// Checks tag references and patient disjointness across train/val/test.
    pub fn validate(&self) -> Result<(), DataError> {
        let ids: HashSet<&str> = self.records.iter().map(|r| r.image_id.as_str()).collect();
        if ids.len() != self.records.len() {
            let mut seen = HashSet::new();
            for r in &self.records {
                if !seen.insert(r.image_id.as_str()) {
                    return Err(DataError::DuplicateId(r.image_id.clone()));
                }
            }
        }
        for id in self.split_tags.keys() {
            if !ids.contains(id.as_str()) {
                return Err(DataError::UnknownId(id.clone()));
            }
        }
        let mut patient_split: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            if let Some(s @ (Split::Train | Split::Val | Split::Test)) = self.split_of(&r.image_id) {
                if let Some(prev) = patient_split.insert(r.patient_id.as_str(), s) {
                    if prev != s {
                        return Err(DataError::PatientLeak(r.patient_id.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::from_reader(file)?.with_root(root))
    }

    /// Parses `image_id,image_uri,grade,patient_id,eye`. All malformed rows
    /// are collected and reported together with their line numbers.
    pub fn from_reader(reader: impl Read) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["image_id", "image_uri", "grade", "patient_id", "eye"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(DataError::MalformedRows(vec![(
                1,
                format!("header must be `{}`", expected.join(",")),
            )]));
        }
        let mut records = Vec::new();
        let mut bad = Vec::new();
        for row in rdr.records() {
            match row {
                Ok(row) => {
                    let line = row.position().map_or(0, |p| p.line());
                    match row.deserialize::<FundusRecord>(Some(&headers)) {
                        Ok(rec) => records.push(rec),
                        Err(e) => bad.push((line, e.to_string())),
                    }
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line());
                    bad.push((line, e.to_string()));
                }
            }
        }
        if !bad.is_empty() {
            return Err(DataError::MalformedRows(bad));
        }
        Self::new(records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.to_writer(file)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["image_id", "image_uri", "grade", "patient_id", "eye"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `image_id,split` for every tagged record, in manifest order.
    pub fn write_splits_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id", "split"])?;
        for r in &self.records {
            if let Some(s) = self.split_of(&r.image_id) {
                w.write_record([r.image_id.as_str(), s.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_splits_csv(&mut self, path: &Path) -> Result<(), DataError> {
        let mut rdr = csv::Reader::from_path(path)?;
        for row in rdr.records() {
            let row = row?;
            let id = row.get(0).unwrap_or_default().to_string();
            let split: Split = row.get(1).unwrap_or_default().parse()?;
            self.split_tags.insert(id, split);
        }
        self.validate()
    }
}

/// Proportion of labelled training data used.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LabelFraction(f64);

impl LabelFraction {
    pub fn new(fraction: f64) -> Result<Self, DataError> {
        if fraction > 0.0 && fraction <= 1.0 {
            Ok(Self(fraction))
        } else {
            Err(DataError::InvalidFraction(fraction))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// 0.1, 0.2, ..., 1.0
    pub fn default_grid() -> Vec<LabelFraction> {
        (1..=10).map(|i| LabelFraction(f64::from(i) / 10.0)).collect()
    }
}

impl TryFrom<f64> for LabelFraction {
    type Error = DataError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LabelFraction> for f64 {
    fn from(f: LabelFraction) -> f64 {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    fn validate(&self) -> Result<(), DataError> {
        let sum = self.train + self.val + self.test;
        let non_negative = [self.train, self.val, self.test].iter().all(|f| *f >= 0.0);
        if !non_negative || !sum.is_finite() || (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::SplitFractions(sum));
        }
        Ok(())
    }
}

struct PatientGroup<'a> {
    patient: &'a str,
    records: Vec<&'a FundusRecord>,
    referable: bool,
}

/// Groups records by patient in first-appearance order. A patient counts as
/// referable if any of their records is.
fn group_patients<'a>(records: impl IntoIterator<Item = &'a FundusRecord>) -> Vec<PatientGroup<'a>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<PatientGroup<'a>> = Vec::new();
    for r in records {
        let i = *index.entry(r.patient_id.as_str()).or_insert_with(|| {
            groups.push(PatientGroup {
                patient: r.patient_id.as_str(),
                records: Vec::new(),
                referable: false,
            });
            groups.len() - 1
        });
        groups[i].records.push(r);
        groups[i].referable |= r.referable();
    }
    groups
}

/// Assigns every patient to exactly one of train/val/test, stratified by
/// the patient's referable status. Within each class patients are visited
/// in seeded order and placed in the split with the largest record deficit.
pub fn make_patient_splits(
    manifest: &DatasetManifest,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    fractions.validate()?;
    if manifest.is_empty() {
        return Err(DataError::EmptyManifest);
    }
    let seeds = SeedTree::new(seed);
    let eligible = manifest
        .records
        .iter()
        .filter(|r| manifest.split_of(&r.image_id) != Some(Split::Excluded));
    let groups = group_patients(eligible);
    let splits = [Split::Train, Split::Val, Split::Test];
    let shares = [fractions.train, fractions.val, fractions.test];

    let mut out = manifest.clone();
    out.split_tags
        .retain(|_, s| *s == Split::Excluded);
    for class in [false, true] {
        let mut members: Vec<&PatientGroup> = groups.iter().filter(|g| g.referable == class).collect();
        let mut rng = seeds.rng(&format!("splits/class/{}", u8::from(class)));
        members.shuffle(&mut rng);
        let total: usize = members.iter().map(|g| g.records.len()).sum();
        let targets: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
        let mut assigned = [0usize; 3];
        for g in members {
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for (i, t) in targets.iter().enumerate() {
                if shares[i] == 0.0 {
                    continue;
                }
                let deficit = t - assigned[i] as f64;
                if deficit > best_deficit {
                    best_deficit = deficit;
                    best = i;
                }
            }
            assigned[best] += g.records.len();
            for r in &g.records {
                out.split_tags.insert(r.image_id.clone(), splits[best]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
}

/// Patient-level stratified k-fold over the training records.
pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    let groups = group_patients(manifest.training_records());
    if k < 2 || k > groups.len() {
        return Err(DataError::FoldCount {
            k,
            patients: groups.len(),
        });
    }
    let seeds = SeedTree::new(seed);
    let mut order: Vec<&PatientGroup> = Vec::with_capacity(groups.len());
    for class in [false, true] {
        let mut members: Vec<&PatientGroup> = groups.iter().filter(|g| g.referable == class).collect();
        members.shuffle(&mut seeds.rng(&format!("kfold/class/{}", u8::from(class))));
        order.extend(members);
    }
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    for (pos, g) in order.iter().enumerate() {
        fold_of.insert(g.patient, pos % k);
    }
    let training_ids: HashSet<&str> = manifest
        .training_records()
        .into_iter()
        .map(|r| r.image_id.as_str())
        .collect();
    let folds = (0..k)
        .map(|fold| {
            let pick = |want_val: bool| {
                let mut m = manifest.subset(|r| {
                    training_ids.contains(r.image_id.as_str())
                        && (fold_of[r.patient_id.as_str()] == fold) == want_val
                });
                let tag = if want_val { Split::Val } else { Split::Train };
                m.split_tags = m.records.iter().map(|r| (r.image_id.clone(), tag)).collect();
                m
            };
            Fold {
                train: pick(false),
                val: pick(true),
            }
        })
        .collect();
    Ok(folds)
}

/// Per-class record counts for a stratified subsample of `total` records
/// totalling `ceil(fraction * total)`.
fn stratified_counts(class_sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let n: usize = class_sizes.iter().sum();
    let target = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let target = target.min(n);
    let exact = class_sizes.map(|c| fraction * c as f64);
    let mut counts = exact.map(|e| e.round() as usize);
    for (c, size) in counts.iter_mut().zip(class_sizes) {
        *c = (*c).min(size);
    }
    while counts.iter().sum::<usize>() < target {
        let i = (0..2)
            .filter(|&i| counts[i] < class_sizes[i])
            .max_by(|&a, &b| (exact[a] - counts[a] as f64).total_cmp(&(exact[b] - counts[b] as f64)).then(b.cmp(&a)))
            .expect("target never exceeds available records");
        counts[i] += 1;
    }
    while counts.iter().sum::<usize>() > target {
        let i = (0..2)
            .filter(|&i| counts[i] > 0)
            .min_by(|&a, &b| (exact[a] - counts[a] as f64).total_cmp(&(exact[b] - counts[b] as f64)).then(a.cmp(&b)))
            .expect("positive total has a positive class");
        counts[i] -= 1;
    }
    counts
}

/// Keeps `ceil(fraction * n)` of the `n` training records, stratified by
/// referable label. Whole patients are taken while they fit; the remainder
/// is filled from the next patient in seeded order. Non-training records
/// are left untouched.
pub fn subsample_labeled(
    manifest: &DatasetManifest,
    fraction: LabelFraction,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let training = manifest.training_records();
    if training.is_empty() {
        return Err(DataError::EmptyTrainingSplit);
    }
    if fraction.value() >= 1.0 {
        return Ok(manifest.clone());
    }
    let seeds = SeedTree::new(seed);
    let mut class_sizes = [0usize; 2];
    for r in &training {
        class_sizes[r.label() as usize] += 1;
    }
    let counts = stratified_counts(class_sizes, fraction.value());

    let training_ids: HashSet<&str> = training.iter().map(|r| r.image_id.as_str()).collect();
    let mut keep: BTreeSet<&str> = BTreeSet::new();
    for class in 0..2u8 {
        // Units are (patient, class) groups so a mixed-grade patient splits
        // cleanly along the stratification boundary.
        let members = training.iter().copied().filter(|r| r.label() == class);
        let mut units: Vec<Vec<&FundusRecord>> = group_patients(members).into_iter().map(|g| g.records).collect();
        units.shuffle(&mut seeds.rng(&format!("subsample/class/{class}")));
        let mut remaining = counts[class as usize];
        let mut leftovers = Vec::new();
        for unit in units {
            if unit.len() <= remaining {
                remaining -= unit.len();
                keep.extend(unit.iter().map(|r| r.image_id.as_str()));
            } else {
                leftovers.push(unit);
            }
        }
        for r in leftovers.into_iter().flatten() {
            if remaining == 0 {
                break;
            }
            keep.insert(r.image_id.as_str());
            remaining -= 1;
        }
    }
    Ok(manifest.subset(|r| !training_ids.contains(r.image_id.as_str()) || keep.contains(r.image_id.as_str())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, patient: usize, grade: i64) -> FundusRecord {
        FundusRecord {
            image_id: format!("img{id:04}"),
            image_uri: format!("images/img{id:04}.png"),
            grade: DrGrade::new(grade).unwrap(),
            patient_id: format!("p{patient:04}"),
            eye: if id.is_multiple_of(2) { Eye::Right } else { Eye::Left },
        }
    }

    /// `patients` patients with two eyes each; every `ref_every`-th patient
    /// is referable.
    fn paired_manifest(patients: usize, ref_every: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for p in 0..patients {
            let grade = if p % ref_every == 0 { 3 } else { 0 };
            records.push(rec(2 * p, p, grade));
            records.push(rec(2 * p + 1, p, grade));
        }
        DatasetManifest::new(records).unwrap()
    }

    #[test]
    fn referable_threshold() {
        assert!(!grade_to_referable(DrGrade::new(0).unwrap()));
        assert!(!grade_to_referable(DrGrade::new(1).unwrap()));
        assert!(grade_to_referable(DrGrade::new(2).unwrap()));
        assert!(grade_to_referable(DrGrade::new(4).unwrap()));
        assert!(DrGrade::new(5).is_err());
        assert!(DrGrade::new(-1).is_err());
    }

    #[test]
    fn referable_is_monotone() {
        for a in 0..=4 {
            for b in 0..=a {
                let (ga, gb) = (DrGrade::new(a).unwrap(), DrGrade::new(b).unwrap());
                assert!(grade_to_referable(ga) >= grade_to_referable(gb));
            }
        }
    }

    #[test]
    fn csv_round_trip_and_malformed_rows() {
        let m = paired_manifest(3, 2);
        let mut buf = Vec::new();
        m.to_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,image_uri,grade,patient_id,eye\n"));
        assert!(text.contains(",OD\n"));
        let back = DatasetManifest::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.records, m.records);

        let bad = "image_id,image_uri,grade,patient_id,eye\na,a.png,2,p1,OD\nb,b.png,7,p1,OS\nc,c.png,1,p2,X\n";
        match DatasetManifest::from_reader(bad.as_bytes()) {
            Err(DataError::MalformedRows(rows)) => {
                assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3, 4]);
            }
            other => panic!("expected malformed rows, got {other:?}"),
        }
        let unknown_eye = "image_id,image_uri,grade,patient_id,eye\na,a.png,2,p1,U\n";
        let m = DatasetManifest::from_reader(unknown_eye.as_bytes()).unwrap();
        assert_eq!(m.records[0].eye, Eye::Unknown);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = rec(1, 1, 0);
        assert!(matches!(DatasetManifest::new(vec![r.clone(), r]), Err(DataError::DuplicateId(_))));
    }

    #[test]
    fn patient_splits_are_disjoint() {
        let m = paired_manifest(10, 2);
        let fr = SplitFractions { train: 0.8, val: 0.1, test: 0.1 };
        let s = make_patient_splits(&m, fr, 7).unwrap();
        assert_eq!(s.split_tags.len(), 20);
        s.validate().unwrap();
    }

    #[test]
    fn single_patient_lands_in_one_split() {
        let m = DatasetManifest::new(vec![rec(0, 0, 0), rec(1, 0, 0), rec(2, 0, 0)]).unwrap();
        let fr = SplitFractions { train: 0.5, val: 0.25, test: 0.25 };
        let s = make_patient_splits(&m, fr, 1).unwrap();
        let tags: HashSet<Split> = s.split_tags.values().copied().collect();
        assert_eq!(tags.len(), 1);
    }

    #[test]
    fn split_preserves_class_share() {
        // 50 patients x 2 eyes, classes balanced.
        let m = paired_manifest(50, 2);
        let fr = SplitFractions { train: 0.8, val: 0.1, test: 0.1 };
        let s = make_patient_splits(&m, fr, 3).unwrap();
        let train = s.with_split(Split::Train);
        let share = train.labels().iter().filter(|&&l| l == 1).count() as f64 / train.len() as f64;
        let global = m.labels().iter().filter(|&&l| l == 1).count() as f64 / m.len() as f64;
        assert!((share - global).abs() <= 0.02, "share {share} vs {global}");
    }

    #[test]
    fn split_fraction_errors() {
        let m = paired_manifest(4, 2);
        let bad = SplitFractions { train: 0.8, val: 0.1, test: 0.2 };
        assert!(matches!(make_patient_splits(&m, bad, 0), Err(DataError::SplitFractions(_))));
        let ok = SplitFractions { train: 0.8, val: 0.1, test: 0.1 };
        let empty = DatasetManifest::default();
        assert!(matches!(make_patient_splits(&empty, ok, 0), Err(DataError::EmptyManifest)));
    }

    #[test]
    fn kfold_equal_partition() {
        let m = paired_manifest(10, 2);
        let folds = kfold_split(&m, 5, 11).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            let patients: HashSet<&str> = f.val.records.iter().map(|r| r.patient_id.as_str()).collect();
            assert_eq!(patients.len(), 2);
            assert_eq!(f.train.len() + f.val.len(), 20);
        }
        assert_eq!(folds, kfold_split(&m, 5, 11).unwrap());
    }

    #[test]
    fn kfold_uneven_sizes() {
        let m = paired_manifest(11, 3);
        let folds = kfold_split(&m, 5, 2).unwrap();
        let sizes: Vec<usize> = folds
            .iter()
            .map(|f| f.val.records.iter().map(|r| r.patient_id.as_str()).collect::<HashSet<_>>().len())
            .collect();
        assert!(sizes.iter().all(|s| *s == 2 || *s == 3), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 11);
    }

    #[test]
    fn kfold_too_many_folds() {
        let m = paired_manifest(3, 2);
        assert!(matches!(kfold_split(&m, 4, 0), Err(DataError::FoldCount { .. })));
        assert!(matches!(kfold_split(&m, 1, 0), Err(DataError::FoldCount { .. })));
    }

    #[test]
    fn subsample_identity_at_full_fraction() {
        let m = paired_manifest(10, 2);
        let s = subsample_labeled(&m, LabelFraction::new(1.0).unwrap(), 5).unwrap();
        assert_eq!(s, m);
    }

    #[test]
    fn subsample_stratified_rounding() {
        // 100 single-image patients, 30 referable.
        let records = (0..100).map(|i| rec(i, i, if i < 30 { 2 } else { 1 })).collect();
        let m = DatasetManifest::new(records).unwrap();
        let s = subsample_labeled(&m, LabelFraction::new(0.1).unwrap(), 9).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.labels().iter().filter(|&&l| l == 1).count(), 3);
    }

    #[test]
    fn stratified_counts_match_curated_training_set() {
        // 57,722 non-referable + 13,247 referable at 10%.
        let counts = stratified_counts([57_722, 13_247], 0.1);
        assert_eq!(counts.iter().sum::<usize>(), 7_097);
        assert_eq!(counts, [5_772, 1_325]);
    }

    #[test]
    fn fraction_validation() {
        assert!(LabelFraction::new(0.0).is_err());
        assert!(LabelFraction::new(1.5).is_err());
        assert!(LabelFraction::new(-0.1).is_err());
        let grid = LabelFraction::default_grid();
        assert_eq!(grid.len(), 10);
        assert_eq!(grid[0].value(), 0.1);
        assert_eq!(grid[9].value(), 1.0);
    }

    #[test]
    fn subsample_keeps_patients_whole_when_possible() {
        let m = paired_manifest(20, 2);
        let s = subsample_labeled(&m, LabelFraction::new(0.5).unwrap(), 4).unwrap();
        assert_eq!(s.len(), 20);
        let mut per_patient: HashMap<&str, usize> = HashMap::new();
        for r in &s.records {
            *per_patient.entry(r.patient_id.as_str()).or_default() += 1;
        }
        assert!(per_patient.values().all(|&c| c == 2));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_manifest() -> impl Strategy<Value = DatasetManifest> {
            proptest::collection::vec((0usize..30, 0i64..5), 1..80).prop_map(|rows| {
                let records = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (p, g))| rec(i, p, g))
                    .collect();
                DatasetManifest::new(records).unwrap()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            #[test]
            fn splits_never_leak_patients(m in arb_manifest(), seed in any::<u64>()) {
                let fr = SplitFractions { train: 0.7, val: 0.15, test: 0.15 };
                let s = make_patient_splits(&m, fr, seed).unwrap();
                prop_assert!(s.validate().is_ok());
                prop_assert_eq!(s.split_tags.len(), m.len());
            }

            #[test]
            fn kfold_partitions_patients(m in arb_manifest(), seed in any::<u64>(), k in 2usize..6) {
                let patients: HashSet<&str> = m.records.iter().map(|r| r.patient_id.as_str()).collect();
                prop_assume!(patients.len() >= k);
                let folds = kfold_split(&m, k, seed).unwrap();
                let mut seen: HashSet<String> = HashSet::new();
                for f in &folds {
                    let val: HashSet<String> = f.val.records.iter().map(|r| r.patient_id.clone()).collect();
                    let train: HashSet<String> = f.train.records.iter().map(|r| r.patient_id.clone()).collect();
                    prop_assert!(val.is_disjoint(&train));
                    for p in val {
                        prop_assert!(seen.insert(p));
                    }
                }
                prop_assert_eq!(seen.len(), patients.len());
            }

            #[test]
            fn subsample_is_deterministic_subset(m in arb_manifest(), seed in any::<u64>(), f in 0.05f64..1.0) {
                let frac = LabelFraction::new(f).unwrap();
                let a = subsample_labeled(&m, frac, seed).unwrap();
                let b = subsample_labeled(&m, frac, seed).unwrap();
                prop_assert_eq!(&a, &b);
                let ids: HashSet<&str> = m.records.iter().map(|r| r.image_id.as_str()).collect();
                prop_assert!(a.records.iter().all(|r| ids.contains(r.image_id.as_str())));
                let expected = ((f * m.len() as f64) - 1e-9).ceil() as usize;
                prop_assert_eq!(a.len(), expected);
            }
        }
    }
}
