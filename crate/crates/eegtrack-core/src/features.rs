//! Forced-alignment ingestion and the onset-based speech representations.
//!
//! Alignments arrive as interval files (tier, label, start, end). From the
//! phone tier we derive eight sampled binary representations: VAD marks speech
//! versus silence for every sample; the onset schemes place a single 1 at each
//! qualifying unit's start sample, which preserves the duration between units.
//! Grouping is hierarchical: the 37 narrow phonetic classes collapse to 5 broad
//! classes, to vowel/consonant, and finally to bare phone onsets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NPC_CLASSES: usize = 37;

/// Annotation tier of an alignment interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Phone,
    Syllable,
}

impl Tier {
    fn parse(s: &str) -> Result<Tier> {
        match s {
            "phone" => Ok(Tier::Phone),
            "syllable" => Ok(Tier::Syllable),
            other => Err(Error::format(format!("unknown tier {other:?}"))),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Tier::Phone => "phone",
            Tier::Syllable => "syllable",
        }
    }
}

/// One labelled interval on a tier. Intervals are half-open `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub tier: Tier,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Interval annotations from forced alignment, sorted per tier.
#[derive(Debug, Clone)]
pub struct AlignmentTrack {
    intervals: Vec<Interval>,
    silence_labels: HashSet<String>,
    warnings: Vec<String>,
}

pub fn default_silence_labels() -> HashSet<String> {
    ["sil".to_string()].into_iter().collect()
}

impl AlignmentTrack {
    /// Build a track, sorting intervals per tier and rejecting overlaps.
    pub fn new(intervals: Vec<Interval>, silence_labels: HashSet<String>) -> Result<Self> {
        let mut warnings = Vec::new();
        for iv in &intervals {
            if !(iv.start_s.is_finite() && iv.end_s.is_finite()) || iv.start_s < 0.0 {
                return Err(Error::invalid(format!(
                    "interval {:?} has invalid bounds [{}, {})",
                    iv.label, iv.start_s, iv.end_s
                )));
            }
            if iv.end_s <= iv.start_s {
                return Err(Error::invalid(format!(
                    "interval {:?} ends at {} before it starts at {}",
                    iv.label, iv.end_s, iv.start_s
                )));
            }
        }
        let mut sorted = intervals.clone();
        sorted.sort_by(|a, b| {
            (a.tier as u8, a.start_s)
                .partial_cmp(&(b.tier as u8, b.start_s))
                .expect("finite start times")
        });
        if sorted != intervals {
            warnings.push("intervals were out of order and have been sorted".to_string());
        }
        for w in sorted.windows(2) {
            if w[0].tier == w[1].tier && w[1].start_s < w[0].end_s {
                return Err(Error::invalid(format!(
                    "overlapping intervals on tier {}: {:?}@{} and {:?}@{}",
                    w[0].tier.as_str(),
                    w[0].label,
                    w[0].start_s,
                    w[1].label,
                    w[1].start_s
                )));
            }
        }
        Ok(AlignmentTrack { intervals: sorted, silence_labels, warnings })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn tier(&self, tier: Tier) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(move |iv| iv.tier == tier)
    }

    pub fn is_silence(&self, label: &str) -> bool {
        self.silence_labels.contains(label)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Latest end time over all tiers, 0 for an empty track.
    pub fn duration_s(&self) -> f64 {
        self.intervals.iter().map(|iv| iv.end_s).fold(0.0, f64::max)
    }

    pub fn has_tier(&self, tier: Tier) -> bool {
        self.tier(tier).next().is_some()
    }
}

pub const ALIGNMENT_HEADER: &str = "tier\tlabel\tstart_s\tend_s";

/// Parse an alignment TSV (`tier\tlabel\tstart_s\tend_s`).
pub fn load_alignment(path: &Path) -> Result<AlignmentTrack> {
    let text = std::fs::read_to_string(path)?;
    parse_alignment(&text)
}

pub fn parse_alignment(text: &str) -> Result<AlignmentTrack> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == ALIGNMENT_HEADER => {}
        Some((_, other)) => {
            return Err(Error::format(format!(
                "expected header {ALIGNMENT_HEADER:?}, found {other:?}"
            )))
        }
        None => return Err(Error::format("empty alignment file")),
    }
    let mut intervals = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(format!(
                "line {}: expected 4 tab-separated fields, found {}",
                i + 1,
                fields.len()
            )));
        }
        let tier = Tier::parse(fields[0])
            .map_err(|e| Error::format(format!("line {}: {e}", i + 1)))?;
        let start_s: f64 = fields[2]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad start {:?}", i + 1, fields[2])))?;
        let end_s: f64 = fields[3]
            .parse()
            .map_err(|_| Error::format(format!("line {}: bad end {:?}", i + 1, fields[3])))?;
        intervals.push(Interval { tier, label: fields[1].to_string(), start_s, end_s });
    }
    AlignmentTrack::new(intervals, default_silence_labels())
}

/// Write a track in the same TSV format `load_alignment` reads.
pub fn write_alignment(path: &Path, track: &AlignmentTrack) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{ALIGNMENT_HEADER}")?;
    for iv in track.intervals() {
        writeln!(w, "{}\t{}\t{}\t{}", iv.tier.as_str(), iv.label, iv.start_s, iv.end_s)?;
    }
    Ok(())
}

/// Broad phonetic class: two vowel categories by duration, three consonant
/// categories by manner of articulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BpcClass {
    ShortVowel,
    LongVowel,
    Plosive,
    Fricative,
    NasalApproximant,
}

impl BpcClass {
    pub const ALL: [BpcClass; 5] = [
        BpcClass::ShortVowel,
        BpcClass::LongVowel,
        BpcClass::Plosive,
        BpcClass::Fricative,
        BpcClass::NasalApproximant,
    ];

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap()
    }

    pub fn name(&self) -> &'static str {
        match self {
            BpcClass::ShortVowel => "short_vowel",
            BpcClass::LongVowel => "long_vowel",
            BpcClass::Plosive => "plosive",
            BpcClass::Fricative => "fricative",
            BpcClass::NasalApproximant => "nasal_approximant",
        }
    }

    pub fn is_vowel(&self) -> bool {
        matches!(self, BpcClass::ShortVowel | BpcClass::LongVowel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneClass {
    pub npc_index: usize,
    pub is_vowel: bool,
    pub bpc_class: BpcClass,
}

/// Label-to-class mapping for the narrow phonetic classes.
#[derive(Debug, Clone)]
pub struct PhoneInventory {
    entries: BTreeMap<String, PhoneClass>,
    npc_dim_names: Vec<String>,
}

impl PhoneInventory {
    pub fn new(entries: BTreeMap<String, PhoneClass>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("phone inventory is empty"));
        }
        let mut by_index: HashMap<usize, PhoneClass> = HashMap::new();
        for (label, class) in &entries {
            if class.npc_index >= NPC_CLASSES {
                return Err(Error::invalid(format!(
                    "label {label:?}: npc_index {} out of range 0..{NPC_CLASSES}",
                    class.npc_index
                )));
            }
            if class.is_vowel != class.bpc_class.is_vowel() {
                return Err(Error::invalid(format!(
                    "label {label:?}: is_vowel={} contradicts bpc_class {}",
                    class.is_vowel,
                    class.bpc_class.name()
                )));
            }
            match by_index.entry(class.npc_index) {
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(*class);
                }
                std::collections::hash_map::Entry::Occupied(e) => {
                    if e.get() != class {
                        return Err(Error::invalid(format!(
                            "npc_index {} is shared by labels with different classes",
                            class.npc_index
                        )));
                    }
                }
            }
        }
        // a class dimension is named by its labels (sorted, joined with '+')
        let mut names: Vec<Vec<&str>> = vec![Vec::new(); NPC_CLASSES];
        for (label, class) in &entries {
            names[class.npc_index].push(label);
        }
        let npc_dim_names = names
            .into_iter()
            .enumerate()
            .map(|(i, mut labels)| {
                if labels.is_empty() {
                    format!("npc{i:02}")
                } else {
                    labels.sort_unstable();
                    labels.join("+")
                }
            })
            .collect();
        Ok(PhoneInventory { entries, npc_dim_names })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: BTreeMap<String, PhoneClass> = serde_json::from_str(text)?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The 37-class mapping shipped with the crate.
    pub fn default_37() -> Self {
        Self::from_json(include_str!("../data/default_inventory.json"))
            .expect("shipped inventory is valid")
    }

    pub fn lookup(&self, label: &str) -> Option<&PhoneClass> {
        self.entries.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn npc_dim_names(&self) -> &[String] {
        &self.npc_dim_names
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("inventory serializes")
    }
}

/// The eight speech representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Vad,
    Npc,
    Bpc,
    Vc,
    Phone,
    Vowel,
    Consonant,
    Syllable,
}

impl Scheme {
    pub const ALL: [Scheme; 8] = [
        Scheme::Vad,
        Scheme::Npc,
        Scheme::Bpc,
        Scheme::Vc,
        Scheme::Phone,
        Scheme::Vowel,
        Scheme::Consonant,
        Scheme::Syllable,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Vad => "vad",
            Scheme::Npc => "npc",
            Scheme::Bpc => "bpc",
            Scheme::Vc => "vc",
            Scheme::Phone => "phone",
            Scheme::Vowel => "vowel",
            Scheme::Consonant => "consonant",
            Scheme::Syllable => "syllable",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        Scheme::ALL
            .into_iter()
            .find(|sch| sch.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?}")))
    }

    /// Dimensionality before VAD is prepended.
    pub fn n_dims(&self) -> usize {
        match self {
            Scheme::Npc => NPC_CLASSES,
            Scheme::Bpc => 5,
            Scheme::Vc => 2,
            _ => 1,
        }
    }
}

/// Sampled binary speech representation, `[n_samples x n_dims]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
    fs: f64,
    dim_names: Vec<String>,
    scheme: Scheme,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, fs: f64, dim_names: Vec<String>, scheme: Scheme) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if data.ncols() != dim_names.len() {
            return Err(Error::shape(format!(
                "{} dim names for {} columns",
                dim_names.len(),
                data.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for name in &dim_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate dimension name {name:?}")));
            }
        }
        if !data.iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::invalid("feature values must be exactly 0 or 1"));
        }
        Ok(FeatureMatrix { data, fs, dim_names, scheme })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn slice_samples(&self, start: usize, end: usize) -> FeatureMatrix {
        assert!(start <= end && end <= self.n_samples(), "slice out of range");
        FeatureMatrix {
            data: self.data.slice(ndarray::s![start..end, ..]).to_owned(),
            fs: self.fs,
            dim_names: self.dim_names.clone(),
            scheme: self.scheme,
        }
    }
}

/// Speech-versus-silence indicator: sample `k` is 1 iff time `k/fs` lies inside
/// a non-silence phone interval.
pub fn encode_vad(track: &AlignmentTrack, fs: f64, n_samples: usize) -> Result<FeatureMatrix> {
    let needed = (track.duration_s() * fs).round() as usize;
    if needed > n_samples {
        return Err(Error::invalid(format!(
            "track covers {needed} samples at {fs} Hz but only {n_samples} requested"
        )));
    }
    let mut data = Array2::zeros((n_samples, 1));
    for iv in track.tier(Tier::Phone) {
        if track.is_silence(&iv.label) {
            continue;
        }
        // first sample with k/fs >= start, last with k/fs < end
        let k0 = (iv.start_s * fs).ceil() as usize;
        let k1 = ((iv.end_s * fs).ceil() as usize).min(n_samples);
        for k in k0..k1 {
            data[[k, 0]] = 1.0;
        }
    }
    FeatureMatrix::new(data, fs, vec!["vad".to_string()], Scheme::Vad)
}

/// Outcome of onset encoding, with the clip/collision bookkeeping exposed.
#[derive(Debug, Clone)]
pub struct OnsetEncoding {
    pub features: FeatureMatrix,
    /// Onsets that mapped onto a sample already set in the same dimension.
    pub collisions: usize,
    /// Onsets whose rounded sample index fell outside `[0, n_samples)`.
    pub clipped: usize,
}

/// Onset sample index: `floor(0.5 + start_s * fs)`, clipped to the valid range.
fn onset_index(start_s: f64, fs: f64, n_samples: usize) -> (usize, bool) {
    let raw = (0.5 + start_s * fs).floor();
    let idx = raw.max(0.0) as usize;
    if idx >= n_samples {
        (n_samples - 1, true)
    } else {
        (idx, false)
    }
}

/// Place a single 1 at each qualifying unit's start sample in the dimension
/// selected by `scheme`.
pub fn encode_onsets(
    track: &AlignmentTrack,
    inventory: &PhoneInventory,
    scheme: Scheme,
    fs: f64,
    n_samples: usize,
) -> Result<OnsetEncoding> {
    if scheme == Scheme::Vad {
        return Err(Error::invalid("VAD is not an onset scheme; use encode_vad"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("cannot encode onsets into zero samples"));
    }
    let tier = if scheme == Scheme::Syllable { Tier::Syllable } else { Tier::Phone };
    if scheme == Scheme::Syllable && !track.has_tier(Tier::Syllable) && track.has_tier(Tier::Phone)
    {
        return Err(Error::invalid("track has no syllable tier"));
    }

    let dim_names: Vec<String> = match scheme {
        Scheme::Npc => inventory.npc_dim_names().to_vec(),
        Scheme::Bpc => BpcClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        Scheme::Vc => vec!["vowel".to_string(), "consonant".to_string()],
        Scheme::Phone => vec!["phone".to_string()],
        Scheme::Vowel => vec!["vowel".to_string()],
        Scheme::Consonant => vec!["consonant".to_string()],
        Scheme::Syllable => vec!["syllable".to_string()],
        Scheme::Vad => unreachable!(),
    };

    let mut data = Array2::zeros((n_samples, dim_names.len()));
    let mut collisions = 0usize;
    let mut clipped = 0usize;
    for iv in track.tier(tier) {
        if track.is_silence(&iv.label) {
            continue;
        }
        let dim = match scheme {
            Scheme::Syllable => Some(0),
            _ => {
                let class = inventory.lookup(&iv.label).ok_or_else(|| {
                    Error::invalid(format!("phone label {:?} is not in the inventory", iv.label))
                })?;
                match scheme {
                    Scheme::Npc => Some(class.npc_index),
                    Scheme::Bpc => Some(class.bpc_class.index()),
                    Scheme::Vc => Some(if class.is_vowel { 0 } else { 1 }),
                    Scheme::Phone => Some(0),
                    Scheme::Vowel => class.is_vowel.then_some(0),
                    Scheme::Consonant => (!class.is_vowel).then_some(0),
                    _ => unreachable!(),
                }
            }
        };
        let Some(dim) = dim else { continue };
        let (idx, was_clipped) = onset_index(iv.start_s, fs, n_samples);
        if was_clipped {
            clipped += 1;
        }
        if data[[idx, dim]] == 1.0 {
            collisions += 1;
        } else {
            data[[idx, dim]] = 1.0;
        }
    }
    Ok(OnsetEncoding {
        features: FeatureMatrix::new(data, fs, dim_names, scheme)?,
        collisions,
        clipped,
    })
}

/// Add VAD as the first dimension of a representation.
pub fn prepend_vad(features: &FeatureMatrix, vad: &FeatureMatrix) -> Result<FeatureMatrix> {
    if vad.scheme() != Scheme::Vad || vad.n_dims() != 1 {
        return Err(Error::invalid("second argument must be a 1-dimensional VAD matrix"));
    }
    if features.n_samples() != vad.n_samples() {
        return Err(Error::shape(format!(
            "sample count mismatch: features {} vs vad {}",
            features.n_samples(),
            vad.n_samples()
        )));
    }
    if features.fs() != vad.fs() {
        return Err(Error::shape("sampling rate mismatch between features and vad"));
    }
    let mut dim_names = Vec::with_capacity(features.n_dims() + 1);
    let lead = if features.dim_names().iter().any(|n| n == "vad") { "vad0" } else { "vad" };
    dim_names.push(lead.to_string());
    dim_names.extend(features.dim_names().iter().cloned());
    let data = ndarray::concatenate(
        ndarray::Axis(1),
        &[vad.data().view(), features.data().view()],
    )
    .expect("sample counts checked");
    FeatureMatrix::new(data, features.fs(), dim_names, features.scheme())
}
