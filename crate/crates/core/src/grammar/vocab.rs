use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::quantizer::BinSpec;

/// Padding token. Always ID 0.
pub const PAD: u32 = 0;

pub const MANIFEST_FORMAT: &str = "pacetok-vocab";
pub const MANIFEST_VERSION: u32 = 1;

/// Block fields in emission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Temperature,
    Humidity,
    Wind,
    FeelsLike,
    Conditions,
    Gender,
    Age,
    Distance,
    Pace,
    WeeksSinceLast,
    WeeksToTarget,
}

impl Field {
    pub const BLOCK: [Field; 11] = [
        Field::Temperature,
        Field::Humidity,
        Field::Wind,
        Field::FeelsLike,
        Field::Conditions,
        Field::Gender,
        Field::Age,
        Field::Distance,
        Field::Pace,
        Field::WeeksSinceLast,
        Field::WeeksToTarget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Temperature => "temperature_c",
            Field::Humidity => "humidity_pct",
            Field::Wind => "wind_kph",
            Field::FeelsLike => "feels_like_c",
            Field::Conditions => "conditions",
            Field::Gender => "gender",
            Field::Age => "age",
            Field::Distance => "distance",
            Field::Pace => "pace",
            Field::WeeksSinceLast => "weeks_since_last",
            Field::WeeksToTarget => "weeks_to_target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalDistance {
    pub label: String,
    pub meters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SectionKind {
    /// Balanced bins over a continuous value.
    Quantized { bins: BinSpec<f64> },
    Categorical { categories: Vec<String> },
    /// Integer weeks `0..=cap`; larger values clamp to `cap`.
    Cadence { cap: u32 },
    /// Age buckets `[0, width), [width, 2·width), …`, the last one open-ended at `cap_years`.
    AgeBuckets { width: u32, cap_years: u32 },
    /// Canonical race distances matched within `tolerance` (relative), plus a trailing `other`.
    Distance { distances: Vec<CanonicalDistance>, tolerance: f64 },
}

impl SectionKind {
    fn token_count(&self) -> Result<u32> {
        let n = match self {
            SectionKind::Quantized { bins } => {
                bins.validate()?;
                bins.len()
            }
            SectionKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(Error::invalid("empty categorical set"));
                }
                let mut seen = categories.clone();
                seen.sort();
                seen.dedup();
                if seen.len() != categories.len() {
                    return Err(Error::invalid("duplicate category"));
                }
                categories.len()
            }
            SectionKind::Cadence { cap } => *cap as usize + 1,
            SectionKind::AgeBuckets { width, cap_years } => {
                if *width == 0 {
                    return Err(Error::invalid("age bucket width must be positive"));
                }
                (*cap_years / *width) as usize + 1
            }
            SectionKind::Distance { distances, tolerance } => {
                if !(*tolerance >= 0.0) || distances.iter().any(|d| !(d.meters > 0.0)) {
                    return Err(Error::invalid("distance section needs positive meters and tolerance >= 0"));
                }
                distances.len() + 1
            }
        };
        u32::try_from(n).map_err(|_| Error::invalid("section too large"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub start: u32,
    pub len: u32,
    #[serde(flatten)]
    pub kind: SectionKind,
}

impl Section {
    pub fn contains(&self, id: u32) -> bool {
        id >= self.start && id < self.start + self.len
    }

    pub fn id(&self, index: u32) -> u32 {
        debug_assert!(index < self.len);
        self.start + index
    }
}

/// Settings for the standard event grammar.
#[derive(Debug, Clone)]
pub struct GrammarSpec {
    pub temperature: BinSpec<f64>,
    pub humidity: BinSpec<f64>,
    pub wind: BinSpec<f64>,
    pub feels_like: BinSpec<f64>,
    pub pace: BinSpec<f64>,
    pub conditions: Vec<String>,
    pub genders: Vec<String>,
    pub age_bucket_years: u32,
    pub age_cap_years: u32,
    pub distances: Vec<CanonicalDistance>,
    pub distance_tolerance: f64,
    pub cadence_cap: u32,
}

pub fn default_conditions() -> Vec<String> {
    ["rain", "clear", "other"].iter().map(|s| s.to_string()).collect()
}

pub fn default_genders() -> Vec<String> {
    ["F", "M", "X"].iter().map(|s| s.to_string()).collect()
}

pub fn default_distances() -> Vec<CanonicalDistance> {
    [("5k", 5000.0), ("10k", 10000.0), ("half", 21097.5), ("marathon", 42195.0)]
        .iter()
        .map(|&(label, meters)| CanonicalDistance { label: label.to_string(), meters })
        .collect()
}

/// Disjoint token-ID ranges for every grammar field, with PAD = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub format: String,
    pub version: u32,
    pub sections: Vec<Section>,
    pub size: u32,
}

impl Vocabulary {
    /// Assigns contiguous ID ranges in the given order, starting after PAD.
    pub fn build(sections: Vec<(String, SectionKind)>) -> Result<Self> {
        let mut out: Vec<Section> = Vec::with_capacity(sections.len());
        let mut next = PAD + 1;
        for (name, kind) in sections {
            if out.iter().any(|s| s.name == name) {
                return Err(Error::invalid(format!("duplicate feature name {name}")));
            }
            let len = kind
                .token_count()
                .map_err(|e| Error::invalid(format!("section {name}: {e}")))?;
            out.push(Section { name, start: next, len, kind });
            next = next
                .checked_add(len)
                .ok_or_else(|| Error::invalid("vocabulary exceeds u32 ID space"))?;
        }
        Ok(Vocabulary {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            sections: out,
            size: next,
        })
    }

    pub fn for_grammar(spec: &GrammarSpec) -> Result<Self> {
        let q = |bins: &BinSpec<f64>| SectionKind::Quantized { bins: bins.clone() };
        let sections = vec![
            (Field::Temperature, q(&spec.temperature)),
            (Field::Humidity, q(&spec.humidity)),
            (Field::Wind, q(&spec.wind)),
            (Field::FeelsLike, q(&spec.feels_like)),
            (Field::Conditions, SectionKind::Categorical { categories: spec.conditions.clone() }),
            (Field::Gender, SectionKind::Categorical { categories: spec.genders.clone() }),
            (
                Field::Age,
                SectionKind::AgeBuckets { width: spec.age_bucket_years, cap_years: spec.age_cap_years },
            ),
            (
                Field::Distance,
                SectionKind::Distance { distances: spec.distances.clone(), tolerance: spec.distance_tolerance },
            ),
            (Field::Pace, q(&spec.pace)),
            (Field::WeeksSinceLast, SectionKind::Cadence { cap: spec.cadence_cap }),
            (Field::WeeksToTarget, SectionKind::Cadence { cap: spec.cadence_cap }),
        ];
        Self::build(sections.into_iter().map(|(f, k)| (f.name().to_string(), k)).collect())
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("vocabulary has no section {name}")))
    }

    pub fn field(&self, field: Field) -> Result<&Section> {
        self.section(field.name())
    }

    /// Checks that every grammar field is present.
    pub fn check_grammar(&self) -> Result<()> {
        for f in Field::BLOCK {
            self.field(f)?;
        }
        Ok(())
    }

    pub fn bins(&self, field: Field) -> Result<&BinSpec<f64>> {
        match &self.field(field)?.kind {
            SectionKind::Quantized { bins } => Ok(bins),
            _ => Err(Error::invalid(format!("{} is not a quantized field", field.name()))),
        }
    }

    pub fn pace_bins(&self) -> Result<&BinSpec<f64>> {
        self.bins(Field::Pace)
    }

    /// Token for a continuous value; out-of-support is an error.
    pub fn encode_quantized(&self, name: &str, x: f64) -> Result<u32> {
        let s = self.section(name)?;
        match &s.kind {
            SectionKind::Quantized { bins } => Ok(s.id(bins.locate_in_support(x)? as u32)),
            _ => Err(Error::invalid(format!("{name} is not quantized"))),
        }
    }

    pub fn encode_categorical(&self, name: &str, value: &str) -> Result<u32> {
        let s = self.section(name)?;
        match &s.kind {
            SectionKind::Categorical { categories } => categories
                .iter()
                .position(|c| c == value)
                .map(|i| s.id(i as u32))
                .ok_or_else(|| Error::invalid(format!("{name}: unknown category {value:?}"))),
            _ => Err(Error::invalid(format!("{name} is not categorical"))),
        }
    }

    pub fn encode_cadence(&self, name: &str, weeks: u32) -> Result<u32> {
        let s = self.section(name)?;
        match &s.kind {
            SectionKind::Cadence { cap } => Ok(s.id(weeks.min(*cap))),
            _ => Err(Error::invalid(format!("{name} is not a cadence field"))),
        }
    }

    pub fn encode_age(&self, name: &str, years: u32) -> Result<u32> {
        let s = self.section(name)?;
        match &s.kind {
            SectionKind::AgeBuckets { width, cap_years } => Ok(s.id(years.min(*cap_years) / *width)),
            _ => Err(Error::invalid(format!("{name} is not an age field"))),
        }
    }

    pub fn encode_distance(&self, name: &str, meters: f64) -> Result<u32> {
        let s = self.section(name)?;
        match &s.kind {
            SectionKind::Distance { distances, tolerance } => {
                if !(meters > 0.0 && meters.is_finite()) {
                    return Err(Error::invalid(format!("{name}: invalid distance {meters}")));
                }
                let idx = distances
                    .iter()
                    .position(|d| ((meters - d.meters) / d.meters).abs() <= *tolerance)
                    .unwrap_or(distances.len());
                Ok(s.id(idx as u32))
            }
            _ => Err(Error::invalid(format!("{name} is not a distance field"))),
        }
    }

    /// Section and in-section index of a token, or `None` for PAD and unknown IDs.
    pub fn decode(&self, id: u32) -> Option<(&Section, u32)> {
        self.sections.iter().find(|s| s.contains(id)).map(|s| (s, id - s.start))
    }

    /// Human-readable label for a token, e.g. `pace[12]` or `conditions=rain`.
    pub fn label(&self, id: u32) -> String {
        if id == PAD {
            return "PAD".to_string();
        }
        match self.decode(id) {
            None => format!("<unk:{id}>"),
            Some((s, i)) => match &s.kind {
                SectionKind::Categorical { categories } => format!("{}={}", s.name, categories[i as usize]),
                SectionKind::Distance { distances, .. } => {
                    let l = distances.get(i as usize).map_or("other", |d| d.label.as_str());
                    format!("{}={l}", s.name)
                }
                _ => format!("{}[{i}]", s.name),
            },
        }
    }

    /// Manifest text: pretty JSON, deterministic for a given vocabulary.
    pub fn manifest_text(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        text.push('\n');
        text
    }

    pub fn manifest_hash(&self) -> String {
        sha256_hex(self.manifest_text().as_bytes())
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let vocab: Vocabulary = serde_json::from_str(text)?;
        if vocab.format != MANIFEST_FORMAT || vocab.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "unsupported manifest {} v{} (expected {MANIFEST_FORMAT} v{MANIFEST_VERSION})",
                vocab.format, vocab.version
            )));
        }
        let rebuilt =
            Vocabulary::build(vocab.sections.iter().map(|s| (s.name.clone(), s.kind.clone())).collect())?;
        if rebuilt != vocab {
            return Err(Error::Config("manifest ID ranges are inconsistent with its sections".into()));
        }
        Ok(vocab)
    }

    /// Fails unless `hash` matches this vocabulary's manifest hash.
    pub fn ensure_hash(&self, hash: &str) -> Result<()> {
        let ours = self.manifest_hash();
        if ours == hash {
            Ok(())
        } else {
            Err(Error::ManifestMismatch { expected: ours, found: hash.to_string() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_bin(name: &str) -> BinSpec<f64> {
        BinSpec::from_edges(name, vec![0.0, 1.0, 2.0, 3.0], 10.0).unwrap()
    }

    #[test]
    fn two_features_get_disjoint_ranges() {
        let v = Vocabulary::build(vec![
            ("a".into(), SectionKind::Quantized { bins: three_bin("a") }),
            ("b".into(), SectionKind::Quantized { bins: three_bin("b") }),
        ])
        .unwrap();
        assert_eq!((v.sections[0].start, v.sections[0].len), (1, 3));
        assert_eq!((v.sections[1].start, v.sections[1].len), (4, 3));
        assert_eq!(v.size, 7);
        assert!(v.decode(PAD).is_none());
    }

    #[test]
    fn cadence_clamps_to_cap() {
        let v = Vocabulary::build(vec![("w".into(), SectionKind::Cadence { cap: 52 })]).unwrap();
        assert_eq!(v.sections[0].len, 53);
        let capped = v.encode_cadence("w", 60).unwrap();
        assert_eq!(capped, v.encode_cadence("w", 52).unwrap());
        assert_eq!(v.decode(capped).unwrap().1, 52);
        for w in 0..=52 {
            assert_eq!(v.decode(v.encode_cadence("w", w).unwrap()).unwrap().1, w);
        }
    }

    #[test]
    fn validation_errors() {
        assert!(Vocabulary::build(vec![("c".into(), SectionKind::Categorical { categories: vec![] })]).is_err());
        assert!(Vocabulary::build(vec![
            ("a".into(), SectionKind::Cadence { cap: 3 }),
            ("a".into(), SectionKind::Cadence { cap: 3 }),
        ])
        .is_err());
    }

    #[test]
    fn distances_and_ages() {
        let v = Vocabulary::build(vec![
            ("d".into(), SectionKind::Distance { distances: default_distances(), tolerance: 0.02 }),
            ("age".into(), SectionKind::AgeBuckets { width: 5, cap_years: 90 }),
        ])
        .unwrap();
        assert_eq!(v.label(v.encode_distance("d", 42195.0).unwrap()), "d=marathon");
        assert_eq!(v.label(v.encode_distance("d", 21100.0).unwrap()), "d=half");
        assert_eq!(v.label(v.encode_distance("d", 6437.0).unwrap()), "d=other");
        assert!(v.encode_distance("d", -1.0).is_err());
        let age = v.section("age").unwrap();
        assert_eq!(v.encode_age("age", 34).unwrap() - age.start, 6);
        assert_eq!(v.encode_age("age", 120).unwrap() - age.start, 18);
    }

    #[test]
    fn manifest_round_trip_and_hash() {
        let v = Vocabulary::build(vec![
            ("a".into(), SectionKind::Quantized { bins: three_bin("a") }),
            ("c".into(), SectionKind::Categorical { categories: default_conditions() }),
        ])
        .unwrap();
        let text = v.manifest_text();
        let back = Vocabulary::from_manifest(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.manifest_hash(), v.manifest_hash());
        assert!(v.ensure_hash(&v.manifest_hash()).is_ok());
        assert!(matches!(v.ensure_hash("deadbeef"), Err(Error::ManifestMismatch { .. })));
    }

    #[test]
    fn tampered_manifest_is_rejected() {
        let v = Vocabulary::build(vec![("w".into(), SectionKind::Cadence { cap: 4 })]).unwrap();
        let text = v.manifest_text().replace("\"start\": 1", "\"start\": 2");
        assert!(Vocabulary::from_manifest(&text).is_err());
    }
}
