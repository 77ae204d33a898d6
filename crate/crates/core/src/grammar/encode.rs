use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{EventRecord, RunnerHistory};
use super::vocab::{Field, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a};

/// Feature and demographic tokens at the start of every block.
pub const FEATURE_TOKENS: usize = 8;
/// Full block: features, pace, two cadence tokens.
pub const BLOCK_TOKENS: usize = 11;
/// Position of the pace token inside a block.
pub const PACE_SLOT: usize = 8;
pub const DEFAULT_MAX_EVENTS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Remove both cadence tokens from every block.
    DropTimeTokens,
    /// Permute context events before encoding.
    ShuffleEvents,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::DropTimeTokens => "drop_time_tokens",
            Ablation::ShuffleEvents => "shuffle_events",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "drop_time_tokens" => Ok(Ablation::DropTimeTokens),
            "shuffle_events" => Ok(Ablation::ShuffleEvents),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected none, drop_time_tokens or shuffle_events)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLayout {
    pub max_events: usize,
    pub ablation: Ablation,
    /// Base seed for per-example shuffles.
    pub seed: u64,
}

impl Default for WindowLayout {
    fn default() -> Self {
        WindowLayout { max_events: DEFAULT_MAX_EVENTS, ablation: Ablation::None, seed: 0 }
    }
}

impl WindowLayout {
    pub fn block_len(&self) -> usize {
        match self.ablation {
            Ablation::DropTimeTokens => BLOCK_TOKENS - 2,
            _ => BLOCK_TOKENS,
        }
    }

    pub fn max_context_events(&self) -> usize {
        self.max_events.saturating_sub(1)
    }

    /// Window length in tokens: 327 for the default layout.
    pub fn capacity(&self) -> usize {
        self.max_context_events() * self.block_len() + FEATURE_TOKENS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedWindow {
    /// Exactly `capacity` tokens, PAD after `real_len`.
    pub token_ids: Vec<u32>,
    pub real_len: usize,
    /// Index of the input position whose output predicts the label.
    pub prediction_position: usize,
    pub label_bin: usize,
    /// Seconds per mile.
    pub label_value: f64,
    /// Raw value behind each real token drawn from a quantized section.
    pub continuous: Vec<Option<f64>>,
    pub runner_id: String,
    pub target_index: usize,
}

impl EncodedWindow {
    pub fn real_tokens(&self) -> &[u32] {
        &self.token_ids[..self.real_len]
    }
}

/// Tokens and raw continuous values for one event.
fn block_parts(event: &EventRecord, vocab: &Vocabulary) -> Result<([u32; BLOCK_TOKENS], [Option<f64>; BLOCK_TOKENS])> {
    let q = |f: Field, x: f64| vocab.encode_quantized(f.name(), x);
    let ids = [
        q(Field::Temperature, event.temperature_c)?,
        q(Field::Humidity, event.humidity_pct)?,
        q(Field::Wind, event.wind_kph)?,
        q(Field::FeelsLike, event.feels_like_c)?,
        vocab.encode_categorical(Field::Conditions.name(), &event.conditions)?,
        vocab.encode_categorical(Field::Gender.name(), &event.gender)?,
        vocab.encode_age(Field::Age.name(), event.age_years)?,
        vocab.encode_distance(Field::Distance.name(), event.distance_m)?,
        q(Field::Pace, event.pace)?,
        vocab.encode_cadence(Field::WeeksSinceLast.name(), event.weeks_since_last)?,
        vocab.encode_cadence(Field::WeeksToTarget.name(), event.weeks_to_target)?,
    ];
    let values = [
        Some(event.temperature_c),
        Some(event.humidity_pct),
        Some(event.wind_kph),
        Some(event.feels_like_c),
        None,
        None,
        None,
        None,
        Some(event.pace),
        None,
        None,
    ];
    Ok((ids, values))
}

/// The 11 tokens of one event, in grammar order.
pub fn encode_block(event: &EventRecord, vocab: &Vocabulary) -> Result<[u32; BLOCK_TOKENS]> {
    block_parts(event, vocab).map(|(ids, _)| ids)
}

/// Per-example shuffle seed derived from the base seed, runner and target.
pub fn example_seed(seed: u64, runner_id: &str, target_index: usize) -> u64 {
    derive_seed(seed ^ fnv1a(runner_id.as_bytes()), "shuffle", target_index as u64)
}

/// Encodes the window predicting `history.events[target_index]`.
pub fn encode_window(
    history: &RunnerHistory,
    target_index: usize,
    vocab: &Vocabulary,
    layout: &WindowLayout,
) -> Result<EncodedWindow> {
    if target_index == 0 {
        return Err(Error::invalid(format!("runner {}: target 0 has no history", history.runner_id)));
    }
    if target_index >= history.events.len() {
        return Err(Error::invalid(format!(
            "runner {}: target {target_index} beyond {} events",
            history.runner_id,
            history.events.len()
        )));
    }
    if layout.max_events < 2 {
        return Err(Error::Config("max_events must be at least 2".into()));
    }

    let first = target_index.saturating_sub(layout.max_context_events());
    let mut context: Vec<usize> = (first..target_index).collect();
    if layout.ablation == Ablation::ShuffleEvents {
        let mut rng = ChaCha8Rng::seed_from_u64(example_seed(layout.seed, &history.runner_id, target_index));
        context.shuffle(&mut rng);
    }

    let capacity = layout.capacity();
    let block_len = layout.block_len();
    let mut token_ids = Vec::with_capacity(capacity);
    let mut continuous = Vec::with_capacity(capacity);
    for &j in &context {
        let mut event = history.events[j].clone();
        event.weeks_to_target = history.weeks_between(j, target_index);
        let (ids, values) = block_parts(&event, vocab)?;
        token_ids.extend_from_slice(&ids[..block_len]);
        continuous.extend_from_slice(&values[..block_len]);
    }

    let target = &history.events[target_index];
    let (ids, values) = block_parts(target, vocab)?;
    token_ids.extend_from_slice(&ids[..FEATURE_TOKENS]);
    continuous.extend_from_slice(&values[..FEATURE_TOKENS]);
    let label_bin = vocab.pace_bins()?.locate_in_support(target.pace)?;

    let real_len = token_ids.len();
    debug_assert!(real_len <= capacity);
    token_ids.resize(capacity, PAD);
    Ok(EncodedWindow {
        token_ids,
        real_len,
        prediction_position: real_len - 1,
        label_bin,
        label_value: target.pace,
        continuous,
        runner_id: history.runner_id.clone(),
        target_index,
    })
}

/// Encodes every `(history, target)` pair under the layout's ablation.
pub fn ablate<'a, I>(examples: I, vocab: &'a Vocabulary, layout: WindowLayout) -> impl Iterator<Item = Result<EncodedWindow>> + 'a
where
    I: IntoIterator<Item = (&'a RunnerHistory, usize)>,
    I::IntoIter: 'a,
{
    examples
        .into_iter()
        .map(move |(h, t)| encode_window(h, t, vocab, &layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::dataset::fixtures::{event, history};
    use crate::grammar::vocab::{default_conditions, default_distances, default_genders, GrammarSpec, SectionKind};
    use crate::quantizer::BinSpec;

    fn bins(name: &str, lo: f64, hi: f64, n: usize) -> BinSpec<f64> {
        let edges = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        BinSpec::from_edges(name, edges, hi - lo).unwrap()
    }

    pub(crate) fn vocab() -> Vocabulary {
        Vocabulary::for_grammar(&GrammarSpec {
            temperature: bins("temperature_c", -20.0, 40.0, 12),
            humidity: bins("humidity_pct", 0.0, 100.0, 10),
            wind: bins("wind_kph", 0.0, 60.0, 6),
            feels_like: bins("feels_like_c", -30.0, 45.0, 15),
            pace: bins("pace", 300.0, 700.0, 40),
            conditions: default_conditions(),
            genders: default_genders(),
            age_bucket_years: 5,
            age_cap_years: 90,
            distances: default_distances(),
            distance_tolerance: 0.02,
            cadence_cap: 104,
        })
        .unwrap()
    }

    fn section_of(v: &Vocabulary, id: u32) -> String {
        v.decode(id).unwrap().0.name.clone()
    }

    #[test]
    fn block_follows_grammar_order() {
        let v = vocab();
        let mut e = event(480.0, 2);
        e.gender = "M".into();
        let block = encode_block(&e, &v).unwrap();
        let names: Vec<String> = block.iter().map(|&id| section_of(&v, id)).collect();
        let expected: Vec<&str> = Field::BLOCK.iter().map(|f| f.name()).collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn pace_change_only_moves_slot_eight() {
        let v = vocab();
        let mut a = event(480.0, 2);
        a.gender = "F".into();
        let mut b = a.clone();
        b.pace = 520.0;
        let (ba, bb) = (encode_block(&a, &v).unwrap(), encode_block(&b, &v).unwrap());
        let diff: Vec<usize> = (0..BLOCK_TOKENS).filter(|&i| ba[i] != bb[i]).collect();
        assert_eq!(diff, vec![PACE_SLOT]);
    }

    #[test]
    fn out_of_support_feature_is_an_error() {
        let v = vocab();
        let mut e = event(480.0, 2);
        e.gender = "F".into();
        e.temperature_c = 80.0;
        assert!(matches!(encode_block(&e, &v), Err(Error::OutOfSupport { .. })));
        let mut p = event(5000.0, 2);
        p.gender = "F".into();
        assert!(encode_block(&p, &v).is_err());
    }

    #[test]
    fn two_event_window() {
        let v = vocab();
        let h = history("r", 2);
        let w = encode_window(&h, 1, &v, &WindowLayout::default()).unwrap();
        assert_eq!(w.token_ids.len(), 327);
        assert_eq!(w.real_len, 19);
        assert_eq!(w.token_ids.iter().filter(|&&t| t == PAD).count(), 308);
        assert_eq!(w.prediction_position, 18);
        assert_eq!(section_of(&v, w.token_ids[18]), "distance");
    }

    #[test]
    fn long_history_truncates_to_capacity() {
        let v = vocab();
        let h = history("r", 40);
        let w = encode_window(&h, 39, &v, &WindowLayout::default()).unwrap();
        assert_eq!(w.real_len, 29 * 11 + 8);
        assert_eq!(w.real_len, 327);
        assert!(!w.token_ids.contains(&PAD));
        // first retained context event is event 10
        let pace_id = v.encode_quantized("pace", h.events[10].pace).unwrap();
        assert_eq!(w.token_ids[PACE_SLOT], pace_id);
    }

    #[test]
    fn cadence_is_relative_to_the_window_target() {
        let v = vocab();
        let h = history("r", 5);
        let w = encode_window(&h, 3, &v, &WindowLayout::default()).unwrap();
        let to_target = v.section("weeks_to_target").unwrap();
        let got: Vec<u32> = (0..3).map(|b| w.token_ids[b * 11 + 10] - to_target.start).collect();
        assert_eq!(got, vec![9, 6, 3]);
    }

    #[test]
    fn target_zero_is_an_error() {
        let v = vocab();
        assert!(encode_window(&history("r", 3), 0, &v, &WindowLayout::default()).is_err());
    }

    #[test]
    fn drop_time_tokens_shrinks_blocks() {
        let v = vocab();
        let layout = WindowLayout { ablation: Ablation::DropTimeTokens, ..WindowLayout::default() };
        assert_eq!(layout.capacity(), 29 * 9 + 8);
        let w = encode_window(&history("r", 2), 1, &v, &layout).unwrap();
        assert_eq!(w.real_len, 17);
        assert_eq!(w.token_ids.len(), layout.capacity());
        assert!(w.real_tokens().iter().all(|&id| !section_of(&v, id).starts_with("weeks")));
    }

    #[test]
    fn shuffle_with_one_context_event_is_identity() {
        let v = vocab();
        let h = history("r", 2);
        let plain = encode_window(&h, 1, &v, &WindowLayout::default()).unwrap();
        let layout = WindowLayout { ablation: Ablation::ShuffleEvents, seed: 9, ..WindowLayout::default() };
        assert_eq!(encode_window(&h, 1, &v, &layout).unwrap(), plain);
    }

    #[test]
    fn shuffle_permutes_blocks_deterministically() {
        let v = vocab();
        let h = history("r", 12);
        let layout = WindowLayout { ablation: Ablation::ShuffleEvents, seed: 5, ..WindowLayout::default() };
        let a = encode_window(&h, 11, &v, &layout).unwrap();
        let b = encode_window(&h, 11, &v, &layout).unwrap();
        assert_eq!(a, b);
        let plain = encode_window(&h, 11, &v, &WindowLayout::default()).unwrap();
        assert_ne!(a.token_ids, plain.token_ids);
        let mut blocks_a: Vec<&[u32]> = a.token_ids[..11 * 11].chunks(11).collect();
        let mut blocks_p: Vec<&[u32]> = plain.token_ids[..11 * 11].chunks(11).collect();
        blocks_a.sort();
        blocks_p.sort();
        assert_eq!(blocks_a, blocks_p);
    }

    #[test]
    fn ablate_none_is_identity() {
        let v = vocab();
        let hs = [history("a", 4), history("b", 3)];
        let pairs: Vec<(&RunnerHistory, usize)> =
            hs.iter().flat_map(|h| (1..h.events.len()).map(move |t| (h, t))).collect();
        let direct: Vec<_> = pairs.iter().map(|&(h, t)| encode_window(h, t, &v, &WindowLayout::default()).unwrap()).collect();
        let via: Vec<_> = ablate(pairs.clone(), &v, WindowLayout::default()).collect::<Result<_>>().unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn windows_never_leak_the_label_and_pad_only_trails() {
        let v = vocab();
        let pace = v.section("pace").unwrap().clone();
        for n in 2..35 {
            let h = history("r", n);
            for t in 1..n {
                let w = encode_window(&h, t, &v, &WindowLayout::default()).unwrap();
                let label_id = pace.id(w.label_bin as u32);
                assert_ne!(w.token_ids[w.prediction_position], label_id);
                assert!(!pace.contains(w.token_ids[w.prediction_position]));
                let first_pad = w.token_ids.iter().position(|&x| x == PAD).unwrap_or(w.token_ids.len());
                assert_eq!(first_pad, w.real_len);
                assert!(w.token_ids[first_pad..].iter().all(|&x| x == PAD));
            }
        }
    }

    #[test]
    fn decode_recovers_section_and_bin() {
        let v = vocab();
        let mut e = event(512.3, 7);
        e.gender = "X".into();
        let block = encode_block(&e, &v).unwrap();
        let (s, i) = v.decode(block[PACE_SLOT]).unwrap();
        assert_eq!(s.name, "pace");
        match &s.kind {
            SectionKind::Quantized { bins } => assert_eq!(bins.locate(512.3).unwrap(), Some(i as usize)),
            _ => unreachable!(),
        }
        assert_eq!(v.label(block[5]), "gender=X");
    }
}
