//! Clip windowing, confidence-rate labeling, subject splits and training batches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, VideoFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    /// Frames per clip.
    pub clip_len: usize,
    /// Keep every k-th raw frame.
    pub sample_rate: usize,
    /// Raw-frame offset between consecutive window starts.
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            clip_len: 48,
            sample_rate: 2,
            stride: 23,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.sample_rate == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "window parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Raw frames covered by one window.
    pub fn span(&self) -> usize {
        (self.clip_len - 1) * self.sample_rate + 1
    }

    pub fn frame_indices(&self, start: usize) -> Vec<usize> {
        (0..self.clip_len)
            .map(|k| start + k * self.sample_rate)
            .collect()
    }
}

/// Window start indices that fit entirely inside a video of `n_frames`.
pub fn window_video(n_frames: usize, spec: &WindowSpec) -> Vec<usize> {
    let span = spec.span();
    if n_frames < span {
        return Vec::new();
    }
    (0..=n_frames - span).step_by(spec.stride).collect()
}

/// A confidence rate kept as an exact fraction so comparisons like
/// `zeros / n >= 2/3` have no rounding slop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    pub const HALF: Rate = Rate { num: 1, den: 2 };
    pub const TWO_THIRDS: Rate = Rate { num: 2, den: 3 };
    pub const ONE: Rate = Rate { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Config(format!("rate {num}/{den} is not in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// `count / total >= self`
    pub fn is_met(&self, count: usize, total: usize) -> bool {
        count as u128 * self.den as u128 >= self.num as u128 * total as u128
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Filename-safe form, e.g. `2-3`.
    pub fn slug(&self) -> String {
        if self.den == 1 {
            self.num.to_string()
        } else {
            format!("{}-{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl PartialOrd for Rate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Rate {
    type Err = Error;

    /// Accepts `a/b`, an integer, or a decimal such as `0.75`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse rate {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            return Rate::new(a, b);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            let den = 10u64.pow(frac.len() as u32);
            let int: u64 = if int.is_empty() {
                0
            } else {
                int.parse().map_err(|_| bad())?
            };
            let frac: u64 = if frac.is_empty() {
                0
            } else {
                frac.parse().map_err(|_| bad())?
            };
            return Rate::new(int * den + frac, den);
        }
        Rate::new(s.parse().map_err(|_| bad())?, 1)
    }
}

impl TryFrom<String> for Rate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rate> for String {
    fn from(r: Rate) -> String {
        r.to_string()
    }
}

impl serde::Serialize for Rate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Rate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RateConfig {
    pub normal: Rate,
    pub anomaly: Rate,
}

impl RateConfig {
    pub fn new(normal: Rate, anomaly: Rate) -> Self {
        Self { normal, anomaly }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipLabel {
    Normal,
    Anomalous,
    Unassigned,
}

/// Anomalous if the anomalous-frame fraction reaches `anomaly`, otherwise
/// Normal if the normal-frame fraction reaches `normal`. The anomaly check
/// runs first, so a half/half clip at rates (1/2, 1/2) is Anomalous.
pub fn assign_clip_label(frame_labels: &[bool], rates: &RateConfig) -> ClipLabel {
    let n = frame_labels.len();
    let anomalous = frame_labels.iter().filter(|&&l| l).count();
    if n == 0 {
        return ClipLabel::Unassigned;
    }
    if rates.anomaly.is_met(anomalous, n) {
        ClipLabel::Anomalous
    } else if rates.normal.is_met(n - anomalous, n) {
        ClipLabel::Normal
    } else {
        ClipLabel::Unassigned
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub video_id: String,
    pub start: usize,
    pub frame_indices: Vec<usize>,
    /// Labels of the sampled frames, `true` = anomalous.
    pub frame_labels: Vec<bool>,
    pub features: FeatureSequence,
}

impl Clip {
    pub fn id(&self) -> String {
        clip_id(&self.video_id, self.start)
    }

    pub fn label(&self, rates: &RateConfig) -> ClipLabel {
        assign_clip_label(&self.frame_labels, rates)
    }
}

pub fn clip_id(video_id: &str, start: usize) -> String {
    format!("{video_id}@{start}")
}

/// Cuts every window of a video into a clip, subsampling both features and labels.
pub fn extract_clips(video: &VideoFeatures, spec: &WindowSpec) -> Vec<Clip> {
    window_video(video.features.len(), spec)
        .into_iter()
        .map(|start| {
            let frame_indices = spec.frame_indices(start);
            Clip {
                video_id: video.video_id.clone(),
                start,
                frame_labels: frame_indices.iter().map(|&i| video.labels[i]).collect(),
                features: video.features.select_rows(&frame_indices),
                frame_indices,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Video ids per split; videos of one subject always land together.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn split_of(&self, video_id: &str) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|&s| self.get(s).iter().any(|v| v == video_id))
    }

    /// `video_id split` lines, sorted by video id.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(&str, &str)> = Split::ALL
            .iter()
            .flat_map(|&s| self.get(s).iter().map(move |v| (v.as_str(), s.name())))
            .collect();
        rows.sort();
        rows.iter().map(|(v, s)| format!("{v} {s}\n")).collect()
    }
}

/// Subject counts per split by largest remainder, so they always sum to `n`.
fn apportion(n: usize, fractions: &SplitFractions) -> Result<[usize; 3]> {
    let f = [fractions.train, fractions.val, fractions.test];
    if f.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || f.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!(
            "invalid split fractions {fractions:?}"
        )));
    }
    let total: f64 = f.iter().sum();
    let exact: Vec<f64> = f.iter().map(|x| x / total * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    // Stable: ties favour train, then val, then test.
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    for (i, split) in Split::ALL.iter().enumerate() {
        if f[i] > 0.0 && counts[i] == 0 {
            return Err(Error::InsufficientSubjects {
                split: split.name(),
                subjects: n,
            });
        }
    }
    Ok(counts)
}

/// Partitions videos by subject. Subjects are shuffled with `seed`, then dealt
/// into train, val and test according to `fractions`. A split with a zero
/// fraction may stay empty; any other split must get at least one subject.
pub fn build_splits(
    videos: &[String],
    subject_map: &BTreeMap<String, String>,
    fractions: &SplitFractions,
    seed: u64,
) -> Result<Splits> {
    let mut subjects = BTreeSet::new();
    for v in videos {
        let s = subject_map
            .get(v)
            .ok_or_else(|| Error::UnmappedVideo(v.clone()))?;
        subjects.insert(s.as_str());
    }
    let mut subjects: Vec<&str> = subjects.into_iter().collect();
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(subjects.len(), fractions)?;

    let mut assignment = BTreeMap::new();
    let mut next = subjects.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for s in next.by_ref().take(count) {
            assignment.insert(s, split);
        }
    }

    let mut splits = Splits::default();
    for v in videos {
        let split = assignment[subject_map[v].as_str()];
        splits.get_mut(split).push(v.clone());
    }
    Ok(splits)
}

/// Deterministically shuffled batches over `items`; the last batch may be short.
pub fn shuffled_batches<T: Clone>(
    items: &[T],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<T>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| chunk.iter().map(|&i| items[i].clone()).collect())
        .collect()
}

/// Clips labeled Normal under `rates`.
pub fn normal_clips<'a>(clips: &'a [Clip], rates: &RateConfig) -> Vec<&'a Clip> {
    clips
        .iter()
        .filter(|c| c.label(rates) == ClipLabel::Normal)
        .collect()
}

/// One shuffled pass over the Normal clips, in batches of feature sequences.
pub fn training_batches<'a>(
    clips: &'a [Clip],
    rates: &RateConfig,
    batch_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = Vec<&'a FeatureSequence>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let normal: Vec<&FeatureSequence> = normal_clips(clips, rates)
        .into_iter()
        .map(|c| &c.features)
        .collect();
    if normal.is_empty() {
        return Err(Error::NoNormalClips);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(shuffled_batches(&normal, batch_size, &mut rng).into_iter())
}

/// One manifest line: `video_id subject_id path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub subject_id: String,
    /// Feature file or frame directory. Relative paths are resolved against
    /// the manifest's own directory when read from disk.
    pub path: PathBuf,
}

pub fn parse_manifest(text: &str, origin: &Path, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [video_id, subject_id, path] = fields[..] else {
            return Err(Error::parse(
                origin,
                i + 1,
                "expected `video_id subject_id path`",
            ));
        };
        if entries.iter().any(|e| e.video_id == video_id) {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("duplicate video id {video_id:?}"),
            ));
        }
        entries.push(ManifestEntry {
            video_id: video_id.into(),
            subject_id: subject_id.into(),
            path: base.join(path),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, path.parent().unwrap_or(Path::new("")))
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {} {}\n", e.video_id, e.subject_id, e.path.display()))
        .collect()
}

pub fn subject_map(entries: &[ManifestEntry]) -> BTreeMap<String, String> {
    entries
        .iter()
        .map(|e| (e.video_id.clone(), e.subject_id.clone()))
        .collect()
}

/// Parses `video_id split` lines as written by [`Splits::to_text`].
pub fn parse_splits(text: &str, origin: &Path) -> Result<Splits> {
    let mut splits = Splits::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [video, split] = fields[..] else {
            return Err(Error::parse(origin, i + 1, "expected `video_id split`"));
        };
        let split: Split = split
            .parse()
            .map_err(|_| Error::parse(origin, i + 1, format!("unknown split {split:?}")))?;
        splits.get_mut(split).push(video.to_string());
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(zeros: usize, ones: usize) -> Vec<bool> {
        let mut v = vec![false; zeros];
        v.extend(std::iter::repeat_n(true, ones));
        v
    }

    #[test]
    fn default_window_span() {
        assert_eq!(WindowSpec::default().span(), 95);
    }

    #[test]
    fn window_examples() {
        let spec = WindowSpec::default();
        assert_eq!(window_video(95, &spec), vec![0]);
        assert_eq!(window_video(94, &spec), Vec::<usize>::new());
        assert_eq!(window_video(142, &spec), vec![0, 23, 46]);
        assert_eq!(window_video(1000, &spec).len(), 40);
    }

    #[test]
    fn label_examples() {
        let r = |n, a| RateConfig::new(n, a);
        assert_eq!(
            assign_clip_label(&labels(48, 0), &r(Rate::ONE, Rate::ONE)),
            ClipLabel::Normal
        );
        assert_eq!(
            assign_clip_label(&labels(24, 24), &r(Rate::HALF, Rate::HALF)),
            ClipLabel::Anomalous
        );
        assert_eq!(
            assign_clip_label(&labels(30, 18), &r(Rate::TWO_THIRDS, Rate::TWO_THIRDS)),
            ClipLabel::Unassigned
        );
        // exactly two thirds counts
        assert_eq!(
            assign_clip_label(&labels(32, 16), &r(Rate::TWO_THIRDS, Rate::TWO_THIRDS)),
            ClipLabel::Normal
        );
    }

    #[test]
    fn rate_parsing() {
        assert_eq!("1/2".parse::<Rate>().unwrap(), Rate::HALF);
        assert_eq!("4/6".parse::<Rate>().unwrap(), Rate::TWO_THIRDS);
        assert_eq!("1".parse::<Rate>().unwrap(), Rate::ONE);
        assert_eq!("0.5".parse::<Rate>().unwrap(), Rate::HALF);
        assert_eq!("1.0".parse::<Rate>().unwrap(), Rate::ONE);
        assert!("0".parse::<Rate>().is_err());
        assert!("3/2".parse::<Rate>().is_err());
        assert!("abc".parse::<Rate>().is_err());
        assert_eq!(Rate::TWO_THIRDS.to_string(), "2/3");
        assert_eq!(Rate::TWO_THIRDS.slug(), "2-3");
        assert!(Rate::HALF < Rate::TWO_THIRDS && Rate::TWO_THIRDS < Rate::ONE);
    }

    fn subjects(n_subjects: usize, videos_each: usize) -> (Vec<String>, BTreeMap<String, String>) {
        let mut videos = Vec::new();
        let mut map = BTreeMap::new();
        for s in 0..n_subjects {
            for v in 0..videos_each {
                let id = format!("s{s}v{v}");
                map.insert(id.clone(), format!("s{s}"));
                videos.push(id);
            }
        }
        (videos, map)
    }

    #[test]
    fn three_subjects_three_ways() {
        let (videos, map) = subjects(3, 2);
        let third = 1.0 / 3.0;
        let f = SplitFractions {
            train: third,
            val: third,
            test: third,
        };
        let s = build_splits(&videos, &map, &f, 1).unwrap();
        for split in Split::ALL {
            let ids = s.get(split);
            assert_eq!(ids.len(), 2);
            assert_eq!(map[&ids[0]], map[&ids[1]]);
        }
    }

    #[test]
    fn twelve_six_resplit() {
        let (videos, map) = subjects(18, 5);
        let f = SplitFractions {
            train: 12.0 / 18.0,
            val: 6.0 / 18.0,
            test: 0.0,
        };
        let s = build_splits(&videos, &map, &f, 9).unwrap();
        let count = |ids: &[String]| ids.iter().map(|v| &map[v]).collect::<BTreeSet<_>>().len();
        assert_eq!(count(&s.train), 12);
        assert_eq!(count(&s.val), 6);
        assert!(s.test.is_empty());
    }

    #[test]
    fn split_errors() {
        let (videos, map) = subjects(2, 1);
        let err = build_splits(&videos, &map, &SplitFractions::default(), 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientSubjects { .. }));
        let mut missing = videos.clone();
        missing.push("ghost".into());
        assert!(matches!(
            build_splits(&missing, &map, &SplitFractions::default(), 0),
            Err(Error::UnmappedVideo(_))
        ));
    }

    #[test]
    fn splits_depend_only_on_seed() {
        let (videos, map) = subjects(10, 3);
        let f = SplitFractions::default();
        assert_eq!(
            build_splits(&videos, &map, &f, 5).unwrap(),
            build_splits(&videos, &map, &f, 5).unwrap()
        );
    }

    fn clip_with(labels: Vec<bool>, tag: f64) -> Clip {
        let rows: Vec<[f64; 2]> = (0..labels.len()).map(|t| [1.0 + tag, t as f64]).collect();
        Clip {
            video_id: format!("v{tag}"),
            start: 0,
            frame_indices: (0..labels.len()).collect(),
            frame_labels: labels,
            features: FeatureSequence::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn batches_need_normal_clips() {
        let clips: Vec<Clip> = (0..10).map(|i| clip_with(labels(0, 4), i as f64)).collect();
        let rates = RateConfig::new(Rate::HALF, Rate::HALF);
        assert!(matches!(
            training_batches(&clips, &rates, 4, 0),
            Err(Error::NoNormalClips)
        ));
    }

    #[test]
    fn batches_keep_short_tail_and_skip_anomalies() {
        let mut clips: Vec<Clip> = (0..5).map(|i| clip_with(labels(4, 0), i as f64)).collect();
        clips.push(clip_with(labels(1, 3), 99.0));
        let rates = RateConfig::new(Rate::HALF, Rate::HALF);
        let sizes: Vec<usize> = training_batches(&clips, &rates, 4, 3)
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![4, 1]);
        let seen: Vec<_> = training_batches(&clips, &rates, 4, 3)
            .unwrap()
            .flatten()
            .collect();
        assert!(seen.iter().all(|f| !std::ptr::eq(*f, &clips[5].features)));
    }

    #[test]
    fn batches_are_seeded() {
        let clips: Vec<Clip> = (0..9).map(|i| clip_with(labels(4, 0), i as f64)).collect();
        let rates = RateConfig::new(Rate::ONE, Rate::ONE);
        let order = |seed| -> Vec<usize> {
            training_batches(&clips, &rates, 2, seed)
                .unwrap()
                .flatten()
                .map(|f| {
                    clips
                        .iter()
                        .position(|c| std::ptr::eq(&c.features, f))
                        .unwrap()
                })
                .collect()
        };
        assert_eq!(order(11), order(11));
        assert_ne!(order(11), order(12));
    }

    #[test]
    fn clips_subsample_labels() {
        let n = 10;
        let rows: Vec<[f64; 2]> = (0..n).map(|t| [1.0, t as f64]).collect();
        let video = VideoFeatures::new(
            "v",
            FeatureSequence::from_rows(&rows).unwrap(),
            (0..n).map(|t| t % 2 == 1).collect(),
        )
        .unwrap();
        let spec = WindowSpec {
            clip_len: 3,
            sample_rate: 2,
            stride: 3,
        };
        let clips = extract_clips(&video, &spec);
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[1].frame_indices, vec![3, 5, 7]);
        assert_eq!(clips[1].frame_labels, vec![true, true, true]);
        assert_eq!(clips[0].frame_labels, vec![false, false, false]);
        assert_eq!(clips[1].features.row(0), video.features.row(3));
        assert_eq!(clips[1].id(), "v@3");
    }

    fn rate_strategy() -> impl Strategy<Value = Rate> {
        (1u64..12).prop_flat_map(|den| (1..=den).prop_map(move |num| Rate::new(num, den).unwrap()))
    }

    proptest! {
        #[test]
        fn window_count_formula(
            n in 1usize..2000,
            clip_len in 1usize..60,
            sample_rate in 1usize..4,
            stride in 1usize..40,
        ) {
            let spec = WindowSpec { clip_len, sample_rate, stride };
            let starts = window_video(n, &spec);
            let expected = if n >= spec.span() { (n - spec.span()) / stride + 1 } else { 0 };
            prop_assert_eq!(starts.len(), expected);
            for s in starts {
                prop_assert!(spec.frame_indices(s).iter().all(|&i| i < n));
            }
        }

        #[test]
        fn half_rates_are_majority_vote(labels in prop::collection::vec(any::<bool>(), 1..60)) {
            let label = assign_clip_label(&labels, &RateConfig::new(Rate::HALF, Rate::HALF));
            let ones = labels.iter().filter(|&&l| l).count();
            let expected = if 2 * ones >= labels.len() { ClipLabel::Anomalous } else { ClipLabel::Normal };
            prop_assert_eq!(label, expected);
        }

        #[test]
        fn raising_normal_rate_never_adds_normals(
            labels in prop::collection::vec(any::<bool>(), 1..60),
            a in rate_strategy(), n1 in rate_strategy(), n2 in rate_strategy(),
        ) {
            let (lo, hi) = if n1 <= n2 { (n1, n2) } else { (n2, n1) };
            let at_hi = assign_clip_label(&labels, &RateConfig::new(hi, a));
            let at_lo = assign_clip_label(&labels, &RateConfig::new(lo, a));
            if at_hi == ClipLabel::Normal {
                prop_assert_eq!(at_lo, ClipLabel::Normal);
            }
        }

        #[test]
        fn splits_never_share_subjects(n_subjects in 3usize..20, per in 1usize..4, seed in any::<u64>()) {
            let (videos, map) = subjects(n_subjects, per);
            let s = build_splits(&videos, &map, &SplitFractions::default(), seed).unwrap();
            let subj = |ids: &[String]| ids.iter().map(|v| map[v].clone()).collect::<BTreeSet<_>>();
            let (a, b, c) = (subj(&s.train), subj(&s.val), subj(&s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), videos.len());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let text = "# comment\nv1 s1 feats/v1.txt\n\nv2 s1 /abs/v2.txt\n";
        let entries = parse_manifest(text, Path::new("m"), Path::new("/data")).unwrap();
        assert_eq!(entries[0].path, PathBuf::from("/data/feats/v1.txt"));
        assert_eq!(entries[1].path, PathBuf::from("/abs/v2.txt"));
        let again =
            parse_manifest(&format_manifest(&entries), Path::new("m"), Path::new("/x")).unwrap();
        assert_eq!(again, entries);
        assert!(parse_manifest("v1 s1\n", Path::new("m"), Path::new("")).is_err());
        assert!(parse_manifest("v1 s1 a\nv1 s2 b\n", Path::new("m"), Path::new("")).is_err());
    }

    #[test]
    fn splits_text_round_trip() {
        let splits = Splits {
            train: vec!["a".into(), "c".into()],
            val: vec!["b".into()],
            test: vec!["d".into()],
        };
        assert_eq!(
            parse_splits(&splits.to_text(), Path::new("s")).unwrap(),
            splits
        );
        assert!(parse_splits("a nowhere\n", Path::new("s")).is_err());
    }
}
