use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CrashReport};
use crate::error::{Error, Result};
use crate::trace::{Language, StackFrame, StackTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub buckets: usize,
    pub reports_per_bucket: usize,
    /// Number of distinct application frames to draw prototypes from.
    pub frame_vocabulary: usize,
    /// Per-frame probability of a rename, and independently of an inserted
    /// frame; per-trace probability of losing top frames.
    pub mutation_rate: f64,
    pub seed: u64,
    pub day_span: u32,
    /// Reports of one bucket arrive within this many days of its first report.
    pub bucket_lifetime_days: u32,
    pub multi_trace_prob: f64,
    /// Consecutive buckets grouped into one family share a crash site: the
    /// exception, the library tail and the top application frames.
    pub family_size: usize,
    pub shared_top_frames: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            buckets: 500,
            reports_per_bucket: 4,
            frame_vocabulary: 1500,
            mutation_rate: 0.3,
            seed: 1,
            day_span: 1000,
            bucket_lifetime_days: 120,
            multi_trace_prob: 0.25,
            family_size: 4,
            shared_top_frames: 3,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.buckets == 0 || self.reports_per_bucket == 0 || self.family_size == 0 || self.frame_vocabulary == 0 || self.day_span == 0 {
            return Err(Error::config("synthetic corpus counts must be positive"));
        }
        for (name, p) in [("mutation_rate", self.mutation_rate), ("multi_trace_prob", self.multi_trace_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const CLASS_SUFFIXES: &[&str] = &["", "", "Manager", "Handler", "Impl", "Factory", "Service", "Provider", "Support"];
const VERB_GROUPS: &[&[&str]] = &[
    &["get", "fetch", "find", "load", "lookup"],
    &["set", "update", "store", "put"],
    &["create", "build", "make", "init"],
    &["process", "handle", "apply", "run"],
    &["read", "parse", "decode", "scan"],
    &["write", "flush", "emit", "save"],
    &["notify", "fire", "dispatch", "post"],
    &["check", "validate", "verify", "ensure"],
];
const EXCEPTIONS: &[&str] = &[
    "java.lang.NullPointerException",
    "java.lang.IllegalStateException",
    "java.lang.IllegalArgumentException",
    "java.lang.ArrayIndexOutOfBoundsException",
    "java.lang.ClassCastException",
    "java.util.ConcurrentModificationException",
    "java.io.IOException",
    "java.lang.AssertionError",
];
const LIBRARY_STACKS: usize = 6;
const LIBRARY_DEPTH: usize = 8;

#[derive(Debug, Clone)]
struct SynthFrame {
    package: String,
    class: String,
    verb_group: usize,
    verb: usize,
    noun: String,
}

impl SynthFrame {
    fn to_frame(&self) -> StackFrame {
        let verb = VERB_GROUPS[self.verb_group][self.verb];
        let mut frame = StackFrame::new(format!("{}.{}", self.package, self.class), format!("{verb}{}", self.noun));
        frame.source_file = format!("{}.java", self.class);
        frame
    }
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .flat_map(|_| {
            [
                *CONSONANTS.choose(rng).expect("non-empty") as char,
                *VOWELS.choose(rng).expect("non-empty") as char,
            ]
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars
        .next()
        .map(|c| c.to_ascii_uppercase().to_string() + chars.as_str())
        .unwrap_or_default()
}

struct Vocabulary {
    frames: Vec<SynthFrame>,
    library: Vec<Vec<SynthFrame>>,
}

impl Vocabulary {
    fn generate(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let packages: Vec<String> = (0..(size / 40).max(8))
            .map(|_| format!("org.{}.{}", word(rng, 2), word(rng, 2)))
            .collect();
        let classes: Vec<(usize, String)> = (0..(size / 6).max(16))
            .map(|_| {
                let suffix = CLASS_SUFFIXES.choose(rng).expect("non-empty");
                (rng.gen_range(0..packages.len()), capitalize(&word(rng, 2)) + suffix)
            })
            .collect();
        let random_frame = |rng: &mut ChaCha8Rng| {
            let (package, class) = classes.choose(rng).expect("non-empty").clone();
            let verb_group = rng.gen_range(0..VERB_GROUPS.len());
            let verb = rng.gen_range(0..VERB_GROUPS[verb_group].len());
            let syllables = rng.gen_range(1..=2);
            SynthFrame {
                package: packages[package].clone(),
                class,
                verb_group,
                verb,
                noun: capitalize(&word(rng, syllables)),
            }
        };
        let frames = (0..size).map(|_| random_frame(rng)).collect();
        let library = (0..LIBRARY_STACKS)
            .map(|_| (0..LIBRARY_DEPTH).map(|_| random_frame(rng)).collect())
            .collect();
        Vocabulary { frames, library }
    }

    /// Popular frames are shared by many buckets: index drawn as `size * u^2`.
    fn popular_frame(&self, rng: &mut ChaCha8Rng) -> SynthFrame {
        let u: f64 = rng.gen();
        let idx = ((self.frames.len() as f64) * u * u) as usize;
        self.frames[idx.min(self.frames.len() - 1)].clone()
    }
}

#[derive(Debug, Clone)]
struct Prototype {
    header: String,
    app: Vec<SynthFrame>,
    library: Vec<SynthFrame>,
}

impl Prototype {
    /// A sibling of `self`: the same crash site with its own frames below.
    fn sibling(&self, vocab: &Vocabulary, shared: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut app: Vec<SynthFrame> = self.app.iter().take(shared).cloned().collect();
        app.extend((0..rng.gen_range(3..=6)).map(|_| vocab.popular_frame(rng)));
        Prototype {
            header: self.header.clone(),
            app,
            library: self.library.clone(),
        }
    }

    fn generate(vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Self {
        let app = (0..rng.gen_range(4..=9)).map(|_| vocab.popular_frame(rng)).collect();
        let stack = vocab.library.choose(rng).expect("non-empty");
        let depth = rng.gen_range(3..=6);
        Prototype {
            header: EXCEPTIONS.choose(rng).expect("non-empty").to_string(),
            app,
            library: stack[LIBRARY_DEPTH - depth..].to_vec(),
        }
    }

    fn mutate(&self, vocab: &Vocabulary, rate: f64, rng: &mut ChaCha8Rng) -> StackTrace {
        let mut app: Vec<SynthFrame> = Vec::with_capacity(self.app.len() + 2);
        for frame in &self.app {
            let mut frame = frame.clone();
            if rng.gen_bool(rate) {
                rename(&mut frame, rng);
            }
            app.push(frame);
            if rng.gen_bool(rate) {
                app.push(vocab.popular_frame(rng));
            }
        }
        if rng.gen_bool(rate) && app.len() > 2 {
            let drop = rng.gen_range(1..=2).min(app.len() - 2);
            app.drain(..drop);
        }
        let frames = app.iter().chain(&self.library).map(SynthFrame::to_frame).collect();
        StackTrace::new(Language::Java, self.header.clone(), frames)
    }
}

/// Renames keep the noun and swap the verb for a synonym or the class for a
/// sibling implementation.
fn rename(frame: &mut SynthFrame, rng: &mut ChaCha8Rng) {
    if rng.gen_bool(0.7) {
        let group = VERB_GROUPS[frame.verb_group];
        let others: Vec<usize> = (0..group.len()).filter(|&v| v != frame.verb).collect();
        frame.verb = *others.choose(rng).expect("verb groups have synonyms");
    } else if let Some(base) = frame.class.strip_suffix("Impl") {
        frame.class = base.to_string();
    } else {
        frame.class.push_str("Impl");
    }
}

/// Generates a corpus whose buckets are noisy copies of per-bucket prototype
/// traces.
pub fn synth_corpus(params: &SynthParams) -> Result<Corpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let vocab = Vocabulary::generate(params.frame_vocabulary, &mut rng);
    let lifetime = params.bucket_lifetime_days.min(params.day_span - 1);

    let mut drafts: Vec<(u32, u64, usize, Vec<StackTrace>)> = Vec::new();
    let mut family: Option<Prototype> = None;
    for bucket in 0..params.buckets {
        if bucket % params.family_size == 0 {
            family = Some(Prototype::generate(&vocab, &mut rng));
        }
        let site = family.as_ref().expect("set on the first bucket");
        let primary = site.sibling(&vocab, params.shared_top_frames, &mut rng);
        let cause = Prototype::generate(&vocab, &mut rng);
        let start = rng.gen_range(0..params.day_span - lifetime);
        for k in 0..params.reports_per_bucket {
            let day = if k == 0 { start } else { start + rng.gen_range(0..=lifetime) };
            let mut traces = vec![primary.mutate(&vocab, params.mutation_rate, &mut rng)];
            if rng.gen_bool(params.multi_trace_prob) {
                traces.push(cause.mutate(&vocab, params.mutation_rate, &mut rng));
            }
            drafts.push((day, rng.gen(), bucket, traces));
        }
    }
    let first_day = drafts.iter().map(|d| d.0).min().unwrap_or(0);
    drafts.sort_by_key(|d| (d.0, d.1));
    let reports = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (day, _, bucket, traces))| CrashReport {
            report_id: format!("r{i:06}"),
            timestamp_day: day - first_day,
            bucket_id: format!("b{bucket:05}"),
            traces,
        })
        .collect();
    Corpus::new(Language::Java, reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rate: f64) -> SynthParams {
        SynthParams {
            buckets: 20,
            reports_per_bucket: 3,
            mutation_rate: rate,
            multi_trace_prob: 0.0,
            ..SynthParams::default()
        }
    }

    #[test]
    fn zero_mutation_gives_identical_bucket_traces() {
        let corpus = synth_corpus(&small(0.0)).unwrap();
        for bucket in corpus.buckets().values() {
            let first = &corpus.report(&bucket.report_ids[0]).unwrap().traces;
            for id in &bucket.report_ids[1..] {
                assert_eq!(&corpus.report(id).unwrap().traces, first);
            }
        }
    }

    #[test]
    fn counts() {
        let corpus = synth_corpus(&SynthParams::default()).unwrap();
        assert_eq!(corpus.len(), 2000);
        assert_eq!(corpus.buckets().len(), 500);
        assert_eq!(corpus.reports()[0].timestamp_day, 0);
        let stats = corpus.stats();
        assert!(stats.multi_trace_pct > 15.0 && stats.multi_trace_pct < 35.0, "{}", stats.multi_trace_pct);
    }

    #[test]
    fn reproducible_hash() {
        let a = synth_corpus(&small(0.3)).unwrap();
        let b = synth_corpus(&small(0.3)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = synth_corpus(&SynthParams { seed: 2, ..small(0.3) }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn mutation_changes_traces() {
        let corpus = synth_corpus(&small(0.5)).unwrap();
        let differing = corpus
            .buckets()
            .values()
            .filter(|b| {
                let first = &corpus.report(&b.report_ids[0]).unwrap().traces;
                b.report_ids[1..].iter().any(|id| &corpus.report(id).unwrap().traces != first)
            })
            .count();
        assert!(differing > 15);
    }

    #[test]
    fn invalid_params() {
        assert!(synth_corpus(&SynthParams { mutation_rate: 1.5, ..small(0.0) }).is_err());
        assert!(synth_corpus(&SynthParams { buckets: 0, ..small(0.0) }).is_err());
    }

    #[test]
    fn written_corpus_reingests_identically() {
        let corpus = synth_corpus(&SynthParams { multi_trace_prob: 0.5, ..small(0.3) }).unwrap();
        let mut buf = Vec::new();
        corpus.write_to(&mut buf).unwrap();
        let back = crate::corpus::ingest_reader(buf.as_slice(), std::path::Path::new("synth"), Language::Java).unwrap();
        assert_eq!(back.content_hash(), corpus.content_hash());
        assert_eq!(back.len(), corpus.len());
    }
}
