//! Interaction logs: ingestion, preprocessing, student-level splitting and a
//! synthetic generator producing logs with the same schema.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NsktError, Result};

/// Column order of the raw interaction CSV.
pub const RAW_HEADER: [&str; 5] = ["student_id", "quiz_id", "skill_id", "score", "order_key"];

/// Column order of the preprocessed record files.
pub const RECORD_HEADER: [&str; 5] = ["student_index", "t", "skill_index", "quiz_index", "correct"];

/// One row of the raw interaction log. Empty identifiers mark missing values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub student_id: String,
    pub quiz_id: String,
    pub skill_id: String,
    pub score: i64,
    pub order_key: i64,
}

impl RawRecord {
    pub fn has_missing_id(&self) -> bool {
        self.student_id.trim().is_empty()
            || self.quiz_id.trim().is_empty()
            || self.skill_id.trim().is_empty()
    }
}

/// A single encoded interaction `(s_t, q_t, y_t)` of student `student` at step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub student: u32,
    pub t: u32,
    pub skill: u32,
    pub quiz: u32,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Real,
    Synthetic { seed: u64 },
}

/// Cardinalities of the categorical vocabularies plus the original identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub skill_names: Vec<String>,
    pub quiz_names: Vec<String>,
    pub student_names: Vec<String>,
}

impl Vocab {
    pub fn with_counts(n_skills: usize, n_quizzes: usize, n_students: usize) -> Self {
        Vocab {
            skill_names: (0..n_skills).map(|i| format!("s{i}")).collect(),
            quiz_names: (0..n_quizzes).map(|i| format!("q{i}")).collect(),
            student_names: (0..n_students).map(|i| format!("u{i}")).collect(),
        }
    }

    pub fn n_skills(&self) -> usize {
        self.skill_names.len()
    }

    pub fn n_quizzes(&self) -> usize {
        self.quiz_names.len()
    }

    pub fn n_students(&self) -> usize {
        self.student_names.len()
    }
}

/// Per-student interaction sequences sharing one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub students: Vec<Vec<Interaction>>,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, checking that every sequence is non-degenerate and
    /// that each student appears once with consecutive timesteps.
    pub fn new(students: Vec<Vec<Interaction>>, vocab: Vocab, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::new();
        for seq in &students {
            if seq.len() < 2 {
                return Err(NsktError::SequenceTooShort(seq.len()));
            }
            let student = seq[0].student;
            if !seen.insert(student) {
                return Err(NsktError::Config(format!("student {student} appears twice")));
            }
            for (i, it) in seq.iter().enumerate() {
                if it.student != student || it.t as usize != i {
                    return Err(NsktError::Config(format!(
                        "student {student}: interaction {i} has student {} and t {}",
                        it.student, it.t
                    )));
                }
                if it.skill as usize >= vocab.n_skills() || it.quiz as usize >= vocab.n_quizzes() {
                    return Err(NsktError::Config(format!(
                        "student {student}: index out of vocabulary at t {i}"
                    )));
                }
            }
        }
        Ok(Dataset {
            students,
            vocab,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn n_interactions(&self) -> usize {
        self.students.iter().map(Vec::len).sum()
    }

    pub fn sequence_lengths(&self) -> Vec<usize> {
        self.students.iter().map(Vec::len).collect()
    }

    /// Finds the sequence of a student by dense index.
    pub fn student(&self, student: u32) -> Option<&[Interaction]> {
        self.students
            .iter()
            .find(|s| s[0].student == student)
            .map(Vec::as_slice)
    }

    /// Keeps the chronological prefix of at most `cap` interactions per student.
    pub fn truncate(&self, cap: usize) -> Dataset {
        let cap = cap.max(2);
        Dataset {
            students: self
                .students
                .iter()
                .map(|s| s[..s.len().min(cap)].to_vec())
                .collect(),
            vocab: self.vocab.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Seeded student-level subsample keeping `max(1, ⌊ratio·n⌋)` students in
    /// their original order.
    pub fn subsample(&self, ratio: f64, seed: u64) -> Result<Dataset> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(NsktError::Config(format!("training ratio {ratio} not in (0, 1]")));
        }
        let n = self.students.len();
        let keep = ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n.max(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        Ok(self.select(&chosen))
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            students: indices.iter().map(|&i| self.students[i].clone()).collect(),
            vocab: self.vocab.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        let records = self.n_interactions();
        let quizzes: HashSet<u32> = self.students.iter().flatten().map(|i| i.quiz).collect();
        let skills: HashSet<u32> = self.students.iter().flatten().map(|i| i.skill).collect();
        let correct = self.students.iter().flatten().filter(|i| i.correct).count();
        let per = |k: usize| if k == 0 { 0.0 } else { records as f64 / k as f64 };
        DatasetStats {
            records,
            students: self.students.len(),
            quizzes: quizzes.len(),
            skills: skills.len(),
            avg_per_student: per(self.students.len()),
            avg_per_quiz: per(quizzes.len()),
            avg_per_skill: per(skills.len()),
            correct,
            incorrect: records - correct,
        }
    }
}

/// Counts mirroring the dataset summary table (records, entities, averages, classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    pub students: usize,
    pub quizzes: usize,
    pub skills: usize,
    pub avg_per_student: f64,
    pub avg_per_quiz: f64,
    pub avg_per_skill: f64,
    pub correct: usize,
    pub incorrect: usize,
}

/// Student-level partition ratios and shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 42,
        }
    }
}

impl SplitSpec {
    /// Partition sizes: floors of `ratio·n`, remainder handed out round-robin
    /// starting with the training partition.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NsktError::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        if [self.train, self.val, self.test].iter().any(|r| *r < 0.0) {
            return Err(NsktError::Config("split ratios must be non-negative".into()));
        }
        let floor = |r: f64| (r * n as f64 + 1e-9).floor() as usize;
        let mut sizes = [floor(self.train), floor(self.val), floor(self.test)];
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut slot = 0;
        while remainder > 0 {
            sizes[slot % 3] += 1;
            remainder -= 1;
            slot += 1;
        }
        Ok((sizes[0], sizes[1], sizes[2]))
    }
}

/// Maps a 0–100 score to correctness: 1 when at or above `threshold`.
pub fn binarize(score: i64, threshold: i64) -> bool {
    score >= threshold
}

/// Quantile with linear interpolation between closest ranks over sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `⌊Q3 + 1.5·(Q3 − Q1)⌋` for given quartiles.
pub fn fence_from_quartiles(q1: f64, q3: f64) -> usize {
    (q3 + 1.5 * (q3 - q1)).floor().max(0.0) as usize
}

/// Tukey upper fence of a list of sequence lengths.
pub fn tukey_fence(lengths: &[usize]) -> Result<usize> {
    if lengths.is_empty() {
        return Err(NsktError::EmptyInput("no sequence lengths to compute a fence from".into()));
    }
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(fence_from_quartiles(
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.75),
    ))
}

/// What [`preprocess`] dropped or trimmed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub records_in: usize,
    /// Zero-based input positions of rows dropped for missing identifiers.
    pub dropped_missing: Vec<usize>,
    pub students_too_short: Vec<String>,
    pub students_truncated: usize,
}

/// Cleans, encodes, orders and caps raw records.
pub fn preprocess(raw: &[RawRecord], threshold: i64, cap: usize) -> Result<(Dataset, PreprocessReport)> {
    let mut report = PreprocessReport {
        records_in: raw.len(),
        ..Default::default()
    };

    // Group by student in first-seen order.
    let mut student_order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&RawRecord>> = HashMap::new();
    for (pos, rec) in raw.iter().enumerate() {
        if rec.has_missing_id() {
            report.dropped_missing.push(pos);
            continue;
        }
        let key = rec.student_id.as_str();
        groups
            .entry(key)
            .or_insert_with(|| {
                student_order.push(key);
                Vec::new()
            })
            .push(rec);
    }

    let mut duplicates = Vec::new();
    for key in &student_order {
        let recs = groups.get_mut(key).expect("grouped student");
        recs.sort_by_key(|r| r.order_key);
        for pair in recs.windows(2) {
            if pair[0].order_key == pair[1].order_key {
                duplicates.push((key.to_string(), pair[0].order_key));
            }
        }
    }
    if !duplicates.is_empty() {
        duplicates.dedup();
        return Err(NsktError::DuplicateRecords(duplicates));
    }

    let mut skills: HashMap<&str, u32> = HashMap::new();
    let mut quizzes: HashMap<&str, u32> = HashMap::new();
    let mut vocab = Vocab {
        skill_names: Vec::new(),
        quiz_names: Vec::new(),
        student_names: Vec::new(),
    };
    let mut students = Vec::new();
    for key in &student_order {
        let recs = &groups[key];
        if recs.len() < 2 {
            report.students_too_short.push(key.to_string());
            continue;
        }
        if recs.len() > cap {
            report.students_truncated += 1;
        }
        let student = vocab.student_names.len() as u32;
        vocab.student_names.push(key.to_string());
        let seq = recs
            .iter()
            .take(cap.max(2))
            .enumerate()
            .map(|(t, r)| {
                let skill = *skills.entry(r.skill_id.as_str()).or_insert_with(|| {
                    vocab.skill_names.push(r.skill_id.clone());
                    (vocab.skill_names.len() - 1) as u32
                });
                let quiz = *quizzes.entry(r.quiz_id.as_str()).or_insert_with(|| {
                    vocab.quiz_names.push(r.quiz_id.clone());
                    (vocab.quiz_names.len() - 1) as u32
                });
                Interaction {
                    student,
                    t: t as u32,
                    skill,
                    quiz,
                    correct: binarize(r.score, threshold),
                }
            })
            .collect();
        students.push(seq);
    }
    let dataset = Dataset::new(students, vocab, Provenance::Real)?;
    Ok((dataset, report))
}

/// Lengths of the per-student groups after dropping rows with missing identifiers.
pub fn raw_sequence_lengths(raw: &[RawRecord]) -> Vec<usize> {
    let mut order = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for rec in raw.iter().filter(|r| !r.has_missing_id()) {
        let c = counts.entry(rec.student_id.as_str()).or_insert_with(|| {
            order.push(rec.student_id.as_str());
            0
        });
        *c += 1;
    }
    order.iter().map(|k| counts[k]).collect()
}

/// Shuffles students by seed and partitions them into (train, val, test).
pub fn split_students(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    if n < 3 {
        return Err(NsktError::EmptyInput(format!("{n} students cannot be split three ways")));
    }
    let (n_train, n_val, _) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        dataset.select(&idx)
    };
    Ok((pick(train), pick(val), pick(test)))
}

pub fn read_raw_csv<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RAW_HEADER {
        return Err(NsktError::Schema {
            row: 1,
            message: format!("expected header `{}`", RAW_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let row_no = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != RAW_HEADER.len() {
            return Err(NsktError::Schema {
                row: row_no,
                message: format!("expected {} fields, found {}", RAW_HEADER.len(), row.len()),
            });
        }
        let int = |field: &str, name: &str| {
            field.parse::<i64>().map_err(|_| NsktError::Schema {
                row: row_no,
                message: format!("`{name}` is not an integer: `{field}`"),
            })
        };
        let score = int(&row[3], "score")?;
        if !(0..=100).contains(&score) {
            return Err(NsktError::Schema {
                row: row_no,
                message: format!("score {score} outside 0..=100"),
            });
        }
        out.push(RawRecord {
            student_id: row[0].to_string(),
            quiz_id: row[1].to_string(),
            skill_id: row[2].to_string(),
            score,
            order_key: int(&row[4], "order_key")?,
        });
    }
    Ok(out)
}

/// Writes `student_index,t,skill_index,quiz_index,correct` records, optionally
/// preceded by `#`-comment lines.
pub fn write_records<W: Write>(dataset: &Dataset, comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{}", RECORD_HEADER.join(","))?;
    for it in dataset.students.iter().flatten() {
        writeln!(
            out,
            "{},{},{},{},{}",
            it.student, it.t, it.skill, it.quiz, it.correct as u8
        )?;
    }
    Ok(())
}

/// Reads record files written by [`write_records`]. Lines starting with `#` are ignored.
pub fn read_records<R: Read>(reader: R, vocab: Vocab, provenance: Provenance) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut by_student: Vec<Vec<Interaction>> = Vec::new();
    let mut pos: HashMap<u32, usize> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |k: usize| -> Result<u32> {
            row.get(k)
                .and_then(|v| v.trim().parse::<u32>().ok())
                .ok_or_else(|| NsktError::Schema {
                    row: i + 2,
                    message: format!("bad `{}` field", RECORD_HEADER[k]),
                })
        };
        let it = Interaction {
            student: field(0)?,
            t: field(1)?,
            skill: field(2)?,
            quiz: field(3)?,
            correct: field(4)? != 0,
        };
        let slot = *pos.entry(it.student).or_insert_with(|| {
            by_student.push(Vec::new());
            by_student.len() - 1
        });
        by_student[slot].push(it);
    }
    for seq in &mut by_student {
        seq.sort_by_key(|i| i.t);
    }
    Dataset::new(by_student, vocab, provenance)
}

/// Parameters of the synthetic log generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_students: usize,
    pub n_skills: usize,
    pub n_quizzes: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_students: 200,
            n_skills: 13,
            n_quizzes: 100,
            max_len: 100,
            seed: 7,
        }
    }
}

// Generator constants. Logit offsets unless noted.
const STAY_PROB: f64 = 0.2;
const ABILITY_SD: f64 = 0.3;
const SWAP_PROB: f64 = 0.04;
const PLANT_STRUGGLE_PROB: f64 = 0.12;
const PLANT_SUCCESS_PROB: f64 = 0.10;
const STUCK_PENALTY: f64 = 3.5;
const STREAK_BOOST: f64 = 1.5;
/// Extra logit per attempt once a run is past its threshold.
const RUN_STEP: f64 = 0.5;
const RUN_CAP: usize = 4;
const BASE_SHIFT: f64 = 1.8;
/// Logit swing between a quiz never answered correctly and one always
/// answered correctly.
const RATE_SWING: f64 = 5.0;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates a deterministic synthetic dataset.
///
/// Each student practises a small, slowly rotating working set of quizzes,
/// switching quiz after most attempts. The success logit of an attempt is
/// the student's baseline for the quiz, plus a term in the running success
/// rate on that quiz, plus a regime offset: a penalty after three
/// consecutive errors on the quiz and a boost after two consecutive
/// successes, both growing while the run lasts. Struggle and success runs
/// are also planted directly. Quiz `q` exercises skill `q mod n_skills`.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n_students == 0 || spec.n_skills == 0 || spec.n_quizzes == 0 {
        return Err(NsktError::Config("synthetic counts must be at least 1".into()));
    }
    if spec.max_len < 2 {
        return Err(NsktError::Config("synthetic max_len must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let difficulty: Vec<f64> = (0..spec.n_quizzes).map(|_| 0.6 * unit.sample(&mut rng)).collect();

    let mut students = Vec::with_capacity(spec.n_students);
    for u in 0..spec.n_students {
        let ability = ABILITY_SD * unit.sample(&mut rng);
        let set_size = spec.n_quizzes.min(3 + rng.random_range(0..4));
        let mut pool: Vec<usize> = (0..spec.n_quizzes).collect();
        pool.shuffle(&mut rng);
        let mut working: Vec<usize> = pool[..set_size].to_vec();

        let mut offset: HashMap<usize, f64> = HashMap::new();
        let mut history: HashMap<usize, Vec<bool>> = HashMap::new();
        let mut current = working[0];
        // (quiz, forced outcome, remaining)
        let mut planted: Option<(usize, bool, usize)> = None;
        let mut seq = Vec::with_capacity(spec.max_len);

        for t in 0..spec.max_len {
            let mut forced = None;
            if let Some((q, outcome, left)) = planted {
                current = q;
                forced = Some(outcome);
                planted = if left > 1 { Some((q, outcome, left - 1)) } else { None };
            } else if t == 0 || rng.random::<f64>() >= STAY_PROB {
                if rng.random::<f64>() < SWAP_PROB && spec.n_quizzes > working.len() {
                    let slot = rng.random_range(0..working.len());
                    let fresh = loop {
                        let q = rng.random_range(0..spec.n_quizzes);
                        if !working.contains(&q) {
                            break q;
                        }
                    };
                    working[slot] = fresh;
                }
                current = working[rng.random_range(0..working.len())];
                let roll = rng.random::<f64>();
                if roll < PLANT_STRUGGLE_PROB {
                    forced = Some(false);
                    planted = Some((current, false, 2));
                } else if roll < PLANT_STRUGGLE_PROB + PLANT_SUCCESS_PROB {
                    forced = Some(true);
                    planted = Some((current, true, 1));
                }
            }

            let q = current;
            let base = ability - difficulty[q] + BASE_SHIFT;
            let offset = *offset.entry(q).or_insert_with(|| 0.3 * unit.sample(&mut rng));
            let hist = history.entry(q).or_default();
            let rate = (hist.iter().filter(|c| **c).count() as f64 + 1.0) / (hist.len() as f64 + 2.0);
            let run = hist.iter().rev().take_while(|c| **c == hist[hist.len() - 1]).count();
            let regime = match hist.last() {
                Some(false) if run >= 3 => -STUCK_PENALTY - RUN_STEP * (run - 3).min(RUN_CAP) as f64,
                Some(true) if run >= 2 => STREAK_BOOST + RUN_STEP * (run - 2).min(RUN_CAP) as f64,
                _ => 0.0,
            };
            let p = sigmoid(base + offset + RATE_SWING * (2.0 * rate - 1.0) + regime);
            let draw = rng.random::<f64>();
            let correct = forced.unwrap_or(draw < p);
            hist.push(correct);

            seq.push(Interaction {
                student: u as u32,
                t: t as u32,
                skill: (q % spec.n_skills) as u32,
                quiz: q as u32,
                correct,
            });
        }
        students.push(seq);
    }

    Dataset::new(
        students,
        Vocab::with_counts(spec.n_skills, spec.n_quizzes, spec.n_students),
        Provenance::Synthetic { seed: spec.seed },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(student: &str, key: i64, score: i64) -> RawRecord {
        RawRecord {
            student_id: student.into(),
            quiz_id: "qa".into(),
            skill_id: "sa".into(),
            score,
            order_key: key,
        }
    }

    #[test]
    fn binarize_threshold_edges() {
        assert!(!binarize(36, 37));
        assert!(binarize(37, 37));
        assert!(binarize(0, 0));
    }

    #[test]
    fn fence_of_published_quartiles() {
        assert_eq!(fence_from_quartiles(5.0, 193.0), 475);
        // Five points whose interpolated quartiles are exactly 5 and 193.
        assert_eq!(tukey_fence(&[1, 5, 46, 193, 1437]).unwrap(), 475);
    }

    #[test]
    fn fence_of_constant_lengths() {
        assert_eq!(tukey_fence(&[9; 7]).unwrap(), 9);
        assert!(tukey_fence(&[]).is_err());
    }

    #[test]
    fn preprocess_sorts_by_order_key() {
        let recs = vec![raw("a", 3, 90), raw("a", 1, 10), raw("a", 2, 50)];
        let (ds, _) = preprocess(&recs, 37, 475).unwrap();
        let seq = &ds.students[0];
        assert_eq!(seq.iter().map(|i| i.t).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(seq.iter().map(|i| i.correct).collect::<Vec<_>>(), vec![false, true, true]);
    }

    #[test]
    fn preprocess_drops_short_students_and_truncates() {
        let mut recs = vec![raw("solo", 1, 80)];
        recs.extend((0..600).map(|k| raw("long", k, 80)));
        let (ds, report) = preprocess(&recs, 37, 475).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.students[0].len(), 475);
        assert_eq!(report.students_too_short, vec!["solo".to_string()]);
        assert_eq!(report.students_truncated, 1);
    }

    #[test]
    fn preprocess_rejects_duplicate_order_keys() {
        let recs = vec![raw("a", 1, 80), raw("a", 1, 20), raw("a", 2, 20)];
        match preprocess(&recs, 37, 475) {
            Err(NsktError::DuplicateRecords(d)) => assert_eq!(d, vec![("a".to_string(), 1)]),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn preprocess_drops_missing_identifiers() {
        let mut missing = raw("a", 5, 80);
        missing.skill_id = String::new();
        let recs = vec![raw("a", 1, 80), missing, raw("a", 2, 20)];
        let (ds, report) = preprocess(&recs, 37, 475).unwrap();
        assert_eq!(report.dropped_missing, vec![1]);
        assert_eq!(ds.students[0].len(), 2);
    }

    #[test]
    fn split_sizes_exact_division() {
        let spec = SplitSpec {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(spec.sizes(10).unwrap(), (7, 1, 2));
        let bad = SplitSpec {
            train: 0.5,
            ..spec
        };
        assert!(matches!(bad.sizes(10), Err(NsktError::Config(_))));
    }

    #[test]
    fn split_sizes_match_floor_remainder_oracle() {
        // Independent recomputation: floors, then leftovers train → val → test.
        let n = 167usize;
        let floors = [116usize, 16, 33]; // 116.9, 16.7, 33.4
        let leftover = n - floors.iter().sum::<usize>();
        let mut expected = floors;
        for slot in 0..leftover {
            expected[slot % 3] += 1;
        }
        let got = SplitSpec::default().sizes(n).unwrap();
        assert_eq!([got.0, got.1, got.2], expected);
        assert_eq!(expected, [117, 17, 33]);
    }

    #[test]
    fn synth_degenerate_vocab() {
        let ds = synthesize(&SynthSpec {
            n_students: 1,
            n_skills: 1,
            n_quizzes: 1,
            max_len: 5,
            seed: 3,
        })
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.students[0].len(), 5);
        assert!(ds.students[0].iter().all(|i| i.skill == 0 && i.quiz == 0));
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            n_students: 20,
            ..Default::default()
        };
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
    }

    #[test]
    fn synth_class_balance() {
        let ds = synthesize(&SynthSpec::default()).unwrap();
        let (right, total) = ds
            .students
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(r, n), i| (r + i.correct as usize, n + 1));
        let rate = right as f64 / total as f64;
        assert_eq!(total, 200 * 100);
        assert!((0.55..=0.85).contains(&rate), "correct rate {rate}");
    }

    #[test]
    fn synth_contains_runs_on_one_quiz() {
        let ds = synthesize(&SynthSpec::default()).unwrap();
        let mut wrong3 = 0;
        let mut right2 = 0;
        for seq in &ds.students {
            for w in seq.windows(3) {
                if w.iter().all(|i| i.quiz == w[0].quiz && !i.correct) {
                    wrong3 += 1;
                }
            }
            for w in seq.windows(2) {
                if w.iter().all(|i| i.quiz == w[0].quiz && i.correct) {
                    right2 += 1;
                }
            }
        }
        assert!(wrong3 > 200 && right2 > 200, "{wrong3} {right2}");
    }

    #[test]
    fn record_files_round_trip() {
        let ds = synthesize(&SynthSpec {
            n_students: 4,
            max_len: 6,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_records(&ds, &["config_hash=abc seed=1".into()], &mut buf).unwrap();
        let back = read_records(buf.as_slice(), ds.vocab.clone(), ds.provenance.clone()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn raw_csv_schema_errors_carry_row() {
        let text = "student_id,quiz_id,skill_id,score,order_key\na,q,s,50,1\na,q,s,abc,2\n";
        match read_raw_csv(text.as_bytes()) {
            Err(NsktError::Schema { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected schema error, got {other:?}"),
        }
        assert!(read_raw_csv("a,b,c\n".as_bytes()).is_err());
    }
}
