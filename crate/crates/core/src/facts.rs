//! Symbolic encoding of student histories: ground facts, temporal
//! transitions and next-step queries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::error::{NsktError, Result};

/// A ground constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Const {
    Time(u32),
    Skill(u32),
    Quiz(u32),
    Right,
    Wrong,
    /// Filler for unused argument slots of low-arity predicates.
    Unit,
}

impl Const {
    pub fn token(correct: bool) -> Const {
        if correct {
            Const::Right
        } else {
            Const::Wrong
        }
    }

    pub fn time(self) -> Option<u32> {
        match self {
            Const::Time(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Const {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const::Time(t) => write!(f, "t{t}"),
            Const::Skill(s) => write!(f, "s{s}"),
            Const::Quiz(q) => write!(f, "q{q}"),
            Const::Right => f.write_str("right"),
            Const::Wrong => f.write_str("wrong"),
            Const::Unit => f.write_str("_"),
        }
    }
}

impl FromStr for Const {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        let num = |rest: &str| {
            rest.parse::<u32>()
                .map_err(|_| NsktError::Parse(format!("bad constant `{s}`")))
        };
        match s {
            "right" => Ok(Const::Right),
            "wrong" => Ok(Const::Wrong),
            "_" => Ok(Const::Unit),
            _ if s.starts_with('t') => num(&s[1..]).map(Const::Time),
            _ if s.starts_with('s') => num(&s[1..]).map(Const::Skill),
            _ if s.starts_with('q') => num(&s[1..]).map(Const::Quiz),
            _ => Err(NsktError::Parse(format!("bad constant `{s}`"))),
        }
    }
}

/// Every predicate the templates use. Input relations come from the
/// encoder; embedding relations are backed by parameters; the rest are
/// derived by rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pred {
    SkillInput,
    QuizInput,
    CorrectInput,
    Next,
    Less,
    Skill,
    Quiz,
    RnnH0(u8),
    CorrectInputEmbed,
    CombinedEmbed,
    RnnOut(u8),
    FinalNnOut,
    AvgEmbed,
    Mastered,
    NotMastered,
    Correct,
}

impl Pred {
    pub fn arity(self) -> usize {
        match self {
            Pred::SkillInput
            | Pred::QuizInput
            | Pred::CorrectInput
            | Pred::Next
            | Pred::Less
            | Pred::AvgEmbed
            | Pred::Mastered
            | Pred::NotMastered
            | Pred::Correct => 2,
            Pred::Skill
            | Pred::Quiz
            | Pred::CorrectInputEmbed
            | Pred::CombinedEmbed
            | Pred::RnnOut(_)
            | Pred::FinalNnOut => 1,
            Pred::RnnH0(_) => 0,
        }
    }

    /// Relations produced by the fact encoder.
    pub fn is_input(self) -> bool {
        matches!(
            self,
            Pred::SkillInput | Pred::QuizInput | Pred::CorrectInput | Pred::Next | Pred::Less
        )
    }

    /// Relations whose atoms exist for every valid constant and carry a
    /// learnable value.
    pub fn is_embedding(self) -> bool {
        matches!(self, Pred::Skill | Pred::Quiz | Pred::RnnH0(_))
    }

    pub fn name(self) -> String {
        match self {
            Pred::SkillInput => "skill_input".into(),
            Pred::QuizInput => "quiz_input".into(),
            Pred::CorrectInput => "correct_input".into(),
            Pred::Next => "next".into(),
            Pred::Less => "less".into(),
            Pred::Skill => "skill".into(),
            Pred::Quiz => "quiz".into(),
            Pred::RnnH0(l) => format!("rnn_{l}_h0"),
            Pred::CorrectInputEmbed => "correct_input_embed".into(),
            Pred::CombinedEmbed => "combined_embed".into(),
            Pred::RnnOut(l) => format!("rnn_{l}_out"),
            Pred::FinalNnOut => "final_nn_out".into(),
            Pred::AvgEmbed => "avg_embed".into(),
            Pred::Mastered => "mastered".into(),
            Pred::NotMastered => "not_mastered".into(),
            Pred::Correct => "correct".into(),
        }
    }
}

impl FromStr for Pred {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        let layer = |inner: &str| {
            inner
                .parse::<u8>()
                .map_err(|_| NsktError::Parse(format!("bad predicate `{s}`")))
        };
        Ok(match s {
            "skill_input" => Pred::SkillInput,
            "quiz_input" => Pred::QuizInput,
            "correct_input" => Pred::CorrectInput,
            "next" => Pred::Next,
            "less" => Pred::Less,
            "skill" => Pred::Skill,
            "quiz" => Pred::Quiz,
            "correct_input_embed" => Pred::CorrectInputEmbed,
            "combined_embed" => Pred::CombinedEmbed,
            "final_nn_out" => Pred::FinalNnOut,
            "avg_embed" => Pred::AvgEmbed,
            "mastered" => Pred::Mastered,
            "not_mastered" => Pred::NotMastered,
            "correct" => Pred::Correct,
            _ if s.starts_with("rnn_") && s.ends_with("_h0") => Pred::RnnH0(layer(&s[4..s.len() - 3])?),
            _ if s.starts_with("rnn_") && s.ends_with("_out") => Pred::RnnOut(layer(&s[4..s.len() - 4])?),
            _ => return Err(NsktError::Parse(format!("unknown predicate `{s}`"))),
        })
    }
}

/// A ground atom. Slots past the predicate's arity hold [`Const::Unit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: Pred,
    pub args: [Const; 2],
}

impl Atom {
    pub fn new0(pred: Pred) -> Atom {
        Atom {
            pred,
            args: [Const::Unit, Const::Unit],
        }
    }

    pub fn new1(pred: Pred, a: Const) -> Atom {
        Atom {
            pred,
            args: [a, Const::Unit],
        }
    }

    pub fn new2(pred: Pred, a: Const, b: Const) -> Atom {
        Atom { pred, args: [a, b] }
    }

    pub fn args(&self) -> &[Const] {
        &self.args[..self.pred.arity()]
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pred.name())?;
        if self.pred.arity() > 0 {
            let args: Vec<String> = self.args().iter().map(Const::to_string).collect();
            write!(f, "({})", args.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for Atom {
    type Err = NsktError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(NsktError::Parse(format!("bad atom `{s}`"))),
            None => (s, ""),
        };
        let pred: Pred = name.parse()?;
        let consts = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(Const::from_str)
            .collect::<Result<Vec<_>>>()?;
        if consts.len() != pred.arity() {
            return Err(NsktError::Parse(format!("arity mismatch in `{s}`")));
        }
        let mut atom = Atom::new0(pred);
        atom.args[..consts.len()].copy_from_slice(&consts);
        Ok(atom)
    }
}

impl Serialize for Atom {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Atom {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which concept indexes the output predicate `correct(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    #[default]
    Quiz,
    Skill,
}

impl Context {
    pub fn concept(self, it: &Interaction) -> Const {
        match self {
            Context::Quiz => Const::Quiz(it.quiz),
            Context::Skill => Const::Skill(it.skill),
        }
    }

    /// The input relation linking a timestep to its concept.
    pub fn input_pred(self) -> Pred {
        match self {
            Context::Quiz => Pred::QuizInput,
            Context::Skill => Pred::SkillInput,
        }
    }

    /// The embedding relation of the concept.
    pub fn embedding_pred(self) -> Pred {
        match self {
            Context::Quiz => Pred::Quiz,
            Context::Skill => Pred::Skill,
        }
    }
}

/// A next-step prediction target `correct(t, x)` with its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub t: u32,
    pub target: Const,
    pub label: bool,
}

impl Query {
    pub fn atom(&self) -> Atom {
        Atom::new2(Pred::Correct, Const::Time(self.t), self.target)
    }
}

/// A student's history as ground facts plus one query per predicted step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub student: u32,
    pub steps: usize,
    pub context: Context,
    pub facts: Vec<Atom>,
    pub queries: Vec<Query>,
}

/// Encodes a student's sequence with one query `correct(t+1, x_{t+1})` per
/// step `t+1 ∈ [1, n)`.
pub fn encode_student(sequence: &[Interaction], context: Context) -> Result<Sample> {
    if sequence.len() < 2 {
        return Err(NsktError::SequenceTooShort(sequence.len()));
    }
    let queries = sequence[1..]
        .iter()
        .map(|it| Query {
            t: it.t,
            target: context.concept(it),
            label: it.correct,
        })
        .collect();
    Ok(encode_with_queries(sequence, context, queries))
}

/// Encodes the facts of a sequence with caller-chosen queries.
pub fn encode_with_queries(sequence: &[Interaction], context: Context, queries: Vec<Query>) -> Sample {
    let n = sequence.len();
    let mut facts = Vec::with_capacity(3 * n + (n.saturating_sub(1)) + n * n.saturating_sub(1) / 2);
    for it in sequence {
        let t = Const::Time(it.t);
        facts.push(Atom::new2(Pred::SkillInput, t, Const::Skill(it.skill)));
        facts.push(Atom::new2(Pred::QuizInput, t, Const::Quiz(it.quiz)));
        facts.push(Atom::new2(Pred::CorrectInput, t, Const::token(it.correct)));
    }
    for t in 1..n as u32 {
        facts.push(Atom::new2(Pred::Next, Const::Time(t - 1), Const::Time(t)));
    }
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            facts.push(Atom::new2(Pred::Less, Const::Time(i), Const::Time(j)));
        }
    }
    Sample {
        student: sequence.first().map_or(0, |i| i.student),
        steps: n,
        context,
        facts,
        queries,
    }
}

impl Sample {
    /// Line-oriented text form: one `predicate(term,term)` per fact, then
    /// `query correct(t,x) label` per query.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.facts {
            out.push_str(&f.to_string());
            out.push('\n');
        }
        for q in &self.queries {
            out.push_str(&format!("query {} {}\n", q.atom(), q.label as u8));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(items: &[(u32, u32, bool)]) -> Vec<Interaction> {
        items
            .iter()
            .enumerate()
            .map(|(t, &(skill, quiz, correct))| Interaction {
                student: 0,
                t: t as u32,
                skill,
                quiz,
                correct,
            })
            .collect()
    }

    #[test]
    fn smallest_sample() {
        let s = encode_student(&seq(&[(3, 954, true), (3, 954, false)]), Context::Quiz).unwrap();
        let text = s.to_text();
        assert_eq!(
            text,
            "skill_input(t0,s3)\nquiz_input(t0,q954)\ncorrect_input(t0,right)\n\
             skill_input(t1,s3)\nquiz_input(t1,q954)\ncorrect_input(t1,wrong)\n\
             next(t0,t1)\nless(t0,t1)\nquery correct(t1,q954) 0\n"
        );
    }

    #[test]
    fn query_count_and_fact_formula() {
        for n in 2..9usize {
            let items: Vec<_> = (0..n).map(|i| (i as u32 % 2, i as u32, i % 3 == 0)).collect();
            let s = encode_student(&seq(&items), Context::Quiz).unwrap();
            assert_eq!(s.queries.len(), n - 1);
            assert_eq!(s.facts.len(), 3 * n + (n - 1) + n * (n - 1) / 2);
        }
        let s = encode_student(&seq(&[(0, 0, true), (0, 1, true), (1, 2, false)]), Context::Skill).unwrap();
        assert_eq!(s.queries.iter().map(|q| q.t).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.queries[1].target, Const::Skill(1));
        assert!(!s.queries[1].label);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            encode_student(&seq(&[(0, 0, true)]), Context::Quiz),
            Err(NsktError::SequenceTooShort(1))
        ));
    }

    #[test]
    fn atom_text_round_trip() {
        for text in ["correct(t1,q954)", "rnn_2_h0", "rnn_1_out(t7)", "mastered(s3,t4)", "correct_input(t0,wrong)"] {
            let atom: Atom = text.parse().unwrap();
            assert_eq!(atom.to_string(), text);
        }
        assert!("correct(t1)".parse::<Atom>().is_err());
        assert!("bogus(t1)".parse::<Atom>().is_err());
    }
}
