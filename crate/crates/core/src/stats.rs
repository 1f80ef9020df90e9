//! Human-judgment ingestion, group summaries and Welch's t-test.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Entrepreneur,
    Educator,
    Researcher,
    VcAngel,
    Trained,
    Other,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::Entrepreneur,
        Group::Educator,
        Group::Researcher,
        Group::VcAngel,
        Group::Trained,
        Group::Other,
    ];

    /// Groups pooled into the "human experts" row.
    pub fn is_expert(self) -> bool {
        matches!(self, Group::Entrepreneur | Group::Educator | Group::Researcher | Group::VcAngel)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Entrepreneur => "entrepreneur",
            Group::Educator => "educator",
            Group::Researcher => "researcher",
            Group::VcAngel => "vc_angel",
            Group::Trained => "trained",
            Group::Other => "other",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidData(format!("unknown group {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub respondent_id: String,
    pub group: Group,
    pub pair_id: String,
    pub correct: u8,
    pub recognized: u8,
}

impl DecisionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.respondent_id.is_empty() {
            return Err(Error::InvalidData("empty respondent_id".into()));
        }
        if self.correct > 1 || self.recognized > 1 {
            return Err(Error::InvalidData(format!(
                "respondent {}: flags must be 0 or 1 (correct={}, recognized={})",
                self.respondent_id, self.correct, self.recognized
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentAccuracy {
    pub respondent_id: String,
    pub group: Group,
    pub total: usize,
    pub retained: usize,
    pub correct: usize,
    /// Percent correct among retained decisions.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub respondents: Vec<RespondentAccuracy>,
    /// Respondents whose every decision was a recognized face.
    pub excluded: Vec<String>,
    pub recognized_dropped: usize,
}

impl Ingested {
    pub fn retained_decisions(&self) -> usize {
        self.respondents.iter().map(|r| r.retained).sum()
    }

    pub fn in_group(&self, keep: impl Fn(Group) -> bool) -> Vec<&RespondentAccuracy> {
        self.respondents.iter().filter(|r| keep(r.group)).collect()
    }
}

/// Drops recognized decisions and computes each respondent's accuracy over
/// the rest. Respondents keep their first-appearance order.
pub fn ingest_decisions(records: &[DecisionRecord]) -> Result<Ingested> {
    let mut order: Vec<String> = Vec::new();
    let mut tally: BTreeMap<&str, (Group, usize, usize, usize)> = BTreeMap::new();
    let mut dropped = 0;
    for r in records {
        r.validate()?;
        let entry = tally.entry(r.respondent_id.as_str()).or_insert_with(|| {
            order.push(r.respondent_id.clone());
            (r.group, 0, 0, 0)
        });
        if entry.0 != r.group {
            return Err(Error::InvalidData(format!(
                "respondent {} listed under both {} and {}",
                r.respondent_id, entry.0, r.group
            )));
        }
        entry.1 += 1;
        if r.recognized == 1 {
            dropped += 1;
        } else {
            entry.2 += 1;
            entry.3 += usize::from(r.correct);
        }
    }
    let mut out = Ingested {
        recognized_dropped: dropped,
        ..Ingested::default()
    };
    for id in order {
        let (group, total, retained, correct) = tally[id.as_str()];
        if retained == 0 {
            out.excluded.push(id);
            continue;
        }
        out.respondents.push(RespondentAccuracy {
            accuracy: correct as f64 / retained as f64 * 100.0,
            respondent_id: id,
            group,
            total,
            retained,
            correct,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation (n − 1); the SD is absent for a
/// single value.
pub fn mean_sd(xs: &[f64]) -> Result<(f64, Option<f64>)> {
    if xs.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| libm::sqrt(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)));
    Ok((mean, sd))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub n_respondents: usize,
    /// Retained decisions; absent for the model row.
    pub n_decisions: Option<usize>,
    pub mean: f64,
    pub sd: Option<f64>,
    /// Test against the model's trial accuracies.
    pub test: Option<WelchTest>,
}

pub fn summarize_group(group: &str, accuracies: &[f64], n_decisions: Option<usize>) -> Result<GroupSummary> {
    let (mean, sd) = mean_sd(accuracies)?;
    Ok(GroupSummary {
        group: group.to_string(),
        n_respondents: accuracies.len(),
        n_decisions,
        mean,
        sd,
        test: None,
    })
}

fn sample_var(xs: &[f64]) -> f64 {
    let (_, sd) = mean_sd(xs).expect("non-empty");
    let sd = sd.expect("at least two values");
    sd * sd
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom and a two-sided p-value.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidData(format!(
            "welch t needs two values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, _) = mean_sd(a)?;
    let (mb, _) = mean_sd(b)?;
    let ea = sample_var(a) / a.len() as f64;
    let eb = sample_var(b) / b.len() as f64;
    let se2 = ea + eb;
    if se2 == 0.0 {
        return Err(Error::Numerical("both samples have zero variance".into()));
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (ea * ea / (a.len() - 1) as f64 + eb * eb / (b.len() - 1) as f64);
    Ok(WelchTest {
        t,
        df,
        p: student_t_two_sided(t, df)?,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom, through the
/// regularized incomplete beta `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::Numerical(format!("t distribution with t={t}, df={df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Student's t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    let tail = student_t_two_sided(t, df)? / 2.0;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
}

/// Regularized incomplete beta `I_x(a, b)` by the Lentz continued fraction,
/// using the symmetry `I_x(a,b) = 1 − I_{1−x}(b,a)` where it converges
/// faster.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Numerical(format!("incomplete beta with a={a}, b={b}, x={x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for aa in [m * (b - m) * x / ((qam + m2) * (a + m2)), -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))] {
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Numerical(format!("incomplete beta did not converge (a={a}, b={b}, x={x})")))
}

/// Rows for the model-versus-humans table: the model, all experts pooled,
/// each expert group, the trained group and any "other" respondents. Empty
/// groups are omitted. Human rows carry a Welch test of the model trials
/// against the group (positive t when the model scores higher) whenever
/// both samples allow one.
pub fn compare_groups(model_accuracies: &[f64], humans: &Ingested) -> Result<Vec<GroupSummary>> {
    let mut rows = Vec::new();
    rows.push(summarize_group("ai_model", model_accuracies, None)?);
    let mut push = |label: &str, members: Vec<&RespondentAccuracy>| -> Result<()> {
        if members.is_empty() {
            return Ok(());
        }
        let acc: Vec<f64> = members.iter().map(|r| r.accuracy).collect();
        let decisions = members.iter().map(|r| r.retained).sum();
        let mut row = summarize_group(label, &acc, Some(decisions))?;
        row.test = welch_t(model_accuracies, &acc).ok();
        rows.push(row);
        Ok(())
    };
    push("human_experts", humans.in_group(Group::is_expert))?;
    for g in Group::ALL {
        push(g.as_str(), humans.in_group(|x| x == g))?;
    }
    Ok(rows)
}
