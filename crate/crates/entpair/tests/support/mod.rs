//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use entpair_core::stats::{DecisionRecord, Group};

/// Final test accuracies of ten reference trials.
pub const REFERENCE_TRIALS: [f64; 10] = [80.30, 78.76, 79.28, 77.89, 79.98, 79.53, 79.52, 80.39, 79.20, 80.24];

/// Reference group rows: (group, respondents, retained decisions, mean, SD).
pub const REFERENCE_GROUPS: [(Group, usize, usize, &str, &str); 5] = [
    (Group::Entrepreneur, 384, 3791, "50.27", "15.66"),
    (Group::Educator, 92, 911, "47.74", "17.35"),
    (Group::Researcher, 143, 1419, "51.24", "15.42"),
    (Group::VcAngel, 31, 310, "43.87", "14.30"),
    (Group::Trained, 133, 1273, "48.12", "17.99"),
];

pub fn entpair(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entpair"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// Smallest and largest possible sum of squares of `m` integers in
/// `[0, cap]` summing to `sum`.
fn q_bounds(m: usize, cap: usize, sum: usize) -> (usize, usize) {
    if m == 0 {
        return (0, 0);
    }
    let (q, r) = (sum / m, sum % m);
    let lo = r * (q + 1) * (q + 1) + (m - r) * q * q;
    let (full, rem) = (sum / cap, sum % cap);
    (lo, full * cap * cap + rem * rem)
}

/// `m` integers in `[0, cap]` with the given sum and sum of squares:
/// start as even as possible, then repeatedly move one unit between two
/// respondents, preferring the smallest increase and the most crowded
/// values so the spread grows from the centre.
pub fn spread(m: usize, cap: usize, sum: usize, squares: usize) -> Option<Vec<usize>> {
    if m == 0 {
        return (sum == 0 && squares == 0).then(Vec::new);
    }
    let mut hist = vec![0usize; cap + 1];
    let (q, r) = (sum / m, sum % m);
    hist[q] += m - r;
    if r > 0 {
        hist[q + 1] += r;
    }
    let current = |h: &[usize]| h.iter().enumerate().map(|(v, n)| v * v * n).sum::<usize>();
    let mut remaining = squares.checked_sub(current(&hist))?;
    while remaining > 0 {
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for hi in 0..cap {
            for lo in 1..=hi {
                let enough = if hi == lo { hist[hi] >= 2 } else { hist[hi] >= 1 && hist[lo] >= 1 };
                let gain = 2 * (hi - lo + 1);
                if !enough || gain > remaining {
                    continue;
                }
                let crowd = hist[hi] * hist[lo];
                if best.map_or(true, |(g, c, _, _)| gain < g || (gain == g && crowd > c)) {
                    best = Some((gain, crowd, hi, lo));
                }
            }
        }
        let (gain, _, hi, lo) = best?;
        hist[hi] -= 1;
        hist[hi + 1] += 1;
        hist[lo] -= 1;
        hist[lo - 1] += 1;
        remaining -= gain;
    }
    let mut out = Vec::with_capacity(m);
    for (v, &n) in hist.iter().enumerate() {
        out.extend(std::iter::repeat(v).take(n));
    }
    Some(out)
}

/// Per-respondent correct counts (10-decision respondents, 9-decision
/// respondents) whose accuracies round to the reference mean and SD.
fn group_counts(n: usize, decisions: usize, mean: f64, sd: f64) -> (Vec<usize>, Vec<usize>) {
    let n9 = 10 * n - decisions;
    let n10 = n - n9;
    let nf = n as f64;
    let inside = |v: f64, target: f64| (v - target).abs() < 0.0049;
    let b_ideal = (mean / 100.0 * 9.0 * n9 as f64).round() as i64;
    for db in 0..=6i64 {
        for b in [b_ideal + db, b_ideal - db] {
            if b < 0 || b as usize > 9 * n9 {
                continue;
            }
            let b = b as usize;
            let a_ideal = ((mean * nf - 100.0 * b as f64 / 9.0) / 10.0).round() as i64;
            for a in a_ideal - 1..=a_ideal + 1 {
                if a < 0 || a as usize > 10 * n10 {
                    continue;
                }
                let a = a as usize;
                let s = 10.0 * a as f64 + 100.0 * b as f64 / 9.0;
                if !inside(s / nf, mean) {
                    continue;
                }
                let target = (nf - 1.0) * sd * sd + s * s / nf;
                let within9 = (0.09 * sd).powi(2);
                let q9_ideal = if n9 == 0 { 0.0 } else { (b * b) as f64 / n9 as f64 + (n9 as f64 - 1.0) * within9 };
                let (q9_lo, q9_hi) = q_bounds(n9, 9, b);
                let (q10_lo, q10_hi) = q_bounds(n10, 10, a);
                for dq in 0..200i64 {
                    for q9 in [q9_ideal.round() as i64 + dq, q9_ideal.round() as i64 - dq] {
                        if q9 < q9_lo as i64 || q9 > q9_hi as i64 || (q9 as usize) % 2 != b % 2 {
                            continue;
                        }
                        let q9 = q9 as usize;
                        let q10_ideal = ((target - 10000.0 / 81.0 * q9 as f64) / 100.0).round() as i64;
                        for q10 in q10_ideal - 2..=q10_ideal + 2 {
                            if q10 < q10_lo as i64 || q10 > q10_hi as i64 || (q10 as usize) % 2 != a % 2 {
                                continue;
                            }
                            let sq = 100.0 * q10 as f64 + 10000.0 / 81.0 * q9 as f64;
                            let v = (sq - s * s / nf) / (nf - 1.0);
                            if !inside(v.sqrt(), sd) {
                                continue;
                            }
                            if let (Some(c10), Some(c9)) = (spread(n10, 10, a, q10 as usize), spread(n9, 9, b, q9 as usize)) {
                                return (c10, c9);
                            }
                        }
                    }
                }
            }
        }
    }
    panic!("no fixture for n={n}, decisions={decisions}, mean={mean}, sd={sd}");
}

/// Decision log reproducing the reference group rows. Every respondent
/// answers ten pairs; respondents listed as having nine retained decisions
/// recognised one face (their first pair, marked incorrect).
pub fn table2_decisions() -> Vec<DecisionRecord> {
    let mut out = Vec::new();
    for (group, n, decisions, mean, sd) in REFERENCE_GROUPS {
        let (c10, c9) = group_counts(n, decisions, mean.parse().unwrap(), sd.parse().unwrap());
        let mut respondents: Vec<(usize, bool)> = c10.into_iter().map(|c| (c, false)).chain(c9.into_iter().map(|c| (c, true))).collect();
        // Interleave nine- and ten-decision respondents deterministically.
        respondents.sort_by_key(|&(c, nine)| (c * 7 + usize::from(nine) * 3) % 11);
        for (i, (correct, nine)) in respondents.into_iter().enumerate() {
            let id = format!("{group}-{i:03}");
            for k in 0..10 {
                let recognized = u8::from(nine && k == 0);
                let hit = recognized == 0 && k - usize::from(nine) < correct;
                out.push(DecisionRecord {
                    respondent_id: id.clone(),
                    group,
                    pair_id: format!("pair{:02}", k),
                    correct: u8::from(hit),
                    recognized,
                });
            }
        }
    }
    out
}
