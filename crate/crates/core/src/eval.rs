//! Response scoring and Bayesian accuracy aggregation.
//!
//! Answers are the content of the last `<answer>...</answer>` span;
//! responses without tags are omitted from the denominators. Accuracy per
//! category is reported with an equal-tailed Beta-posterior credible
//! interval, quantiles found by bisection on the regularized incomplete
//! beta function.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::qa::QAItem;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub raw_text: String,
}

/// Content of the last answer-tag span, trimmed; `None` when no span.
pub fn extract_answer(raw: &str) -> Option<String> {
    let mut last = None;
    let mut rest = raw;
    while let Some(open) = rest.find("<answer>") {
        let after = &rest[open + "<answer>".len()..];
        match after.find("</answer>") {
            Some(close) => {
                last = Some(after[..close].trim().to_string());
                rest = &after[close + "</answer>".len()..];
            }
            None => break,
        }
    }
    last
}

fn normalize(s: &str) -> String {
    let t = s.trim().to_lowercase();
    t.trim_end_matches(['.', '!', '?', ',', ';', ':']).trim().to_string()
}

/// Synonym table for open-ended answers; shipped default is minimal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub synonyms: BTreeMap<String, Vec<String>>,
    /// `false` = exact match only (synonyms ignored).
    pub use_synonyms: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let mut synonyms = BTreeMap::new();
        synonyms.insert("above".to_string(), vec!["on top of".to_string(), "over".to_string()]);
        synonyms.insert("below".to_string(), vec!["beneath".to_string(), "under".to_string()]);
        synonyms.insert("left-of".to_string(), vec!["left of".to_string(), "to the left of".to_string(), "left".to_string()]);
        synonyms.insert("right-of".to_string(), vec!["right of".to_string(), "to the right of".to_string(), "right".to_string()]);
        synonyms.insert("in-front-of".to_string(), vec!["in front of".to_string(), "earlier".to_string(), "before".to_string()]);
        synonyms.insert("behind".to_string(), vec!["later".to_string(), "after".to_string()]);
        Self {
            synonyms,
            use_synonyms: true,
        }
    }
}

/// Case-folded, punctuation-stripped comparison against the answer key,
/// with optional synonym lookup for open-ended items.
pub fn score(item: &QAItem, answer: &str, cfg: &ScoringConfig) -> bool {
    let key = normalize(&item.answer_key);
    let got = normalize(answer);
    if got == key {
        return true;
    }
    if cfg.use_synonyms {
        if let Some(alts) = cfg.synonyms.get(&key) {
            return alts.iter().any(|a| normalize(a) == got);
        }
    }
    false
}

// --- Beta posterior ------------------------------------------------------

/// Lanczos approximation of ln Gamma.
fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for g in G {
        y += 1.0;
        ser += g / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued-fraction evaluation for the incomplete beta (Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Quantile of Beta(a, b) by bisection on the CDF, to 1e-8.
pub fn beta_quantile(a: f64, b: f64, q: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if betainc(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Equal-tailed interval of the Beta(a0 + s, b0 + f) posterior.
pub fn credible_interval(
    successes: u64,
    failures: u64,
    prior: (f64, f64),
    mass: f64,
) -> (f64, f64) {
    let a = prior.0 + successes as f64;
    let b = prior.1 + failures as f64;
    let tail = (1.0 - mass) / 2.0;
    (beta_quantile(a, b, tail), beta_quantile(a, b, 1.0 - tail))
}

// --- Aggregation ---------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryStats {
    pub n_scored: u64,
    pub n_omitted: u64,
    pub n_correct: u64,
    pub accuracy: Option<f64>,
    pub posterior_mean: f64,
    pub credible_low: f64,
    pub credible_high: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub prior: (f64, f64),
    pub interval_mass: f64,
    pub use_synonyms: bool,
    pub overall: CategoryStats,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub unmatched: u64,
    pub duplicates: u64,
}

fn stats(correct: u64, wrong: u64, omitted: u64, prior: (f64, f64), mass: f64) -> CategoryStats {
    let scored = correct + wrong;
    let (lo, hi) = credible_interval(correct, wrong, prior, mass);
    CategoryStats {
        n_scored: scored,
        n_omitted: omitted,
        n_correct: correct,
        accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
        posterior_mean: (prior.0 + correct as f64) / (prior.0 + prior.1 + scored as f64),
        credible_low: lo,
        credible_high: hi,
    }
}

/// Score responses against items and aggregate per category tag. Responses
/// for unknown ids are counted under `unmatched`; duplicate ids keep the
/// last response.
pub fn aggregate(
    items: &[QAItem],
    responses: &[ResponseRecord],
    cfg: &ScoringConfig,
    prior: (f64, f64),
    mass: f64,
) -> EvalReport {
    let by_id: BTreeMap<&str, &QAItem> =
        items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut last_response: BTreeMap<&str, &ResponseRecord> = BTreeMap::new();
    let mut unmatched = 0u64;
    let mut duplicates = 0u64;
    for r in responses {
        if !by_id.contains_key(r.question_id.as_str()) {
            unmatched += 1;
            continue;
        }
        if last_response.insert(r.question_id.as_str(), r).is_some() {
            duplicates += 1;
        }
    }

    #[derive(Default)]
    struct Counts {
        correct: u64,
        wrong: u64,
        omitted: u64,
    }
    let mut overall = Counts::default();
    let mut per_cat: BTreeMap<String, Counts> = BTreeMap::new();

    for item in items {
        let Some(resp) = last_response.get(item.id.as_str()) else {
            continue;
        };
        let outcome = extract_answer(&resp.raw_text);
        let bump = |c: &mut Counts| match &outcome {
            None => c.omitted += 1,
            Some(ans) => {
                if score(item, ans, cfg) {
                    c.correct += 1;
                } else {
                    c.wrong += 1;
                }
            }
        };
        bump(&mut overall);
        for tag in &item.category_tags {
            bump(per_cat.entry(tag.to_string()).or_default());
        }
    }

    EvalReport {
        prior,
        interval_mass: mass,
        use_synonyms: cfg.use_synonyms,
        overall: stats(overall.correct, overall.wrong, overall.omitted, prior, mass),
        per_category: per_cat
            .into_iter()
            .map(|(k, c)| (k, stats(c.correct, c.wrong, c.omitted, prior, mass)))
            .collect(),
        unmatched,
        duplicates,
    }
}

/// Deterministic stand-in for a model: answers the key with probability
/// `1 - error_rate`, otherwise a uniformly sampled well-formed distractor,
/// always inside answer tags.
pub fn stub_respond(items: &[QAItem], error_rate: f64, seed: u64) -> Vec<ResponseRecord> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    items
        .iter()
        .map(|item| {
            let wrong = error_rate > 0.0 && rng.gen::<f64>() < error_rate;
            let answer = if wrong && !item.distractors.is_empty() {
                item.distractors[rng.gen_range(0..item.distractors.len())].clone()
            } else if wrong {
                format!("not {}", item.answer_key)
            } else {
                item.answer_key.clone()
            };
            ResponseRecord {
                question_id: item.id.clone(),
                raw_text: format!(
                    "Considering the image and the prompt. <answer>{answer}</answer>"
                ),
            }
        })
        .collect()
}
