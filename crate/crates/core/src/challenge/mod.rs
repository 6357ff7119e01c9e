//! Challenge-set construction from multi-model predictions, per-question
//! outcome classification, and perturbation analyses.

mod analysis;
mod search;

use serde::{Deserialize, Serialize};

use crate::dataset::QaItem;
use crate::metrics::{exact_match, is_no_answer, token_f1};

pub use analysis::{
    answer_sentence_unmodified_rate, perturbation_magnitude, point_biserial, AnalysisError,
};
pub use search::{
    build_challenge_pool, build_challenge_set, orient_pair, ChallengeError, ChallengeOutcome,
    ChallengePool, DecisionRecord, ModelPredictions, OrientationDecision, PoolEntry, PoolQuestion,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Correctness {
    Correct,
    Wrong,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseLabel {
    C2W,
    C2C,
    W2C,
}

/// A model lacks robustness on a question when it gets exact match on the
/// original but stays below `f1_on_perturbed_below` on the perturbed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRule {
    pub f1_on_perturbed_below: f64,
}

impl Default for RobustnessRule {
    fn default() -> Self {
        Self {
            f1_on_perturbed_below: 0.4,
        }
    }
}

impl RobustnessRule {
    pub fn new(threshold: f64) -> Result<Self, String> {
        if threshold > 0.0 && threshold <= 1.0 {
            Ok(Self {
                f1_on_perturbed_below: threshold,
            })
        } else {
            Err(format!("robustness threshold {threshold} outside (0, 1]"))
        }
    }
}

/// Correct means exact match; wrong means zero F1 or an abstention. For
/// unanswerable questions abstaining is correct and any span is wrong.
pub fn question_correctness(pred: &str, qa: &QaItem) -> Correctness {
    if qa.is_impossible {
        return if is_no_answer(pred) {
            Correctness::Correct
        } else {
            Correctness::Wrong
        };
    }
    let golds = qa.gold_texts();
    if exact_match(pred, &golds) == 1 {
        Correctness::Correct
    } else if is_no_answer(pred) || token_f1(pred, &golds) == 0.0 {
        Correctness::Wrong
    } else {
        Correctness::Neither
    }
}

pub fn lacks_robustness(
    orig_pred: &str,
    pert_pred: &str,
    qa: &QaItem,
    rule: &RobustnessRule,
) -> bool {
    if qa.is_impossible {
        return question_correctness(orig_pred, qa) == Correctness::Correct
            && question_correctness(pert_pred, qa) == Correctness::Wrong;
    }
    let golds = qa.gold_texts();
    exact_match(orig_pred, &golds) == 1 && token_f1(pert_pred, &golds) < rule.f1_on_perturbed_below
}

/// Labels each question by how the models' outcomes move from original to
/// perturbed. C2W takes precedence over C2C, which takes precedence over
/// W2C. `orig_preds[m]` and `pert_preds[m]` are model `m`'s predictions.
pub fn classify_cases(
    orig_preds: &[&std::collections::BTreeMap<String, String>],
    pert_preds: &[&std::collections::BTreeMap<String, String>],
    qas: &[QaItem],
) -> std::collections::BTreeMap<String, Option<CaseLabel>> {
    assert_eq!(
        orig_preds.len(),
        pert_preds.len(),
        "one original and one perturbed file per model"
    );
    qas.iter()
        .map(|qa| {
            let outcomes: Vec<(Correctness, Correctness)> = orig_preds
                .iter()
                .zip(pert_preds)
                .filter_map(|(o, p)| {
                    let o = o.get(&qa.qid)?;
                    let p = p.get(&qa.qid)?;
                    Some((question_correctness(o, qa), question_correctness(p, qa)))
                })
                .collect();
            use Correctness::*;
            let label = if outcomes.iter().any(|&o| o == (Correct, Wrong)) {
                Some(CaseLabel::C2W)
            } else if !outcomes.is_empty() && outcomes.iter().all(|&o| o == (Correct, Correct)) {
                Some(CaseLabel::C2C)
            } else if outcomes.iter().filter(|&&o| o == (Wrong, Correct)).count() >= 2 {
                Some(CaseLabel::W2C)
            } else {
                None
            };
            (qa.qid.clone(), label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Answer;
    use std::collections::BTreeMap;

    fn ans() -> QaItem {
        QaItem::answerable("q", "Who?", vec![Answer::new("Nikola Tesla", Some(0))])
    }

    fn unans() -> QaItem {
        QaItem::unanswerable("u", "Who?", vec![])
    }

    #[test]
    fn correctness_bands() {
        assert_eq!(
            question_correctness("Nikola Tesla", &ans()),
            Correctness::Correct
        );
        assert_eq!(question_correctness("Tesla", &ans()), Correctness::Neither);
        assert_eq!(question_correctness("Edison", &ans()), Correctness::Wrong);
        assert_eq!(question_correctness("", &ans()), Correctness::Wrong);
        assert_eq!(question_correctness("Tesla", &unans()), Correctness::Wrong);
        assert_eq!(question_correctness("", &unans()), Correctness::Correct);
    }

    #[test]
    fn robustness_threshold_is_strict() {
        let rule = RobustnessRule::default();
        let qa = QaItem::answerable(
            "q",
            "?",
            vec![Answer::new("a1 a2 a3 a4 a5 a6 a7 a8 a9 a10", None)],
        );
        let gold = "a1 a2 a3 a4 a5 a6 a7 a8 a9 a10";
        // two of ten tokens: P = 1, R = 0.2, F1 = 1/3
        assert!(lacks_robustness(gold, "a1 a2", &qa, &rule));
        let qa4 = QaItem::answerable("q", "?", vec![Answer::new("w1 w2 w3", None)]);
        // pred "w1 x": P = 1/2, R = 1/3, F1 = 2·(1/6)/(5/6) = 0.4
        assert_eq!(token_f1("w1 x", &["w1 w2 w3"]), 0.4);
        assert!(!lacks_robustness("w1 w2 w3", "w1 x", &qa4, &rule));
        assert!(!lacks_robustness("wrong", "", &qa4, &rule));
        assert!(lacks_robustness("", "Tesla", &unans(), &rule));
    }

    fn preds(v: &[(&str, &str)]) -> BTreeMap<String, String> {
        v.iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn case_labels() {
        let qa = ans();
        let right = preds(&[("q", "Nikola Tesla")]);
        let wrong = preds(&[("q", "Edison")]);
        let c2w = classify_cases(&[&right], &[&wrong], std::slice::from_ref(&qa));
        assert_eq!(c2w["q"], Some(CaseLabel::C2W));
        let one_w2c = classify_cases(
            &[&wrong, &right],
            &[&right, &right],
            std::slice::from_ref(&qa),
        );
        assert_eq!(one_w2c["q"], None);
        let two_w2c = classify_cases(
            &[&wrong, &wrong],
            &[&right, &right],
            std::slice::from_ref(&qa),
        );
        assert_eq!(two_w2c["q"], Some(CaseLabel::W2C));
        let c2c = classify_cases(
            &[&right, &right],
            &[&right, &right],
            std::slice::from_ref(&qa),
        );
        assert_eq!(c2c["q"], Some(CaseLabel::C2C));
        // C2W wins even when two other models go W2C
        let mixed = classify_cases(
            &[&right, &wrong, &wrong],
            &[&wrong, &right, &right],
            std::slice::from_ref(&qa),
        );
        assert_eq!(mixed["q"], Some(CaseLabel::C2W));
    }
}
