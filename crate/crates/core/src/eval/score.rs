use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tasks::{ImpostorTask, MAX_CONTROL_MISSES, POSITIONS, SESSION_CONTROLS};
use crate::spectral::ClusterAssignment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub annotator_id: String,
    pub task_id: u32,
    pub chosen_position: u8,
    /// Unix seconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorSession {
    pub annotator_id: String,
    pub tasks: Vec<ImpostorTask>,
    /// Task id → chosen position.
    pub responses: BTreeMap<u32, u8>,
    pub qualified: bool,
}

impl AnnotatorSession {
    pub fn new(annotator_id: impl Into<String>, tasks: Vec<ImpostorTask>) -> Self {
        AnnotatorSession {
            annotator_id: annotator_id.into(),
            tasks,
            responses: BTreeMap::new(),
            qualified: false,
        }
    }

    /// Controls answered wrongly or not at all.
    pub fn control_misses(&self) -> usize {
        self.tasks
            .iter()
            .filter(|t| t.is_control)
            .filter(|t| self.responses.get(&t.task_id).copied() != t.control_answer)
            .count()
    }

    /// Responses to the regular tasks of this session.
    pub fn scoreable_responses(&self) -> Vec<Response> {
        self.tasks
            .iter()
            .filter(|t| !t.is_control)
            .filter_map(|t| {
                self.responses.get(&t.task_id).map(|&p| Response {
                    annotator_id: self.annotator_id.clone(),
                    task_id: t.task_id,
                    chosen_position: p,
                    timestamp: 0,
                })
            })
            .collect()
    }
}

/// Splits sessions into `(qualified, discarded)`; a session qualifies with
/// at most one missed control. Each session is judged on its own answers.
pub fn qualify_annotators(sessions: Vec<AnnotatorSession>) -> (Vec<AnnotatorSession>, Vec<AnnotatorSession>) {
    sessions
        .into_iter()
        .map(|mut s| {
            s.qualified = s.control_misses() <= MAX_CONTROL_MISSES;
            s
        })
        .partition(|s| s.qualified)
}

/// Outcome of qualifying the annotators found in a response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogQualification {
    /// Responses of qualified annotators, first answer per task only.
    pub responses: Vec<Response>,
    pub qualified: Vec<String>,
    pub discarded: Vec<String>,
}

/// Qualifies annotators from a flat response log, without session records.
/// Every session carries [`SESSION_CONTROLS`] controls, so controls an
/// annotator never answered count as misses.
pub fn qualify_log(tasks: &[ImpostorTask], responses: &[Response]) -> LogQualification {
    let by_id: HashMap<u32, &ImpostorTask> = tasks.iter().map(|t| (t.task_id, t)).collect();
    let mut sessions: BTreeMap<&str, AnnotatorSession> = BTreeMap::new();
    let mut firsts: BTreeMap<&str, Vec<&Response>> = BTreeMap::new();
    for r in responses {
        let Some(&t) = by_id.get(&r.task_id) else { continue };
        let s = sessions
            .entry(r.annotator_id.as_str())
            .or_insert_with(|| AnnotatorSession::new(r.annotator_id.clone(), Vec::new()));
        if s.responses.contains_key(&r.task_id) {
            continue;
        }
        s.tasks.push(*t);
        s.responses.insert(r.task_id, r.chosen_position);
        firsts.entry(r.annotator_id.as_str()).or_default().push(r);
    }
    let mut out = LogQualification {
        responses: Vec::new(),
        qualified: Vec::new(),
        discarded: Vec::new(),
    };
    for (id, s) in sessions {
        let answered_controls = s.tasks.iter().filter(|t| t.is_control).count();
        let misses = s.control_misses() + SESSION_CONTROLS.saturating_sub(answered_controls);
        if misses <= MAX_CONTROL_MISSES {
            out.qualified.push(id.to_string());
            out.responses.extend(
                firsts[id]
                    .iter()
                    .filter(|r| !by_id[&r.task_id].is_control)
                    .map(|&r| r.clone()),
            );
        } else {
            out.discarded.push(id.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAccuracy {
    pub cluster: u32,
    pub images: usize,
    /// Share of all corpus images in this cluster.
    pub fraction: f64,
    pub answered: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clusters: Vec<ClusterAccuracy>,
    /// Mean accuracy over clusters with responses.
    pub avg_accuracy: Option<f64>,
    /// Image-weighted mean accuracy, `Σ p_i · acc_i`, over clusters with
    /// responses (weights renormalized to sum to one over those clusters).
    pub normalized_avg_accuracy: Option<f64>,
    /// `avg_accuracy − normalized_avg_accuracy`.
    pub normalized_delta: Option<f64>,
    pub responses_scored: usize,
    pub responses_ignored: usize,
    pub clusters_without_responses: Vec<u32>,
}

/// Report metrics from per-cluster tallies.
pub fn summarize(clusters: Vec<ClusterAccuracy>, responses_ignored: usize) -> EvalReport {
    let answered: Vec<&ClusterAccuracy> = clusters.iter().filter(|c| c.answered > 0).collect();
    let responses_scored = clusters.iter().map(|c| c.answered).sum();
    let clusters_without_responses = clusters
        .iter()
        .filter(|c| c.answered == 0 && c.images > 0)
        .map(|c| c.cluster)
        .collect();
    let (avg, normalized) = if answered.is_empty() {
        (None, None)
    } else {
        let acc = |c: &ClusterAccuracy| c.correct as f64 / c.answered as f64;
        let avg = answered.iter().map(|c| acc(c)).sum::<f64>() / answered.len() as f64;
        let mass: f64 = answered.iter().map(|c| c.fraction).sum();
        let normalized = if mass > 0.0 {
            Some(answered.iter().map(|c| c.fraction * acc(c)).sum::<f64>() / mass)
        } else {
            None
        };
        (Some(avg), normalized)
    };
    EvalReport {
        clusters,
        avg_accuracy: avg,
        normalized_avg_accuracy: normalized,
        normalized_delta: avg.zip(normalized).map(|(a, n)| a - n),
        responses_scored,
        responses_ignored,
        clusters_without_responses,
    }
}

/// Per-cluster accuracy from responses to regular tasks. Responses to
/// controls or unknown tasks, and repeats of an (annotator, task) pair,
/// are ignored.
pub fn score(tasks: &[ImpostorTask], responses: &[Response], assignment: &ClusterAssignment) -> EvalReport {
    let by_id: HashMap<u32, &ImpostorTask> = tasks.iter().filter(|t| !t.is_control).map(|t| (t.task_id, t)).collect();
    let sizes = assignment.sizes();
    let n = assignment.assignments.len().max(1) as f64;
    let mut clusters: Vec<ClusterAccuracy> = sizes
        .iter()
        .enumerate()
        .map(|(c, &images)| ClusterAccuracy {
            cluster: c as u32,
            images,
            fraction: images as f64 / n,
            answered: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    let mut seen: HashSet<(&str, u32)> = HashSet::new();
    let mut ignored = 0;
    for r in responses {
        let Some(t) = by_id.get(&r.task_id) else {
            ignored += 1;
            continue;
        };
        if !seen.insert((r.annotator_id.as_str(), r.task_id)) {
            ignored += 1;
            continue;
        }
        let c = &mut clusters[t.host_cluster as usize];
        c.answered += 1;
        c.correct += usize::from(r.chosen_position == t.impostor_position);
    }
    for c in &mut clusters {
        c.accuracy = (c.answered > 0).then(|| c.correct as f64 / c.answered as f64);
    }
    summarize(clusters, ignored)
}

/// Uniform guess in `1..=5` for every task.
pub fn simulate_random_annotator(tasks: &[ImpostorTask], seed: u64) -> Vec<Response> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tasks
        .iter()
        .map(|t| Response {
            annotator_id: "random".into(),
            task_id: t.task_id,
            chosen_position: rng.random_range(1..=POSITIONS),
            timestamp: 0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::collection::vec;
    use proptest::prelude::{prop_assert, proptest};

    use super::*;
    use crate::eval::tasks::{control_tasks, generate_tasks, SESSION_CONTROLS};

    fn assignment(sizes: &[usize]) -> ClusterAssignment {
        let mut assignments = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            assignments.extend(std::iter::repeat_n(c as u32, s));
        }
        ClusterAssignment {
            assignments,
            k: sizes.len() - 1,
            centroid_inertia: 0.0,
            empty_clusters: Vec::new(),
        }
    }

    /// Responses giving exactly `correct` right answers out of `answered`
    /// tasks of `cluster`.
    fn answers(tasks: &[ImpostorTask], cluster: u32, answered: usize, correct: usize) -> Vec<Response> {
        tasks
            .iter()
            .filter(|t| t.host_cluster == cluster)
            .take(answered)
            .enumerate()
            .map(|(i, t)| Response {
                annotator_id: format!("a{}", i % 3),
                task_id: t.task_id,
                chosen_position: if i < correct { t.impostor_position } else { t.impostor_position % 5 + 1 },
                timestamp: 0,
            })
            .collect()
    }

    #[test]
    fn hand_computed_toy() {
        let a = assignment(&[90, 10, 0]);
        let tasks = generate_tasks(&a, 10, 0).unwrap().tasks;
        let mut r = answers(&tasks, 0, 10, 3);
        r.extend(answers(&tasks, 1, 10, 9));
        let report = score(&tasks, &r, &a);
        assert!((report.normalized_avg_accuracy.unwrap() - 0.36).abs() < 1e-12);
        assert!((report.avg_accuracy.unwrap() - 0.60).abs() < 1e-12);
        assert!((report.normalized_delta.unwrap() - 0.24).abs() < 1e-12);
    }

    #[test]
    fn one_populated_cluster_gives_equal_averages() {
        let a = assignment(&[40, 8]);
        let tasks = generate_tasks(&a, 20, 0).unwrap().tasks;
        let report = score(&tasks, &answers(&tasks, 0, 20, 13), &a);
        assert_eq!(report.avg_accuracy, report.normalized_avg_accuracy);
        assert_eq!(report.clusters_without_responses, vec![1]);
    }

    #[test]
    fn no_responses_leaves_metrics_undefined() {
        let a = assignment(&[8, 8]);
        let tasks = generate_tasks(&a, 5, 0).unwrap().tasks;
        let report = score(&tasks, &[], &a);
        assert_eq!(report.avg_accuracy, None);
        assert_eq!(report.normalized_avg_accuracy, None);
        assert_eq!(report.normalized_delta, None);
    }

    #[test]
    fn repeated_and_unknown_responses_are_ignored() {
        let a = assignment(&[8, 8]);
        let tasks = generate_tasks(&a, 5, 0).unwrap().tasks;
        let mut r = answers(&tasks, 0, 1, 1);
        r.push(r[0].clone());
        r.push(Response {
            task_id: 9999,
            ..r[0].clone()
        });
        let report = score(&tasks, &r, &a);
        assert_eq!((report.responses_scored, report.responses_ignored), (1, 2));
    }

    fn session_with(misses: usize) -> AnnotatorSession {
        let a = assignment(&[20, 20]);
        let mut tasks = generate_tasks(&a, 20, 0).unwrap().tasks[..20].to_vec();
        tasks.extend(control_tasks(&a, SESSION_CONTROLS, 0).unwrap());
        let mut s = AnnotatorSession::new("x", tasks.clone());
        for (i, t) in tasks.iter().filter(|t| t.is_control).enumerate() {
            let right = t.control_answer.unwrap();
            s.responses.insert(t.task_id, if i < misses { right % 5 + 1 } else { right });
        }
        s
    }

    #[test]
    fn qualification_boundary() {
        for (misses, ok) in [(0, true), (1, true), (2, false), (5, false)] {
            let (q, d) = qualify_annotators(vec![session_with(misses)]);
            assert_eq!(q.len(), usize::from(ok));
            assert_eq!(d.len(), usize::from(!ok));
        }
        let mut unanswered = session_with(0);
        let ids: Vec<u32> = unanswered.responses.keys().take(2).copied().collect();
        ids.iter().for_each(|id| {
            unanswered.responses.remove(id);
        });
        assert_eq!(qualify_annotators(vec![unanswered]).1.len(), 1);
    }

    #[test]
    fn discarding_one_session_does_not_affect_others() {
        let all = vec![session_with(0), session_with(2), session_with(1), session_with(3)];
        let (q, d) = qualify_annotators(all);
        assert_eq!((q.len(), d.len()), (2, 2));
        for s in q.iter().chain(&d) {
            let (alone, _) = qualify_annotators(vec![s.clone()]);
            assert_eq!(alone.len() == 1, s.qualified);
        }
    }

    #[test]
    fn log_qualification_matches_session_rule() {
        let a = assignment(&[20, 20]);
        let mut tasks = generate_tasks(&a, 20, 0).unwrap().tasks;
        tasks.extend(control_tasks(&a, SESSION_CONTROLS, 0).unwrap());
        let mut log = Vec::new();
        // "good" misses one control, "bad" misses two, "lazy" skips three.
        for (who, wrong, skipped) in [("good", 1, 0), ("bad", 2, 0), ("lazy", 0, 3)] {
            for (i, t) in tasks.iter().filter(|t| t.is_control).enumerate().skip(skipped) {
                let right = t.control_answer.unwrap();
                let pos = if i < skipped + wrong { right % 5 + 1 } else { right };
                log.push(Response { annotator_id: who.into(), task_id: t.task_id, chosen_position: pos, timestamp: 0 });
            }
            for t in tasks.iter().filter(|t| !t.is_control).take(20) {
                log.push(Response { annotator_id: who.into(), task_id: t.task_id, chosen_position: 1, timestamp: 0 });
            }
        }
        // A repeated answer keeps the first choice.
        let mut repeat = log[5].clone();
        repeat.chosen_position = repeat.chosen_position % 5 + 1;
        log.push(repeat);
        let q = qualify_log(&tasks, &log);
        assert_eq!(q.qualified, vec!["good".to_string()]);
        assert_eq!(q.discarded, vec!["bad".to_string(), "lazy".to_string()]);
        assert_eq!(q.responses.len(), 20);
        assert!(q.responses.iter().all(|r| r.annotator_id == "good" && r.chosen_position == 1));
    }

    #[test]
    fn five_random_answers_are_discrete() {
        let a = assignment(&[8, 8]);
        let tasks = generate_tasks(&a, 5, 0).unwrap().tasks[..5].to_vec();
        let r = simulate_random_annotator(&tasks, 3);
        assert_eq!(r, simulate_random_annotator(&tasks, 3));
        let report = score(&tasks, &r, &a);
        let correct: usize = report.clusters.iter().map(|c| c.correct).sum();
        assert!(correct <= 5);
        assert!(r.iter().all(|x| (1..=5).contains(&x.chosen_position)));
    }

    proptest! {
        #[test]
        fn normalized_accuracy_is_a_convex_combination(
            sizes in vec(4usize..60, 2..8),
            correct in vec(0usize..=10, 8),
        ) {
            let a = assignment(&sizes);
            let tasks = generate_tasks(&a, 10, 1).unwrap().tasks;
            let mut r = Vec::new();
            for c in 0..sizes.len() {
                r.extend(answers(&tasks, c as u32, 10, correct[c]));
            }
            let report = score(&tasks, &r, &a);
            let accs: Vec<f64> = report.clusters.iter().filter_map(|c| c.accuracy).collect();
            let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let n = report.normalized_avg_accuracy.unwrap();
            prop_assert!(n >= lo - 1e-12 && n <= hi + 1e-12);
            let mass: f64 = report.clusters.iter().filter(|c| c.images > 0).map(|c| c.fraction).sum();
            prop_assert!((mass - 1.0).abs() < 1e-12);
        }
    }
}
