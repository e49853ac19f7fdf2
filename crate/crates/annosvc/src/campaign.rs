//! Campaigns, blinded task views, judgments and per-system accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Rejection, Result};

/// One system's answer to one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemAnswer {
    pub system_id: String,
    pub qid: String,
    pub answer: String,
}

/// Who produced a task's answer. Never sent to annotators.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Owner {
    pub system_id: String,
    pub qid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub question_text: String,
    pub answer_text: String,
    /// Every system that gave this answer to this question.
    pub hidden: Vec<Owner>,
}

/// What an annotator sees: no system and no question id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub question_text: String,
    pub answer_text: String,
    /// 1-based index of the task in serving order.
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Done {
    pub done: bool,
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Next {
    Task(TaskView),
    Done(Done),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator_id: String,
    pub factually_correct: bool,
    pub natural_sounding: bool,
    pub self_contained: bool,
    /// RFC 3339.
    pub timestamp: String,
}

impl Judgment {
    /// An answer counts as correct only when all three criteria hold.
    pub fn is_correct(&self) -> bool {
        self.factually_correct && self.natural_sounding && self.self_contained
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemAccuracy {
    pub accuracy: f64,
    pub judged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub id: String,
    pub seed: u64,
    /// Serving order.
    pub tasks: Vec<AnnotationTask>,
    /// Accepted judgment per task index, in the same order as `tasks`.
    #[serde(skip)]
    judgments: Vec<Option<Judgment>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

const ID_ALPHABET: &[u8] = b"bcdfghjkmnpqrstvwxz";

fn opaque_id(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::from("t-");
    for _ in 0..10 {
        s.push(ID_ALPHABET[rng.random_range(0..ID_ALPHABET.len())] as char);
    }
    s
}

impl Campaign {
    /// Pools answers from all systems into one blinded, seed-shuffled task
    /// list. Identical answers to the same question share a task.
    pub fn create(
        id: impl Into<String>,
        questions: &BTreeMap<String, String>,
        answers: &[SystemAnswer],
        seed: u64,
    ) -> Result<Self> {
        let mut pool: BTreeMap<(String, String), Vec<Owner>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for a in answers {
            if !questions.contains_key(&a.qid) {
                return Err(Error::Input(format!(
                    "system {:?} answers unknown question {:?}",
                    a.system_id, a.qid
                )));
            }
            if !seen.insert((a.system_id.clone(), a.qid.clone())) {
                return Err(Error::Input(format!(
                    "system {:?} answers question {:?} twice",
                    a.system_id, a.qid
                )));
            }
            pool.entry((a.qid.clone(), a.answer.clone())).or_default().push(Owner {
                system_id: a.system_id.clone(),
                qid: a.qid.clone(),
            });
        }
        if pool.is_empty() {
            return Err(Error::Input("no answers to annotate".into()));
        }
        let mut entries: Vec<_> = pool.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        entries.shuffle(&mut rng);

        let secrets: Vec<&str> = answers
            .iter()
            .flat_map(|a| [a.system_id.as_str(), a.qid.as_str()])
            .collect();
        let mut used = BTreeSet::new();
        let mut tasks = Vec::with_capacity(entries.len());
        for ((qid, answer), mut owners) in entries {
            owners.sort();
            let task_id = loop {
                let candidate = opaque_id(&mut rng);
                if !used.contains(&candidate) && !secrets.iter().any(|s| candidate.contains(s)) {
                    break candidate;
                }
            };
            used.insert(task_id.clone());
            tasks.push(AnnotationTask {
                task_id,
                question_text: questions[&qid].clone(),
                answer_text: answer,
                hidden: owners,
            });
        }
        let campaign = Self::from_tasks(id.into(), seed, tasks);
        campaign.check_blinding(&secrets)?;
        Ok(campaign)
    }

    fn from_tasks(id: String, seed: u64, tasks: Vec<AnnotationTask>) -> Self {
        let index = tasks.iter().enumerate().map(|(i, t)| (t.task_id.clone(), i)).collect();
        Self {
            id,
            seed,
            judgments: vec![None; tasks.len()],
            tasks,
            index,
        }
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn restore(self) -> Self {
        Self::from_tasks(self.id, self.seed, self.tasks)
    }

    fn check_blinding(&self, secrets: &[&str]) -> Result<()> {
        for i in 0..self.tasks.len() {
            let bytes = serde_json::to_string(&self.view(i)).expect("task views serialize");
            if let Some(s) = secrets.iter().find(|s| bytes.contains(**s)) {
                return Err(Error::Input(format!(
                    "task {} would reveal the identifier {s:?} to annotators",
                    self.tasks[i].task_id
                )));
            }
        }
        Ok(())
    }

    pub fn view(&self, index: usize) -> TaskView {
        let t = &self.tasks[index];
        TaskView {
            task_id: t.task_id.clone(),
            question_text: t.question_text.clone(),
            answer_text: t.answer_text.clone(),
            position: index + 1,
            total: self.tasks.len(),
        }
    }

    pub fn judged_count(&self) -> usize {
        self.judgments.iter().filter(|j| j.is_some()).count()
    }

    pub fn judgments(&self) -> impl Iterator<Item = &Judgment> {
        self.judgments.iter().flatten()
    }

    /// Lowest-index task without a judgment. Each task is judged once, so
    /// the annotator only labels the request.
    pub fn next_task(&self, _annotator_id: &str) -> Next {
        match self.judgments.iter().position(|j| j.is_none()) {
            Some(i) => Next::Task(self.view(i)),
            None => Next::Done(Done {
                done: true,
                judged: self.judged_count(),
                total: self.tasks.len(),
            }),
        }
    }

    /// Checks whether `j` would be accepted, without recording it.
    pub fn check(&self, j: &Judgment) -> std::result::Result<usize, Rejection> {
        let &i = self.index.get(&j.task_id).ok_or(Rejection::UnknownTask)?;
        if self.judgments[i].is_some() {
            return Err(Rejection::AlreadyJudged);
        }
        Ok(i)
    }

    /// Records `j` in memory. Durable callers append to the log between
    /// [`Campaign::check`] and this call.
    pub fn accept(&mut self, j: Judgment) -> std::result::Result<(), Rejection> {
        let i = self.check(&j)?;
        self.judgments[i] = Some(j);
        Ok(())
    }

    /// Accuracy per system over its judged tasks. Systems without any
    /// judged task are absent.
    pub fn compute_accuracy(&self) -> Result<BTreeMap<String, SystemAccuracy>> {
        if self.judged_count() == 0 {
            return Err(Error::NoJudgments);
        }
        let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (task, j) in self.tasks.iter().zip(&self.judgments) {
            let Some(j) = j else { continue };
            for owner in &task.hidden {
                let e = tally.entry(owner.system_id.clone()).or_default();
                e.0 += j.is_correct() as usize;
                e.1 += 1;
            }
        }
        Ok(tally
            .into_iter()
            .map(|(s, (correct, judged))| {
                (
                    s,
                    SystemAccuracy {
                        accuracy: correct as f64 / judged as f64,
                        judged,
                    },
                )
            })
            .collect())
    }

    /// Same campaign definition with no judgments.
    pub fn fresh(&self) -> Self {
        Self::from_tasks(self.id.clone(), self.seed, self.tasks.clone())
    }
}
