use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{aggregate, options, render_context, screen_annotators, Aggregate, Judgment, SurveyConfig};
use crate::corpus::{Datapoint, Quantifier};
use crate::error::{Error, Result};

/// Survey items plus the hidden gold items used for screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    pub config: SurveyConfig,
    pub items: Vec<Datapoint>,
    pub gold: Vec<Datapoint>,
}

impl Survey {
    pub fn new(config: SurveyConfig, items: Vec<Datapoint>, gold: Vec<Datapoint>) -> Result<Self> {
        config.validate()?;
        if items.is_empty() || gold.is_empty() {
            return Err(Error::Annotation("survey needs items and gold items".into()));
        }
        let mut ids = HashSet::new();
        for d in items.iter().chain(&gold) {
            if !ids.insert(d.id.as_str()) {
                return Err(Error::Annotation(format!("item {} appears twice", d.id)));
            }
        }
        Ok(Survey { config, items, gold })
    }

    pub fn majority_class_chance(&self) -> f64 {
        super::majority_class_chance(&self.items)
    }
}

/// One line of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Session {
        annotator_id: String,
        token: String,
        at: u64,
    },
    Assign {
        annotator_id: String,
        item_id: String,
        at: u64,
    },
    Judgment {
        judgment: Judgment,
    },
    Lapse {
        annotator_id: String,
        item_id: String,
        at: u64,
    },
    Void {
        annotator_id: String,
        at: u64,
    },
}

/// Append-only JSONL event log, synced after every record.
#[derive(Debug)]
pub struct JudgmentLog {
    path: PathBuf,
    file: File,
}

impl JudgmentLog {
    /// Opens (creating if needed) and returns the events already stored.
    /// A torn final line from an interrupted write is dropped.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>)> {
        let mut events = Vec::new();
        if path.exists() {
            let bytes = std::fs::read(path)?;
            let complete = match bytes.iter().rposition(|&b| b == b'\n') {
                Some(i) => i + 1,
                None => 0,
            };
            for line in BufReader::new(&bytes[..complete]).lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    events.push(serde_json::from_str(&line)?);
                }
            }
            if complete < bytes.len() {
                let f = OpenOptions::new().write(true).open(path)?;
                f.set_len(complete as u64)?;
                f.sync_all()?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            JudgmentLog {
                path: path.to_path_buf(),
                file,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextStatus {
    Ok,
    QuotaReached,
    NoItems,
    ScreenedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub item_id: String,
    pub rendered_context: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItems {
    pub status: NextStatus,
    pub items: Vec<ItemPayload>,
    pub done: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub items_total: usize,
    pub items_complete: usize,
    pub judgments: usize,
    pub gold_judgments: usize,
    pub annotators: usize,
    pub screened_out: usize,
    pub reserved: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitError {
    UnknownToken,
    InvalidChoice(String),
    Unassigned,
    Expired,
    Duplicate,
    ScreenedOut,
    Storage(String),
}

impl std::fmt::Display for SubmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubmitError::UnknownToken => f.write_str("unknown session token"),
            SubmitError::InvalidChoice(c) => write!(f, "invalid label {c:?}"),
            SubmitError::Unassigned => f.write_str("item was not assigned to this annotator"),
            SubmitError::Expired => f.write_str("assignment expired"),
            SubmitError::Duplicate => f.write_str("item already judged by this annotator"),
            SubmitError::ScreenedOut => f.write_str("annotator failed screening"),
            SubmitError::Storage(e) => write!(f, "storage failure: {e}"),
        }
    }
}

impl std::error::Error for SubmitError {}

#[derive(Debug, Clone, Copy)]
enum ItemRef {
    Real(usize),
    Gold(usize),
}

#[derive(Debug, Default, Clone)]
struct Annotator {
    served: Vec<String>,
    /// Outstanding assignments and when they were made.
    reserved: BTreeMap<String, u64>,
    judged: HashSet<String>,
    real_judged: Vec<usize>,
    voided: bool,
}

/// Protocol state rebuilt from the event log. Every mutation is logged
/// before it is applied, so replaying the log reproduces the state.
#[derive(Debug)]
pub struct AnnotationService {
    survey: Survey,
    lookup: HashMap<String, ItemRef>,
    tokens: HashMap<String, String>,
    annotators: BTreeMap<String, Annotator>,
    /// Per real item: live judgments plus outstanding assignments.
    load: Vec<usize>,
    gold_served: Vec<usize>,
    judgments: Vec<Judgment>,
    live: Vec<bool>,
    log: Option<JudgmentLog>,
}

impl AnnotationService {
    /// In-memory service without persistence.
    pub fn new(survey: Survey) -> Self {
        let lookup = survey
            .items
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), ItemRef::Real(i)))
            .chain(
                survey
                    .gold
                    .iter()
                    .enumerate()
                    .map(|(i, d)| (d.id.clone(), ItemRef::Gold(i))),
            )
            .collect();
        AnnotationService {
            load: vec![0; survey.items.len()],
            gold_served: vec![0; survey.gold.len()],
            survey,
            lookup,
            tokens: HashMap::new(),
            annotators: BTreeMap::new(),
            judgments: Vec::new(),
            live: Vec::new(),
            log: None,
        }
    }

    /// Service persisted to `log_path`, replaying any events already there.
    pub fn open(survey: Survey, log_path: &Path) -> Result<Self> {
        let (log, events) = JudgmentLog::open(log_path)?;
        let mut s = Self::new(survey);
        for e in &events {
            s.apply(e)?;
        }
        s.log = Some(log);
        Ok(s)
    }

    /// Rebuilds state from events without persisting anything.
    pub fn replay(survey: Survey, events: &[Event]) -> Result<Self> {
        let mut s = Self::new(survey);
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    pub fn survey(&self) -> &Survey {
        &self.survey
    }

    fn apply(&mut self, e: &Event) -> Result<()> {
        let bad = |m: String| Err(Error::Annotation(format!("log replay: {m}")));
        match e {
            Event::Session {
                annotator_id, token, ..
            } => {
                self.tokens.insert(token.clone(), annotator_id.clone());
                self.annotators.entry(annotator_id.clone()).or_default();
            }
            Event::Assign {
                annotator_id,
                item_id,
                at,
            } => {
                let Some(&r) = self.lookup.get(item_id) else {
                    return bad(format!("unknown item {item_id}"));
                };
                let Some(a) = self.annotators.get_mut(annotator_id) else {
                    return bad(format!("unknown annotator {annotator_id}"));
                };
                a.served.push(item_id.clone());
                a.reserved.insert(item_id.clone(), *at);
                match r {
                    ItemRef::Real(i) => self.load[i] += 1,
                    ItemRef::Gold(i) => self.gold_served[i] += 1,
                }
            }
            Event::Judgment { judgment } => {
                let Some(&r) = self.lookup.get(&judgment.item_id) else {
                    return bad(format!("unknown item {}", judgment.item_id));
                };
                let Some(a) = self.annotators.get_mut(&judgment.annotator_id) else {
                    return bad(format!("unknown annotator {}", judgment.annotator_id));
                };
                if a.reserved.remove(&judgment.item_id).is_none() || !a.judged.insert(judgment.item_id.clone()) {
                    return bad(format!(
                        "{} judged {} without an assignment",
                        judgment.annotator_id, judgment.item_id
                    ));
                }
                if let ItemRef::Real(_) = r {
                    a.real_judged.push(self.judgments.len());
                }
                self.judgments.push(judgment.clone());
                self.live.push(true);
            }
            Event::Lapse {
                annotator_id, item_id, ..
            } => {
                let a = self.annotators.get_mut(annotator_id);
                if a.and_then(|a| a.reserved.remove(item_id)).is_none() {
                    return bad(format!("lapse of missing assignment {item_id}"));
                }
                if let Some(ItemRef::Real(i)) = self.lookup.get(item_id) {
                    self.load[*i] -= 1;
                }
            }
            Event::Void { annotator_id, .. } => {
                let Some(a) = self.annotators.get_mut(annotator_id) else {
                    return bad(format!("unknown annotator {annotator_id}"));
                };
                a.voided = true;
                for &j in &a.real_judged {
                    if self.live[j] {
                        self.live[j] = false;
                        if let Some(ItemRef::Real(i)) = self.lookup.get(&self.judgments[j].item_id) {
                            self.load[*i] -= 1;
                        }
                    }
                }
                for item in std::mem::take(&mut a.reserved).into_keys() {
                    if let Some(ItemRef::Real(i)) = self.lookup.get(&item) {
                        self.load[*i] -= 1;
                    }
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, e: Event) -> std::result::Result<(), SubmitError> {
        if let Some(log) = &mut self.log {
            log.append(&e).map_err(|err| SubmitError::Storage(err.to_string()))?;
        }
        self.apply(&e).map_err(|err| SubmitError::Storage(err.to_string()))
    }

    /// Registers a new annotator and returns their opaque token.
    pub fn create_session(&mut self, now: u64) -> Result<String> {
        let token = format!("{:032x}", rand::rng().random::<u128>());
        let annotator_id = format!("annotator-{:04}", self.annotators.len() + 1);
        self.record(Event::Session {
            annotator_id,
            token: token.clone(),
            at: now,
        })
        .map_err(|e| Error::Annotation(e.to_string()))?;
        Ok(token)
    }

    fn annotator_of(&self, token: &str) -> std::result::Result<String, SubmitError> {
        self.tokens.get(token).cloned().ok_or(SubmitError::UnknownToken)
    }

    fn lapse_expired(&mut self, now: u64) -> std::result::Result<(), SubmitError> {
        let Some(ttl) = self.survey.config.reservation_ttl_secs else {
            return Ok(());
        };
        let expired: Vec<(String, String)> = self
            .annotators
            .iter()
            .flat_map(|(id, a)| {
                a.reserved
                    .iter()
                    .filter(move |(_, &at)| now.saturating_sub(at) > ttl * 1000)
                    .map(move |(item, _)| (id.clone(), item.clone()))
            })
            .collect();
        for (annotator_id, item_id) in expired {
            self.record(Event::Lapse {
                annotator_id,
                item_id,
                at: now,
            })?;
        }
        Ok(())
    }

    fn payload(&self, item_id: &str) -> ItemPayload {
        let dp = match self.lookup[item_id] {
            ItemRef::Real(i) => &self.survey.items[i],
            ItemRef::Gold(i) => &self.survey.gold[i],
        };
        ItemPayload {
            item_id: dp.id.clone(),
            rendered_context: render_context(dp, self.survey.config.condition),
            options: options().into_iter().map(String::from).collect(),
        }
    }

    fn pick(&self, a: &Annotator) -> Option<String> {
        let cfg = &self.survey.config;
        let real = (0..self.survey.items.len())
            .filter(|&i| self.load[i] < cfg.judgments_per_item && !a.served.contains(&self.survey.items[i].id))
            .min_by_key(|&i| (self.load[i], i))?;
        if a.served.len().is_multiple_of(cfg.real_per_gold + 1) {
            let gold = (0..self.survey.gold.len())
                .filter(|&i| !a.served.contains(&self.survey.gold[i].id))
                .min_by_key(|&i| (self.gold_served[i], i));
            if let Some(g) = gold {
                return Some(self.survey.gold[g].id.clone());
            }
        }
        Some(self.survey.items[real].id.clone())
    }

    /// Outstanding assignments first, then new ones up to the batch size and quota.
    pub fn next_items(&mut self, token: &str, now: u64) -> std::result::Result<NextItems, SubmitError> {
        let id = self.annotator_of(token)?;
        self.lapse_expired(now)?;
        let quota = self.survey.config.max_items_per_annotator;
        let batch = self.survey.config.batch_size;
        let a = &self.annotators[&id];
        if a.voided {
            return Ok(NextItems {
                status: NextStatus::ScreenedOut,
                items: vec![],
                done: a.judged.len(),
                quota,
            });
        }
        let mut ids: Vec<String> = a
            .served
            .iter()
            .filter(|s| a.reserved.contains_key(*s))
            .cloned()
            .collect();
        while ids.len() < batch && self.annotators[&id].served.len() < quota {
            let Some(item_id) = self.pick(&self.annotators[&id]) else {
                break;
            };
            self.record(Event::Assign {
                annotator_id: id.clone(),
                item_id: item_id.clone(),
                at: now,
            })?;
            ids.push(item_id);
        }
        let a = &self.annotators[&id];
        let status = if !ids.is_empty() {
            NextStatus::Ok
        } else if a.served.len() >= quota {
            NextStatus::QuotaReached
        } else {
            NextStatus::NoItems
        };
        Ok(NextItems {
            status,
            items: ids.iter().map(|i| self.payload(i)).collect(),
            done: a.judged.len(),
            quota,
        })
    }

    /// Stores a judgment for an item assigned to the token's annotator.
    pub fn submit(
        &mut self,
        token: &str,
        item_id: &str,
        choice: &str,
        now: u64,
    ) -> std::result::Result<Judgment, SubmitError> {
        let id = self.annotator_of(token)?;
        let choice: Quantifier = choice
            .parse()
            .map_err(|_| SubmitError::InvalidChoice(choice.to_string()))?;
        self.lapse_expired(now)?;
        let a = &self.annotators[&id];
        if a.judged.contains(item_id) {
            return Err(SubmitError::Duplicate);
        }
        if a.voided {
            return Err(SubmitError::ScreenedOut);
        }
        if !a.reserved.contains_key(item_id) {
            return Err(if a.served.iter().any(|s| s == item_id) {
                SubmitError::Expired
            } else {
                SubmitError::Unassigned
            });
        }
        let judgment = Judgment {
            annotator_id: id.clone(),
            item_id: item_id.to_string(),
            choice,
            condition: self.survey.config.condition,
            timestamp: now,
        };
        self.record(Event::Judgment {
            judgment: judgment.clone(),
        })?;
        let a = &self.annotators[&id];
        if a.served.len() >= self.survey.config.max_items_per_annotator && a.reserved.is_empty() && !self.passes(&id) {
            self.record(Event::Void {
                annotator_id: id,
                at: now,
            })?;
        }
        Ok(judgment)
    }

    fn passes(&self, annotator_id: &str) -> bool {
        let threshold = self.survey.config.gold_pass_threshold;
        let gold: HashMap<String, Quantifier> = self.survey.gold.iter().map(|d| (d.id.clone(), d.label)).collect();
        let mine: Vec<Judgment> = self
            .judgments
            .iter()
            .filter(|j| j.annotator_id == annotator_id)
            .cloned()
            .collect();
        threshold <= 0.0
            || screen_annotators(&mine, &gold, threshold)
                .get(annotator_id)
                .is_some_and(|s| s.pass)
    }

    /// Judgments not voided by screening.
    pub fn live_judgments(&self) -> Vec<Judgment> {
        self.judgments
            .iter()
            .zip(&self.live)
            .filter(|(_, &l)| l)
            .map(|(j, _)| j.clone())
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let need = self.survey.config.judgments_per_item;
        let mut per_item = vec![0usize; self.survey.items.len()];
        let mut gold_judgments = 0;
        for (j, &l) in self.judgments.iter().zip(&self.live) {
            match self.lookup[&j.item_id] {
                ItemRef::Real(i) if l => per_item[i] += 1,
                ItemRef::Gold(_) => gold_judgments += 1,
                _ => {}
            }
        }
        Progress {
            items_total: per_item.len(),
            items_complete: per_item.iter().filter(|&&c| c >= need).count(),
            judgments: per_item.iter().sum(),
            gold_judgments,
            annotators: self.annotators.len(),
            screened_out: self.annotators.values().filter(|a| a.voided).count(),
            reserved: self.annotators.values().map(|a| a.reserved.len()).sum(),
        }
    }

    /// Per-item live judgments plus outstanding assignments.
    pub fn item_loads(&self) -> &[usize] {
        &self.load
    }

    /// Items served to each annotator.
    pub fn served_counts(&self) -> BTreeMap<String, usize> {
        self.annotators
            .iter()
            .map(|(k, a)| (k.clone(), a.served.len()))
            .collect()
    }

    pub fn results(&self, strict: bool) -> Result<Aggregate> {
        aggregate(&self.survey, &self.live_judgments(), strict)
    }
}
