//! Actor-trace theory: receptionist evolution, trace well-formedness,
//! projection of parallel runs into complementary traces, and fair
//! simulation.
//!
//! The simulator executes communication redexes over the flattened parallel
//! components of a configuration under an oldest-pending-message-first
//! policy with a bounded patience window, so every continuously deliverable
//! message is delivered.

use crate::lts::{normalize_state, step_transitions, ActionLabel, StepLabel};
use crate::syntax::{
    occurring_free_names, substitute, Behaviors, Config, Name, Prefix, Subst,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    BadTraceFile { line: usize, msg: String },
    #[error("trace item {0}: binder does not occur in any action of the item")]
    DanglingBinder(usize),
    #[error("trace items must not contain tau")]
    TauInTrace,
    #[error("run is not rooted at a parallel composition")]
    RootNotPar,
    #[error("projection expects a silent run, found step `{0}`")]
    NonTauRun(String),
    #[error("run step {0} cannot be derived from the tracked components")]
    UnderivableStep(usize),
    #[error(transparent)]
    Lts(#[from] crate::lts::LtsError),
}

/// One trace item: a binder prefix exporting fresh names plus a multiset of
/// simultaneous external actions.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct TraceItem {
    pub binders: BTreeSet<Name>,
    pub actions: Vec<ActionLabel>,
}

impl TraceItem {
    pub fn new(binders: BTreeSet<Name>, mut actions: Vec<ActionLabel>) -> TraceItem {
        actions.sort();
        TraceItem { binders, actions }
    }

    pub fn singleton(action: ActionLabel) -> TraceItem {
        TraceItem::new(BTreeSet::new(), vec![action])
    }

    /// Binders exported by output actions of this item.
    fn exported(&self) -> BTreeSet<Name> {
        self.actions
            .iter()
            .filter(|a| a.is_output())
            .filter_map(|a| a.object_name())
            .filter(|n| self.binders.contains(*n))
            .cloned()
            .collect()
    }

    fn validate(&self, index: usize) -> Result<(), TraceError> {
        if self.actions.iter().any(ActionLabel::is_tau) {
            return Err(TraceError::TauInTrace);
        }
        for b in &self.binders {
            let occurs = self.actions.iter().any(|a| a.object_name() == Some(b));
            if !occurs {
                return Err(TraceError::DanglingBinder(index));
            }
        }
        Ok(())
    }

    /// Free names of the item's actions: subjects plus non-bound objects.
    fn free_action_names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        for a in &self.actions {
            if let Some(s) = a.subject() {
                out.insert(s.clone());
            }
            if let Some(o) = a.object_name() {
                if !self.binders.contains(o) {
                    out.insert(o.clone());
                }
            }
        }
        out
    }

    fn all_names(&self) -> BTreeSet<Name> {
        let mut out: BTreeSet<Name> = self.binders.clone();
        for a in &self.actions {
            out.extend(a.names());
        }
        out
    }
}

impl fmt::Display for TraceItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.binders.is_empty() {
            let bs: Vec<String> = self.binders.iter().map(|b| b.to_string()).collect();
            write!(f, "[{}] ", bs.join(","))?;
        }
        let actions: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", actions.join(" | "))
    }
}

/// A sequence of trace items.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct Trace {
    pub items: Vec<TraceItem>,
}

impl Trace {
    pub fn empty() -> Trace {
        Trace::default()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, item) in self.items.iter().enumerate() {
            item.validate(i)?;
        }
        Ok(())
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for item in &self.items {
            writeln!(f, "{item}")?;
        }
        Ok(())
    }
}

/// Parse a trace file: one item per line, `[x,y] a!x | b?y`, with actions
/// `a!b`, `a?b`, `a!(b)`, `a?(b)`. Blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut items = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| TraceError::BadTraceFile {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let (binders, rest) = if let Some(stripped) = line.strip_prefix('[') {
            let (bs, rest) = stripped.split_once(']').ok_or_else(|| err("missing `]`"))?;
            let binders: BTreeSet<Name> = bs
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(Name::src)
                .collect();
            (binders, rest.trim())
        } else {
            (BTreeSet::new(), line)
        };
        let mut actions = Vec::new();
        for part in rest.split('|') {
            let part = part.trim();
            if part.is_empty() {
                return Err(err("empty action"));
            }
            let (kind, idx) = if let Some(i) = part.find('!') {
                ('!', i)
            } else if let Some(i) = part.find('?') {
                ('?', i)
            } else {
                return Err(err("action needs `!` or `?`"));
            };
            let subject = Name::src(part[..idx].trim());
            let obj = part[idx + 1..].trim();
            let (bound, obj_name) = if let Some(inner) = obj.strip_prefix('(') {
                let inner = inner.strip_suffix(')').ok_or_else(|| err("missing `)`"))?;
                (true, Name::src(inner.trim()))
            } else {
                (false, Name::src(obj))
            };
            let action = match (kind, bound) {
                ('!', true) => ActionLabel::BoundOutput {
                    subject,
                    binder: obj_name,
                },
                // An output whose object is listed as an item binder is a
                // bound output written in free form.
                ('!', false) if binders.contains(&obj_name) => ActionLabel::BoundOutput {
                    subject,
                    binder: obj_name,
                },
                ('!', false) => ActionLabel::FreeOutput {
                    subject,
                    object: obj_name,
                },
                ('?', true) => ActionLabel::BoundInput {
                    subject,
                    binder: obj_name,
                },
                ('?', false) => ActionLabel::FreeInput {
                    subject,
                    object: obj_name,
                },
                _ => unreachable!(),
            };
            actions.push(action);
        }
        // Bound outputs always export: fold their binders in.
        let mut binders = binders;
        for a in &actions {
            if let ActionLabel::BoundOutput { binder, .. } = a {
                binders.insert(binder.clone());
            }
        }
        items.push(TraceItem::new(binders, actions));
    }
    let trace = Trace { items };
    trace.validate()?;
    Ok(trace)
}

/// Fold the receptionist-evolution clauses over a trace: output items add
/// their exported binders, input items add nothing.
pub fn rcp_extend(rho: &BTreeSet<Name>, trace: &Trace) -> BTreeSet<Name> {
    let mut out = rho.clone();
    for item in &trace.items {
        out.extend(item.exported());
    }
    out
}

/// Why a trace fails well-formedness.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum IllFormedReason {
    /// An output targets a name already in the evolved receptionist set
    /// (or exported by the same item): no such actor can exist outside.
    OutputSubjectInRcp { subject: Name },
    /// An exported binder collides with earlier names.
    BinderNotFresh { binder: Name },
}

impl fmt::Display for IllFormedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IllFormedReason::OutputSubjectInRcp { subject } => write!(
                f,
                "output subject `{subject}` is a receptionist: there cannot be an actor named `{subject}` in the environment"
            ),
            IllFormedReason::BinderNotFresh { binder } => {
                write!(f, "exported binder `{binder}` is not fresh")
            }
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum WellFormedVerdict {
    WellFormed,
    IllFormed { index: usize, reason: IllFormedReason },
}

impl WellFormedVerdict {
    pub fn is_well_formed(&self) -> bool {
        matches!(self, WellFormedVerdict::WellFormed)
    }
}

/// Check rho-well-formedness: every output item's subjects must avoid the
/// receptionist set accumulated before the item together with names the item
/// itself exports, and exported binders must be globally fresh.
pub fn check_well_formed(rho: &BTreeSet<Name>, trace: &Trace) -> WellFormedVerdict {
    let mut rcp = rho.clone();
    let mut seen: BTreeSet<Name> = rho.clone();
    for (index, item) in trace.items.iter().enumerate() {
        let exported = item.exported();
        for action in &item.actions {
            if action.is_output() {
                let subject = action.subject().expect("outputs have subjects").clone();
                if rcp.contains(&subject) || exported.contains(&subject) {
                    return WellFormedVerdict::IllFormed {
                        index,
                        reason: IllFormedReason::OutputSubjectInRcp { subject },
                    };
                }
            }
        }
        let fresh_violation = item
            .binders
            .iter()
            .find(|b| seen.contains(*b) || item.free_action_names().contains(*b));
        if let Some(b) = fresh_violation {
            return WellFormedVerdict::IllFormed {
                index,
                reason: IllFormedReason::BinderNotFresh { binder: b.clone() },
            };
        }
        rcp.extend(exported);
        seen.extend(item.all_names());
    }
    WellFormedVerdict::WellFormed
}

/// What became of a message occurrence in a run.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum MessageFate {
    /// Consumed by an internal communication at this step.
    Delivered { step: usize },
    /// Handed to the environment at this step.
    Emitted { step: usize },
    /// The run ended and the message can never move.
    Undeliverable,
    /// The run was cut off with the message still pending.
    Pending,
}

/// A recorded execution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub root: Config,
    pub steps: Vec<RunStep>,
    /// Message occurrence id -> fate; total over all messages born.
    pub fairness: BTreeMap<usize, MessageFate>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunStep {
    pub label: StepLabel,
    pub config: Config,
}

impl RunLog {
    /// External trace of the run: silent steps dropped, bound outputs
    /// recording their binder.
    pub fn trace(&self) -> Trace {
        let mut items = Vec::new();
        for step in &self.steps {
            if step.label.is_tau() {
                continue;
            }
            let mut binders = BTreeSet::new();
            for a in step.label.actions() {
                if let ActionLabel::BoundOutput { binder, .. } = a {
                    binders.insert(binder.clone());
                }
            }
            items.push(TraceItem::new(binders, step.label.actions().to_vec()));
        }
        Trace { items }
    }
}

// ---------------------------------------------------------------------------
// Fair simulation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Atom {
    config: Config,
    born: usize,
    /// Message occurrence id for `Msg` atoms.
    msg_id: Option<usize>,
}

struct Sim<'a> {
    defs: &'a Behaviors,
    atoms: Vec<Atom>,
    restricted: BTreeSet<Name>,
    avoid: BTreeSet<Name>,
    next_msg: usize,
    fates: BTreeMap<usize, MessageFate>,
    first_enabled: BTreeMap<usize, usize>,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Move {
    Deliver { msg: usize, recv: usize },
    Emit { msg: usize },
    Branch { atom: usize, branch: usize },
    TauStep { atom: usize },
    FireStep { atom: usize, msgs: Vec<usize> },
}

impl<'a> Sim<'a> {
    fn flatten(&mut self, config: Config, born: usize) {
        match config {
            Config::Nil => {}
            Config::Par(l, r) => {
                self.flatten(*l, born);
                self.flatten(*r, born);
            }
            Config::Restrict { binder, body } => {
                let fresh = Name::fresh_src(&self.avoid);
                self.avoid.insert(fresh.clone());
                self.restricted.insert(fresh.clone());
                let body = substitute(&body, &Subst::single(binder, fresh));
                self.flatten(body, born);
            }
            Config::Inst {
                behavior,
                actor_args,
                param_args,
            } => {
                // Definitions were validated at parse time; unfold to the
                // input form.
                if let Some(def) = self.defs.get(&behavior) {
                    let subst = Subst::from_pairs(
                        def.actor_params
                            .iter()
                            .cloned()
                            .zip(actor_args)
                            .chain(def.value_params.iter().cloned().zip(param_args)),
                    );
                    let unfolded = substitute(&def.body, &subst);
                    self.avoid.extend(occurring_free_names(&unfolded));
                    self.atoms.push(Atom {
                        config: unfolded,
                        born,
                        msg_id: None,
                    });
                }
            }
            other => {
                self.avoid.extend(occurring_free_names(&other));
                let msg_id = if matches!(other, Config::Msg { .. }) {
                    let id = self.next_msg;
                    self.next_msg += 1;
                    self.fates.insert(id, MessageFate::Pending);
                    Some(id)
                } else {
                    None
                };
                self.atoms.push(Atom {
                    config: other,
                    born,
                    msg_id,
                });
            }
        }
    }

    fn reassemble(&self) -> Config {
        let mut cfg = self
            .atoms
            .iter()
            .map(|a| a.config.clone())
            .reduce(Config::par)
            .unwrap_or(Config::Nil);
        for r in self.restricted.iter().rev() {
            if occurring_free_names(&cfg).contains(r) {
                cfg = Config::restrict(r.clone(), cfg);
            }
        }
        normalize_state(&cfg)
    }

    fn receivers_on(&self, subject: &Name) -> Vec<usize> {
        self.atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(&a.config, Config::Input { subject: s, .. } if s == subject))
            .map(|(i, _)| i)
            .collect()
    }

    fn enabled_moves(&self) -> Vec<(usize, Move)> {
        let mut moves = Vec::new();
        for (i, atom) in self.atoms.iter().enumerate() {
            match &atom.config {
                Config::Msg { subject, .. } => {
                    let receivers = self.receivers_on(subject);
                    if receivers.is_empty() {
                        if !self.restricted.contains(subject) {
                            moves.push((atom.born, Move::Emit { msg: i }));
                        }
                    } else {
                        for r in receivers {
                            moves.push((atom.born, Move::Deliver { msg: i, recv: r }));
                        }
                    }
                }
                Config::Case {
                    scrutinee,
                    branches,
                } => {
                    for (bi, (guard, _)) in branches.iter().enumerate() {
                        if guard == scrutinee {
                            moves.push((atom.born, Move::Branch { atom: i, branch: bi }));
                        }
                    }
                }
                Config::Tau(_) => moves.push((atom.born, Move::TauStep { atom: i })),
                Config::Step { prefixes, .. } => {
                    // Fires when every input head has a distinct matching
                    // pending message.
                    let mut used = Vec::new();
                    let mut ok = true;
                    for pre in prefixes {
                        if let Prefix::In { subject, .. } = pre {
                            let found = self.atoms.iter().enumerate().find(|(j, a)| {
                                !used.contains(j)
                                    && matches!(&a.config, Config::Msg { subject: s, .. } if s == subject)
                            });
                            match found {
                                Some((j, _)) => used.push(j),
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                    }
                    if ok {
                        moves.push((atom.born, Move::FireStep { atom: i, msgs: used }));
                    }
                }
                _ => {}
            }
        }
        moves
    }

    fn msg_parts(&self, idx: usize) -> (Name, Name, Option<Config>, usize) {
        match &self.atoms[idx].config {
            Config::Msg {
                subject,
                object,
                cont,
            } => (
                subject.clone(),
                object.clone(),
                cont.as_deref().cloned(),
                self.atoms[idx].msg_id.expect("messages carry ids"),
            ),
            other => panic!("not a message atom: {other:?}"),
        }
    }

    /// Remove atoms by index and flatten replacements in.
    fn replace(&mut self, removed: &[usize], additions: Vec<Config>, now: usize) {
        let mut keep = Vec::new();
        for (i, atom) in self.atoms.drain(..).enumerate() {
            if !removed.contains(&i) {
                keep.push(atom);
            }
        }
        self.atoms = keep;
        for add in additions {
            self.flatten(add, now);
        }
    }

    fn execute(&mut self, mv: &Move, now: usize) -> StepLabel {
        match mv {
            Move::Deliver { msg, recv } => {
                let (_, object, cont, id) = self.msg_parts(*msg);
                let (binder, body) = match &self.atoms[*recv].config {
                    Config::Input { binder, body, .. } => (binder.clone(), (**body).clone()),
                    other => panic!("not a receiver: {other:?}"),
                };
                let delivered = substitute(&body, &Subst::single(binder, object));
                self.fates.insert(id, MessageFate::Delivered { step: now });
                let mut additions = vec![delivered];
                additions.extend(cont);
                self.replace(&[*msg, *recv], additions, now);
                StepLabel::tau()
            }
            Move::Emit { msg } => {
                let (subject, object, cont, id) = self.msg_parts(*msg);
                self.fates.insert(id, MessageFate::Emitted { step: now });
                let label = if self.restricted.remove(&object) {
                    StepLabel::singleton(ActionLabel::BoundOutput {
                        subject,
                        binder: object,
                    })
                } else {
                    StepLabel::singleton(ActionLabel::FreeOutput { subject, object })
                };
                self.replace(&[*msg], cont.into_iter().collect(), now);
                label
            }
            Move::Branch { atom, branch } => {
                let body = match &self.atoms[*atom].config {
                    Config::Case { branches, .. } => branches[*branch].1.clone(),
                    other => panic!("not a case: {other:?}"),
                };
                self.replace(&[*atom], vec![body], now);
                StepLabel::tau()
            }
            Move::TauStep { atom } => {
                let body = match &self.atoms[*atom].config {
                    Config::Tau(body) => (**body).clone(),
                    other => panic!("not a tau prefix: {other:?}"),
                };
                self.replace(&[*atom], vec![body], now);
                StepLabel::tau()
            }
            Move::FireStep { atom, msgs } => {
                let (prefixes, body) = match &self.atoms[*atom].config {
                    Config::Step { prefixes, body } => (prefixes.clone(), (**body).clone()),
                    other => panic!("not a joint prefix: {other:?}"),
                };
                let mut additions = Vec::new();
                let mut subst = Subst::new();
                let mut msg_iter = msgs.iter();
                for pre in &prefixes {
                    match pre {
                        Prefix::Out { subject, object } => {
                            additions.push(Config::msg(subject.clone(), object.clone()))
                        }
                        Prefix::In { binder, .. } => {
                            let m = *msg_iter.next().expect("enabled step has messages");
                            let (_, object, cont, id) = self.msg_parts(m);
                            self.fates.insert(id, MessageFate::Delivered { step: now });
                            subst.bind(binder.clone(), object);
                            additions.extend(cont);
                        }
                    }
                }
                additions.push(substitute(&body, &subst));
                let mut removed = msgs.clone();
                removed.push(*atom);
                self.replace(&removed, additions, now);
                StepLabel::tau()
            }
        }
    }
}

/// Execute a bounded fair run: among enabled moves, the one whose atom has
/// been waiting longest goes first; any message redex enabled for the whole
/// patience window is forced. The seed only breaks exact ties.
pub fn simulate_fair(
    p: &Config,
    defs: &Behaviors,
    max_steps: usize,
    seed: u64,
    fair_window: usize,
) -> Result<RunLog, TraceError> {
    let mut sim = Sim {
        defs,
        atoms: Vec::new(),
        restricted: BTreeSet::new(),
        avoid: occurring_free_names(p),
        next_msg: 0,
        fates: BTreeMap::new(),
        first_enabled: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    sim.flatten(p.clone(), 0);
    let mut steps = Vec::new();
    for now in 1..=max_steps {
        let moves = sim.enabled_moves();
        if moves.is_empty() {
            break;
        }
        // Track how long each message redex has been enabled.
        let enabled_msgs: BTreeSet<usize> = moves
            .iter()
            .filter_map(|(_, m)| match m {
                Move::Deliver { msg, .. } | Move::Emit { msg } => sim.atoms[*msg].msg_id,
                _ => None,
            })
            .collect();
        sim.first_enabled.retain(|id, _| enabled_msgs.contains(id));
        for id in &enabled_msgs {
            sim.first_enabled.entry(*id).or_insert(now);
        }
        let overdue: Option<usize> = sim
            .first_enabled
            .iter()
            .filter(|(_, since)| now - *since >= fair_window)
            .map(|(id, _)| *id)
            .next();
        let chosen = if let Some(forced_id) = overdue {
            moves
                .iter()
                .filter(|(_, m)| match m {
                    Move::Deliver { msg, .. } | Move::Emit { msg } => {
                        sim.atoms[*msg].msg_id == Some(forced_id)
                    }
                    _ => false,
                })
                .map(|(_, m)| m.clone())
                .next()
                .expect("overdue redex is enabled")
        } else {
            let min_age = moves.iter().map(|(age, _)| *age).min().unwrap();
            let tied: Vec<&Move> = moves
                .iter()
                .filter(|(age, _)| *age == min_age)
                .map(|(_, m)| m)
                .collect();
            let pick = sim.rng.gen_range(0..tied.len());
            tied[pick].clone()
        };
        let label = sim.execute(&chosen, now);
        steps.push(RunStep {
            label,
            config: sim.reassemble(),
        });
    }
    // Finalize fates: messages still around are undeliverable if nothing can
    // ever move them, otherwise pending.
    let final_moves = sim.enabled_moves();
    let movable: BTreeSet<usize> = final_moves
        .iter()
        .filter_map(|(_, m)| match m {
            Move::Deliver { msg, .. } | Move::Emit { msg } => sim.atoms[*msg].msg_id,
            Move::FireStep { msgs, .. } => msgs.first().and_then(|m| sim.atoms[*m].msg_id),
            _ => None,
        })
        .collect();
    for atom in &sim.atoms {
        if let Some(id) = atom.msg_id {
            if !movable.contains(&id) {
                sim.fates.insert(id, MessageFate::Undeliverable);
            }
        }
    }
    Ok(RunLog {
        root: normalize_state(p),
        steps,
        fairness: sim.fates,
    })
}

// ---------------------------------------------------------------------------
// Projection of parallel runs
// ---------------------------------------------------------------------------

/// Result of unzipping a silent run of `P | Q` into complementary traces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Projection {
    pub left: Trace,
    pub right: Trace,
    /// More than one consistent attribution existed at some step.
    pub ambiguous: bool,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Attribution {
    /// Left emitted, right received (payload kept for the items).
    LeftSends(TraceItem, TraceItem),
    RightSends(TraceItem, TraceItem),
    Internal,
}

/// Attribute each silent step of a run rooted at `P | Q` to complementary
/// actions of the two sides (or to one side's internal step), yielding the
/// two component traces.
pub fn project_parallel_run(
    run: &RunLog,
    defs: &Behaviors,
    universe: &BTreeSet<Name>,
) -> Result<Projection, TraceError> {
    let (mut left, mut right) = match &run.root {
        Config::Par(l, r) => ((**l).clone(), (**r).clone()),
        _ => return Err(TraceError::RootNotPar),
    };
    let mut left_trace = Vec::new();
    let mut right_trace = Vec::new();
    let mut ambiguous = false;
    for (i, step) in run.steps.iter().enumerate() {
        if !step.label.is_tau() {
            return Err(TraceError::NonTauRun(step.label.to_string()));
        }
        let mut uni = universe.clone();
        uni.extend(occurring_free_names(&left));
        uni.extend(occurring_free_names(&right));
        let tl = step_transitions(&left, defs, &uni)?;
        let tr = step_transitions(&right, defs, &uni)?;
        let recorded = normalize_state(&step.config);
        let mut candidates: Vec<(Attribution, Config, Config)> = Vec::new();
        // Cross communications.
        cross_candidates(&tl, &tr, &recorded, false, &mut candidates);
        cross_candidates(&tr, &tl, &recorded, true, &mut candidates);
        // Internal silent moves, possible only when the sibling cannot act.
        if tr.is_empty() {
            for (l, t) in &tl {
                if l.is_tau() && normalize_state(&Config::par(t.clone(), right.clone())) == recorded
                {
                    candidates.push((Attribution::Internal, t.clone(), right.clone()));
                }
            }
        }
        if tl.is_empty() {
            for (l, t) in &tr {
                if l.is_tau() && normalize_state(&Config::par(left.clone(), t.clone())) == recorded
                {
                    candidates.push((Attribution::Internal, left.clone(), t.clone()));
                }
            }
        }
        candidates.sort();
        candidates.dedup_by(|a, b| a.0 == b.0);
        if candidates.is_empty() {
            return Err(TraceError::UnderivableStep(i));
        }
        let distinct: BTreeSet<&Attribution> = candidates.iter().map(|(a, _, _)| a).collect();
        if distinct.len() > 1 {
            ambiguous = true;
        }
        let (attr, new_left, new_right) = candidates.into_iter().next().unwrap();
        match attr {
            Attribution::LeftSends(li, ri) => {
                left_trace.push(li);
                right_trace.push(ri);
            }
            Attribution::RightSends(ri, li) => {
                left_trace.push(li);
                right_trace.push(ri);
            }
            Attribution::Internal => {}
        }
        left = new_left;
        right = new_right;
    }
    Ok(Projection {
        left: Trace { items: left_trace },
        right: Trace { items: right_trace },
        ambiguous,
    })
}

type Edges = BTreeSet<(StepLabel, Config)>;

fn cross_candidates(
    senders: &Edges,
    receivers: &Edges,
    recorded: &Config,
    swapped: bool,
    out: &mut Vec<(Attribution, Config, Config)>,
) {
    for (lo, to) in senders {
        match lo.as_singleton() {
            Some(ActionLabel::FreeOutput { subject, object }) => {
                for (li, ti) in receivers {
                    if let Some(ActionLabel::FreeInput {
                        subject: si,
                        object: oi,
                    }) = li.as_singleton()
                    {
                        if si == subject && oi == object {
                            let combined = if swapped {
                                Config::par(ti.clone(), to.clone())
                            } else {
                                Config::par(to.clone(), ti.clone())
                            };
                            if normalize_state(&combined) == *recorded {
                                let send = TraceItem::singleton(ActionLabel::FreeOutput {
                                    subject: subject.clone(),
                                    object: object.clone(),
                                });
                                let recv = TraceItem::singleton(ActionLabel::FreeInput {
                                    subject: subject.clone(),
                                    object: object.clone(),
                                });
                                let attr = if swapped {
                                    Attribution::RightSends(send, recv)
                                } else {
                                    Attribution::LeftSends(send, recv)
                                };
                                let (nl, nr) = if swapped {
                                    (ti.clone(), to.clone())
                                } else {
                                    (to.clone(), ti.clone())
                                };
                                out.push((attr, nl, nr));
                            }
                        }
                    }
                }
            }
            Some(ActionLabel::BoundOutput { subject, binder }) => {
                for (li, ti) in receivers {
                    if let Some(ActionLabel::BoundInput {
                        subject: si,
                        binder: bi,
                    }) = li.as_singleton()
                    {
                        if si == subject {
                            let ti2 = substitute(ti, &Subst::single(bi.clone(), binder.clone()));
                            let combined = if swapped {
                                Config::par(ti2.clone(), to.clone())
                            } else {
                                Config::par(to.clone(), ti2.clone())
                            };
                            let closed = Config::restrict(binder.clone(), combined);
                            if normalize_state(&closed) == *recorded {
                                let send = TraceItem::new(
                                    [binder.clone()].into_iter().collect(),
                                    vec![ActionLabel::BoundOutput {
                                        subject: subject.clone(),
                                        binder: binder.clone(),
                                    }],
                                );
                                let recv = TraceItem::singleton(ActionLabel::FreeInput {
                                    subject: subject.clone(),
                                    object: binder.clone(),
                                });
                                let attr = if swapped {
                                    Attribution::RightSends(send, recv)
                                } else {
                                    Attribution::LeftSends(send, recv)
                                };
                                let (nl, nr) = if swapped {
                                    (ti2.clone(), to.clone())
                                } else {
                                    (to.clone(), ti2.clone())
                                };
                                out.push((attr, nl, nr));
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

/// Enumerate bounded silent runs of a parallel term (used to exercise
/// projection).
pub fn tau_runs(
    p: &Config,
    defs: &Behaviors,
    universe: &BTreeSet<Name>,
    max_len: usize,
) -> Result<Vec<RunLog>, TraceError> {
    let root = match p {
        Config::Par(_, _) => p.clone(),
        _ => return Err(TraceError::RootNotPar),
    };
    let mut runs = Vec::new();
    let mut stack: Vec<(Config, Vec<RunStep>)> = vec![(root.clone(), Vec::new())];
    while let Some((current, steps)) = stack.pop() {
        if !steps.is_empty() {
            runs.push(RunLog {
                root: root.clone(),
                steps: steps.clone(),
                fairness: BTreeMap::new(),
            });
        }
        if steps.len() >= max_len {
            continue;
        }
        let mut uni = universe.clone();
        uni.extend(occurring_free_names(&current));
        for (label, target) in step_transitions(&current, defs, &uni)? {
            if label.is_tau() {
                let mut next = steps.clone();
                next.push(RunStep {
                    label,
                    config: target.clone(),
                });
                stack.push((target, next));
            }
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_config, parse_file};

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    fn set(names: &[&str]) -> BTreeSet<Name> {
        names.iter().map(|s| n(s)).collect()
    }

    #[test]
    fn rcp_defining_equations() {
        // rcp(rho, eps) = rho
        assert_eq!(rcp_extend(&set(&["a"]), &Trace::empty()), set(&["a"]));
        // output clause adds exported binders
        let t = parse_trace("[x] y!(x)").unwrap();
        assert_eq!(rcp_extend(&BTreeSet::new(), &t), set(&["x"]));
        // input clause adds nothing
        let t = parse_trace("a?b").unwrap();
        assert_eq!(rcp_extend(&set(&["a"]), &t), set(&["a"]));
    }

    #[test]
    fn empty_trace_well_formed() {
        assert!(check_well_formed(&set(&["a", "b"]), &Trace::empty()).is_well_formed());
    }

    #[test]
    fn paper_step_trace_rejected() {
        // the step trace of nu x. (x?(u).0 | x!x | y!x)
        let t = parse_trace("[x] x?u | x!x | y!(x)").unwrap();
        let verdict = check_well_formed(&BTreeSet::new(), &t);
        match verdict {
            WellFormedVerdict::IllFormed { index, reason } => {
                assert_eq!(index, 0);
                assert!(matches!(
                    reason,
                    IllFormedReason::OutputSubjectInRcp { ref subject } if *subject == n("x")
                ));
            }
            WellFormedVerdict::WellFormed => panic!("must be rejected"),
        }
    }

    #[test]
    fn output_to_receptionist_rejected() {
        let t = parse_trace("a!b").unwrap();
        let verdict = check_well_formed(&set(&["a"]), &t);
        assert!(!verdict.is_well_formed());
    }

    #[test]
    fn stale_binder_rejected() {
        let t = parse_trace("[x] y!(x)").unwrap();
        // x is already a receptionist: the export is not fresh
        let verdict = check_well_formed(&set(&["x"]), &t);
        assert!(matches!(
            verdict,
            WellFormedVerdict::IllFormed {
                reason: IllFormedReason::BinderNotFresh { .. },
                ..
            }
        ));
    }

    #[test]
    fn simulate_nil_is_empty() {
        let run = simulate_fair(&Config::Nil, &Behaviors::new(), 100, 0, 64).unwrap();
        assert!(run.steps.is_empty());
        assert!(run.fairness.is_empty());
    }

    #[test]
    fn simulate_single_com() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let run = simulate_fair(&p, &Behaviors::new(), 10, 0, 64).unwrap();
        assert_eq!(run.steps.len(), 1);
        assert!(run.steps[0].label.is_tau());
        assert_eq!(run.steps[0].config, Config::Nil);
        assert_eq!(
            run.fairness.values().collect::<Vec<_>>(),
            vec![&MessageFate::Delivered { step: 1 }]
        );
    }

    #[test]
    fn simulate_diverge_delivers_externals() {
        let (p, defs) = parse_file(
            "def Diverge(x;) = x?(u).(x!u | Diverge<x;>)\nDiverge<x;> | x!u | y?(v).v!v | y!v",
        )
        .unwrap();
        for seed in 0..5 {
            let run = simulate_fair(&p, &defs, 40, seed, 8).unwrap();
            // the y-message is delivered and the resulting v-message emitted
            let delivered = run
                .fairness
                .values()
                .filter(|f| matches!(f, MessageFate::Delivered { .. }))
                .count();
            assert!(delivered >= 2, "expected deliveries, got {:?}", run.fairness);
            let emitted = run.steps.iter().any(|s| {
                s.label
                    .as_singleton()
                    .is_some_and(|a| matches!(a, ActionLabel::FreeOutput { subject, .. } if *subject == n("v")))
            });
            assert!(emitted, "v!v must be emitted");
            // the loop keeps spinning: several tau steps
            let taus = run.steps.iter().filter(|s| s.label.is_tau()).count();
            assert!(taus > 3);
        }
    }

    #[test]
    fn fates_are_total() {
        let p = parse_config("nu z. z!a | x!y").unwrap();
        let run = simulate_fair(&p, &Behaviors::new(), 10, 1, 4).unwrap();
        // z!a can never move (private subject, no receiver): undeliverable
        assert!(run
            .fairness
            .values()
            .any(|f| matches!(f, MessageFate::Undeliverable)));
        // x!y gets emitted
        assert!(run
            .fairness
            .values()
            .any(|f| matches!(f, MessageFate::Emitted { .. })));
    }

    #[test]
    fn project_unique_com() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let runs = tau_runs(&p, &Behaviors::new(), &BTreeSet::new(), 3).unwrap();
        assert!(!runs.is_empty());
        let proj = project_parallel_run(&runs[0], &Behaviors::new(), &BTreeSet::new()).unwrap();
        assert!(!proj.ambiguous);
        assert_eq!(proj.left.items.len(), 1);
        assert_eq!(proj.left.items[0].to_string(), "x!y");
        assert_eq!(proj.right.items[0].to_string(), "x?y");
        // both are well-formed for empty receptionist sets
        assert!(check_well_formed(&BTreeSet::new(), &proj.left).is_well_formed());
        assert!(check_well_formed(&BTreeSet::new(), &proj.right).is_well_formed());
    }

    #[test]
    fn project_empty_run() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let run = RunLog {
            root: p,
            steps: Vec::new(),
            fairness: BTreeMap::new(),
        };
        let proj = project_parallel_run(&run, &Behaviors::new(), &BTreeSet::new()).unwrap();
        assert!(proj.left.items.is_empty());
        assert!(proj.right.items.is_empty());
    }

    #[test]
    fn project_two_coms() {
        // Sequentialized so both deliveries really derive: joint-step
        // blocking leaves no lone output in `(a!b | c?(v).0) | ...`.
        let p = parse_config("a!b.c?(v).0 | a?(u).c!d").unwrap();
        let runs = tau_runs(&p, &Behaviors::new(), &BTreeSet::new(), 2).unwrap();
        let two_step: Vec<&RunLog> = runs.iter().filter(|r| r.steps.len() == 2).collect();
        assert!(!two_step.is_empty());
        for run in two_step {
            let proj = project_parallel_run(run, &Behaviors::new(), &BTreeSet::new()).unwrap();
            let all: BTreeSet<String> = proj
                .left
                .items
                .iter()
                .chain(&proj.right.items)
                .map(|i| i.to_string())
                .collect();
            assert_eq!(
                all,
                ["a!b", "a?b", "c!d", "c?d"]
                    .into_iter()
                    .map(String::from)
                    .collect::<BTreeSet<_>>()
            );
            assert!(check_well_formed(&BTreeSet::new(), &proj.left).is_well_formed());
            assert!(check_well_formed(&BTreeSet::new(), &proj.right).is_well_formed());
        }
    }

    #[test]
    fn trace_file_roundtrip() {
        let t = parse_trace("[x] a!x | b?y\nc!d\n").unwrap();
        assert_eq!(t.items.len(), 2);
        assert!(t.items[0].binders.contains(&n("x")));
        assert!(t.items[0]
            .actions
            .iter()
            .any(|a| matches!(a, ActionLabel::BoundOutput { .. })));
    }

    #[test]
    fn dangling_binder_rejected() {
        assert!(matches!(
            parse_trace("[z] a!x"),
            Err(TraceError::DanglingBinder(0))
        ));
    }
}
