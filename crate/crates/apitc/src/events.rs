//! Prime event structures obtained by bounded unfolding of a transition
//! system.
//!
//! The unfolding explores configurations of *edge occurrences*: actions
//! sharing a step edge are concurrent by construction, occurrences that
//! commute across a validated diamond are identified (and concurrent), the
//! leftover ordering is causality, and occurrences that never coexist in a
//! reachable configuration are in conflict.

use crate::lts::{ActionLabel, Lts, StepLabel};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct EventId(pub usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventsError {
    #[error("event set is not a configuration (not downward closed or has conflicts)")]
    NotAConfiguration,
    #[error("prime event structure axiom violated: {0}")]
    AxiomViolation(String),
}

/// One event of the structure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EventInfo {
    pub label: ActionLabel,
    /// Strict causal predecessors, transitively closed.
    pub causes: BTreeSet<EventId>,
    /// The step occurrence this event was split from; events of one macro
    /// are pairwise concurrent.
    pub macro_id: usize,
}

/// A prime event structure: events with causality and hereditary conflict;
/// concurrency is the derived complement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pes {
    pub events: Vec<EventInfo>,
    conflicts: BTreeSet<(EventId, EventId)>,
    pub truncated: bool,
}

impl Pes {
    pub fn empty() -> Pes {
        Pes {
            events: Vec::new(),
            conflicts: BTreeSet::new(),
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn label(&self, e: EventId) -> &ActionLabel {
        &self.events[e.0].label
    }

    pub fn event_ids(&self) -> impl Iterator<Item = EventId> + '_ {
        (0..self.events.len()).map(EventId)
    }

    pub fn conflict_pairs(&self) -> impl Iterator<Item = &(EventId, EventId)> {
        self.conflicts.iter()
    }

    /// Strict causality.
    pub fn strictly_below(&self, a: EventId, b: EventId) -> bool {
        self.events[b.0].causes.contains(&a)
    }

    /// The partial order (reflexive).
    pub fn le(&self, a: EventId, b: EventId) -> bool {
        a == b || self.strictly_below(a, b)
    }

    pub fn conflict(&self, a: EventId, b: EventId) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.conflicts.contains(&key)
    }

    pub fn consistent(&self, a: EventId, b: EventId) -> bool {
        !self.conflict(a, b)
    }

    pub fn concurrent(&self, a: EventId, b: EventId) -> bool {
        a != b && !self.le(a, b) && !self.le(b, a) && !self.conflict(a, b)
    }

    /// The local configuration of an event: the event plus everything below.
    pub fn local_config(&self, e: EventId) -> BTreeSet<EventId> {
        let mut c = self.events[e.0].causes.clone();
        c.insert(e);
        c
    }

    /// Check the defining axioms: causality is a partial order with finite
    /// local configurations, conflict is irreflexive, symmetric and
    /// hereditary.
    pub fn validate(&self) -> Result<(), EventsError> {
        for e in self.event_ids() {
            if self.events[e.0].causes.contains(&e) {
                return Err(EventsError::AxiomViolation(format!(
                    "event {e:?} causes itself"
                )));
            }
            for c in &self.events[e.0].causes {
                if !self.events[c.0].causes.is_subset(&self.events[e.0].causes) {
                    return Err(EventsError::AxiomViolation(format!(
                        "causes of {e:?} not transitively closed"
                    )));
                }
            }
        }
        for (a, b) in &self.conflicts {
            if a == b {
                return Err(EventsError::AxiomViolation(format!(
                    "reflexive conflict at {a:?}"
                )));
            }
        }
        for a in self.event_ids() {
            for b in self.event_ids() {
                if a != b && self.strictly_below(a, b) && self.strictly_below(b, a) {
                    return Err(EventsError::AxiomViolation(format!(
                        "causality cycle between {a:?} and {b:?}"
                    )));
                }
            }
        }
        // hereditary: e # e' <= e'' implies e # e''
        for a in self.event_ids() {
            for b in self.event_ids() {
                if self.conflict(a, b) {
                    for c in self.event_ids() {
                        if self.le(b, c) && !self.conflict(a, c) && a != c {
                            return Err(EventsError::AxiomViolation(format!(
                                "conflict not hereditary: {a:?} # {b:?} <= {c:?}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Is the event set conflict-free and causally closed?
    pub fn is_configuration(&self, events: &BTreeSet<EventId>) -> bool {
        for e in events {
            if !self.events[e.0].causes.is_subset(events) {
                return false;
            }
        }
        let v: Vec<EventId> = events.iter().copied().collect();
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                if self.conflict(*a, *b) {
                    return false;
                }
            }
        }
        true
    }

    /// Events addable to a configuration one at a time.
    pub fn enabled(&self, config: &BTreeSet<EventId>) -> Vec<EventId> {
        self.event_ids()
            .filter(|e| !config.contains(e))
            .filter(|e| self.events[e.0].causes.is_subset(config))
            .filter(|e| config.iter().all(|c| !self.conflict(*e, *c)))
            .collect()
    }
}

/// A finite configuration: conflict-free and causally closed.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct PesConfiguration(pub BTreeSet<EventId>);

impl PesConfiguration {
    pub fn empty() -> PesConfiguration {
        PesConfiguration(BTreeSet::new())
    }
}

/// All finite configurations, by breadth-first extension.
pub fn pes_configurations(pes: &Pes) -> BTreeSet<PesConfiguration> {
    let mut out = BTreeSet::new();
    let mut queue = VecDeque::new();
    out.insert(PesConfiguration::empty());
    queue.push_back(BTreeSet::new());
    while let Some(config) = queue.pop_front() {
        for e in pes.enabled(&config) {
            let mut next = config.clone();
            next.insert(e);
            if out.insert(PesConfiguration(next.clone())) {
                queue.push_back(next);
            }
        }
    }
    out
}

/// All pomset transitions from a configuration: non-empty disjoint `X` with
/// `C ∪ X` again a configuration; `step_only` keeps pairwise-concurrent `X`.
pub fn enumerate_pomset_transitions(
    pes: &Pes,
    config: &PesConfiguration,
    step_only: bool,
) -> Result<BTreeSet<(BTreeSet<EventId>, PesConfiguration)>, EventsError> {
    if !pes.is_configuration(&config.0) {
        return Err(EventsError::NotAConfiguration);
    }
    let candidates: Vec<EventId> = pes
        .event_ids()
        .filter(|e| !config.0.contains(e))
        .filter(|e| config.0.iter().all(|c| !pes.conflict(*e, *c)))
        .collect();
    let mut out = BTreeSet::new();
    let n = candidates.len().min(20);
    // Subset enumeration is fine at the sizes bounded unfoldings produce.
    for mask in 1u64..(1u64 << n) {
        let x: BTreeSet<EventId> = candidates
            .iter()
            .take(n)
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, e)| *e)
            .collect();
        let union: BTreeSet<EventId> = config.0.union(&x).copied().collect();
        if !pes.is_configuration(&union) {
            continue;
        }
        if step_only {
            let v: Vec<EventId> = x.iter().copied().collect();
            let pairwise = v
                .iter()
                .enumerate()
                .all(|(i, a)| v[i + 1..].iter().all(|b| pes.concurrent(*a, *b)));
            if !pairwise {
                continue;
            }
        }
        out.insert((x, PesConfiguration(union)));
    }
    Ok(out)
}

/// The unfolding of a transition system: a PES together with the map from
/// step-complete configurations to the state reached by executing them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Unfolding {
    pub pes: Pes,
    /// Step-complete configurations (unions of whole step occurrences) to
    /// the LTS state they reach.
    pub config_states: BTreeMap<BTreeSet<EventId>, usize>,
    /// Events of each step occurrence, in label order.
    pub macro_events: Vec<Vec<EventId>>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
struct MacroKey {
    causes: BTreeSet<usize>,
    label: StepLabel,
    /// State reached by executing `causes ∪ {this}` alone.
    local_dst: usize,
}

/// Unfold a transition system into a prime event structure, exploring runs
/// of at most `depth` steps.
pub fn unfold_to_pes(lts: &Lts, depth: usize) -> Unfolding {
    let mut macro_keys: Vec<MacroKey> = Vec::new();
    let mut macro_index: BTreeMap<MacroKey, usize> = BTreeMap::new();
    let mut state_of: BTreeMap<BTreeSet<usize>, usize> = BTreeMap::new();
    state_of.insert(BTreeSet::new(), lts.root);
    let mut queue: VecDeque<BTreeSet<usize>> = VecDeque::new();
    queue.push_back(BTreeSet::new());
    let mut truncated = lts.is_truncated();

    while let Some(config) = queue.pop_front() {
        let state = state_of[&config];
        if config.len() >= depth {
            if lts.outgoing(state).next().is_some() {
                truncated = true;
            }
            continue;
        }
        for (_, label, dst) in lts.outgoing(state) {
            // Push the occurrence back through commuting maximal events to
            // its minimal configuration.
            let mut causes = config.clone();
            let mut local_dst = *dst;
            let mut here = state;
            'shrink: loop {
                let maximals: Vec<usize> = causes
                    .iter()
                    .copied()
                    .filter(|e| {
                        causes
                            .iter()
                            .all(|f| e == f || !macro_keys[*f].causes.contains(e))
                    })
                    .collect();
                for e in maximals {
                    let mut smaller = causes.clone();
                    smaller.remove(&e);
                    let Some(&s_small) = state_of.get(&smaller) else {
                        continue;
                    };
                    let e_label = &macro_keys[e].label;
                    // Diamond: the label fires from the smaller state to a
                    // corner distinct from the current intermediate (a
                    // genuine swap), and e fires from that corner to the
                    // current local destination.
                    let swap = lts
                        .outgoing(s_small)
                        .filter(|(_, l, _)| l == label)
                        .map(|(_, _, u)| *u)
                        .filter(|u| *u != here)
                        .find(|u| {
                            lts.edges
                                .iter()
                                .any(|(s, l, t)| s == u && l == e_label && *t == local_dst)
                        });
                    if let Some(u) = swap {
                        causes = smaller;
                        local_dst = u;
                        here = s_small;
                        continue 'shrink;
                    }
                }
                break;
            }
            let key = MacroKey {
                causes,
                label: label.clone(),
                local_dst,
            };
            let id = match macro_index.get(&key) {
                Some(&id) => id,
                None => {
                    let id = macro_keys.len();
                    macro_keys.push(key.clone());
                    macro_index.insert(key, id);
                    id
                }
            };
            let mut next = config.clone();
            next.insert(id);
            if !state_of.contains_key(&next) {
                state_of.insert(next.clone(), *dst);
                queue.push_back(next);
            }
        }
    }

    // Transitively close macro causes.
    let n = macro_keys.len();
    let mut mcauses: Vec<BTreeSet<usize>> = macro_keys.iter().map(|k| k.causes.clone()).collect();
    loop {
        let mut grew = false;
        for i in 0..n {
            let mut extra = BTreeSet::new();
            for c in &mcauses[i] {
                extra.extend(mcauses[*c].iter().copied());
            }
            let before = mcauses[i].len();
            mcauses[i].extend(extra);
            grew |= mcauses[i].len() != before;
        }
        if !grew {
            break;
        }
    }

    // Conflict at the macro level: never jointly reachable.
    let mut coexist: BTreeSet<(usize, usize)> = BTreeSet::new();
    for config in state_of.keys() {
        let v: Vec<usize> = config.iter().copied().collect();
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                coexist.insert((*a, *b));
            }
        }
    }

    // Split macros into per-action events.
    let mut events = Vec::new();
    let mut macro_events: Vec<Vec<EventId>> = Vec::with_capacity(n);
    for (m, key) in macro_keys.iter().enumerate() {
        let mut ids = Vec::new();
        for action in key.label.actions() {
            ids.push(EventId(events.len()));
            events.push(EventInfo {
                label: action.clone(),
                causes: BTreeSet::new(),
                macro_id: m,
            });
        }
        macro_events.push(ids);
    }
    for m in 0..n {
        let mut causes = BTreeSet::new();
        for c in &mcauses[m] {
            causes.extend(macro_events[*c].iter().copied());
        }
        for e in &macro_events[m] {
            events[e.0].causes = causes.clone();
        }
    }
    let mut conflicts = BTreeSet::new();
    for a in 0..n {
        for b in a + 1..n {
            let related = mcauses[a].contains(&b) || mcauses[b].contains(&a);
            if !related && !coexist.contains(&(a, b)) {
                for ea in &macro_events[a] {
                    for eb in &macro_events[b] {
                        let key = if ea <= eb { (*ea, *eb) } else { (*eb, *ea) };
                        conflicts.insert(key);
                    }
                }
            }
        }
    }
    let pes = Pes {
        events,
        conflicts,
        truncated,
    };
    let config_states: BTreeMap<BTreeSet<EventId>, usize> = state_of
        .iter()
        .map(|(config, state)| {
            let split: BTreeSet<EventId> = config
                .iter()
                .flat_map(|m| macro_events[*m].iter().copied())
                .collect();
            (split, *state)
        })
        .collect();
    Unfolding {
        pes,
        config_states,
        macro_events,
    }
}

impl Unfolding {
    /// Silent-closure successors: configurations reached by adding only
    /// `tau`-labelled events.
    pub fn tau_closure(&self, config: &BTreeSet<EventId>) -> BTreeSet<BTreeSet<EventId>> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::new();
        out.insert(config.clone());
        queue.push_back(config.clone());
        while let Some(c) = queue.pop_front() {
            for e in self.pes.enabled(&c) {
                if self.pes.label(e).is_tau() {
                    let mut next = c.clone();
                    next.insert(e);
                    if out.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Bounds;
    use crate::lts::build_lts;
    use crate::syntax::{parse_config, Behaviors};

    fn unfold(text: &str, depth: usize) -> Unfolding {
        let p = parse_config(text).unwrap();
        let lts = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(depth)).unwrap();
        unfold_to_pes(&lts, depth)
    }

    #[test]
    fn empty_pes_has_empty_configuration() {
        let pes = Pes::empty();
        let configs = pes_configurations(&pes);
        assert_eq!(configs.len(), 1);
        assert!(configs.contains(&PesConfiguration::empty()));
    }

    #[test]
    fn shared_step_edge_makes_events_concurrent() {
        let u = unfold("x!y | u?(v).0", 2);
        u.pes.validate().unwrap();
        let pair = u
            .macro_events
            .iter()
            .find(|ids| ids.len() == 2)
            .expect("a two-action step occurrence");
        assert!(u.pes.concurrent(pair[0], pair[1]));
    }

    #[test]
    fn sequential_prefixes_are_causal() {
        let u = unfold("x?(v).tau.0", 3);
        u.pes.validate().unwrap();
        let input = u
            .pes
            .event_ids()
            .find(|e| matches!(u.pes.label(*e), ActionLabel::BoundInput { .. }))
            .expect("bound input event");
        let tau_after = u
            .pes
            .event_ids()
            .find(|e| u.pes.label(*e).is_tau() && u.pes.strictly_below(input, *e));
        assert!(tau_after.is_some(), "input must cause its continuation tau");
    }

    #[test]
    fn distinct_branches_conflict() {
        let u = unfold("case u of { u: x!a, u: y!b }", 2);
        u.pes.validate().unwrap();
        let taus: Vec<EventId> = u
            .pes
            .event_ids()
            .filter(|e| u.pes.label(*e).is_tau())
            .collect();
        assert_eq!(taus.len(), 2);
        assert!(u.pes.conflict(taus[0], taus[1]));
    }

    #[test]
    fn configurations_of_two_concurrent_events() {
        let u = unfold("x!y | u?(v).0", 2);
        let pair: BTreeSet<EventId> = u
            .macro_events
            .iter()
            .find(|ids| ids.len() == 2)
            .unwrap()
            .iter()
            .copied()
            .collect();
        let configs = pes_configurations(&u.pes);
        let of_pair: BTreeSet<BTreeSet<EventId>> = configs
            .iter()
            .map(|c| c.0.intersection(&pair).copied().collect())
            .collect();
        // all four subsets of the concurrent pair occur
        assert!(of_pair.len() >= 4);
    }

    #[test]
    fn pomset_transitions_on_chain() {
        let u = unfold("x?(v).tau.0", 3);
        let input = u
            .pes
            .event_ids()
            .find(|e| matches!(u.pes.label(*e), ActionLabel::BoundInput { .. }))
            .unwrap();
        let tau = u
            .pes
            .event_ids()
            .find(|e| u.pes.label(*e).is_tau() && u.pes.strictly_below(input, *e))
            .unwrap();
        let from_empty =
            enumerate_pomset_transitions(&u.pes, &PesConfiguration::empty(), false).unwrap();
        let xs: BTreeSet<BTreeSet<EventId>> = from_empty.into_iter().map(|(x, _)| x).collect();
        let chain: BTreeSet<EventId> = [input, tau].into_iter().collect();
        assert!(xs.contains(&chain));
        let steps =
            enumerate_pomset_transitions(&u.pes, &PesConfiguration::empty(), true).unwrap();
        let xs_steps: BTreeSet<BTreeSet<EventId>> = steps.into_iter().map(|(x, _)| x).collect();
        assert!(!xs_steps.contains(&chain), "causal chain is not a step");
        let c = PesConfiguration([input].into_iter().collect());
        let from_input = enumerate_pomset_transitions(&u.pes, &c, true).unwrap();
        assert!(from_input
            .iter()
            .any(|(x, _)| x.len() == 1 && x.contains(&tau)));
    }

    #[test]
    fn pomset_transitions_compose() {
        let u = unfold("x!y | u?(v).0", 2);
        let pes = &u.pes;
        for c in pes_configurations(pes) {
            let all = enumerate_pomset_transitions(pes, &c, false).unwrap();
            for (x, c1) in &all {
                for (y, c2) in enumerate_pomset_transitions(pes, c1, false).unwrap() {
                    let union: BTreeSet<EventId> = x.union(&y).copied().collect();
                    assert!(
                        all.iter().any(|(z, target)| *z == union && *target == c2),
                        "composition must be a pomset transition"
                    );
                }
            }
        }
    }

    #[test]
    fn config_states_cohere() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let lts = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(3)).unwrap();
        let u = unfold_to_pes(&lts, 3);
        u.pes.validate().unwrap();
        assert_eq!(u.config_states[&BTreeSet::new()], lts.root);
        for state in u.config_states.values() {
            assert!(*state < lts.states.len());
        }
    }

    #[test]
    fn tau_closure_collects_silent_chains() {
        let u = unfold("x!y | x?(v).tau.0", 4);
        let closures = u.tau_closure(&BTreeSet::new());
        assert!(closures.iter().any(|c| c.len() == 2));
    }

    #[test]
    fn not_a_configuration_rejected() {
        let u = unfold("x?(v).tau.0", 3);
        let tau = u
            .pes
            .event_ids()
            .find(|e| u.pes.label(*e).is_tau())
            .unwrap();
        let bad = PesConfiguration([tau].into_iter().collect());
        assert!(matches!(
            enumerate_pomset_transitions(&u.pes, &bad, false),
            Err(EventsError::NotAConfiguration)
        ));
    }

    #[test]
    fn truncation_is_flagged() {
        let p = parse_config("x?(v).x?(u).x?(w).0").unwrap();
        let lts = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(2)).unwrap();
        let u = unfold_to_pes(&lts, 2);
        assert!(u.pes.truncated);
    }
}
