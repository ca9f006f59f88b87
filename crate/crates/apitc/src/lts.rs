//! The truly concurrent operational semantics: step-labelled transitions and
//! bounded transition-system construction over normalized configurations.
//!
//! Parallel components that can both move only move together (joint steps,
//! communications, joint bound inputs); a component moves alone exactly when
//! its sibling has no transition that could survive the enclosing
//! restrictions. Free inputs are instantiated over a finite universe (free
//! names of the state, configured extras, and one deterministic fresh
//! witness); the bound-input edge stands for every other fresh instantiation.

use crate::config::Bounds;
use crate::syntax::{
    all_names, canonicalize, occurring_free_names, substitute, Behaviors, Config, Name, Prefix,
    Subst,
};
use crate::typing::{typecheck, TypeError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

/// An atomic transition label.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum ActionLabel {
    Tau,
    FreeInput { subject: Name, object: Name },
    BoundInput { subject: Name, binder: Name },
    FreeOutput { subject: Name, object: Name },
    BoundOutput { subject: Name, binder: Name },
}

impl ActionLabel {
    pub fn is_tau(&self) -> bool {
        matches!(self, ActionLabel::Tau)
    }

    pub fn subject(&self) -> Option<&Name> {
        match self {
            ActionLabel::Tau => None,
            ActionLabel::FreeInput { subject, .. }
            | ActionLabel::BoundInput { subject, .. }
            | ActionLabel::FreeOutput { subject, .. }
            | ActionLabel::BoundOutput { subject, .. } => Some(subject),
        }
    }

    /// Object or binder name, when present.
    pub fn object_name(&self) -> Option<&Name> {
        match self {
            ActionLabel::Tau => None,
            ActionLabel::FreeInput { object, .. } | ActionLabel::FreeOutput { object, .. } => {
                Some(object)
            }
            ActionLabel::BoundInput { binder, .. } | ActionLabel::BoundOutput { binder, .. } => {
                Some(binder)
            }
        }
    }

    /// All names of the action, `n(alpha)`.
    pub fn names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        if let Some(s) = self.subject() {
            out.insert(s.clone());
        }
        if let Some(o) = self.object_name() {
            out.insert(o.clone());
        }
        out
    }

    /// Bound names of the action.
    pub fn bound_names(&self) -> BTreeSet<Name> {
        match self {
            ActionLabel::BoundInput { binder, .. } | ActionLabel::BoundOutput { binder, .. } => {
                [binder.clone()].into_iter().collect()
            }
            _ => BTreeSet::new(),
        }
    }

    pub fn is_input(&self) -> bool {
        matches!(
            self,
            ActionLabel::FreeInput { .. } | ActionLabel::BoundInput { .. }
        )
    }

    pub fn is_output(&self) -> bool {
        matches!(
            self,
            ActionLabel::FreeOutput { .. } | ActionLabel::BoundOutput { .. }
        )
    }

    /// Co-action test: same subject, opposite polarity, same object or
    /// binder name. This is what disables a joint step on a communicating
    /// redex pair.
    pub fn complementary(&self, other: &ActionLabel) -> bool {
        let (a, b) = (self, other);
        let same = |x: &ActionLabel, y: &ActionLabel| {
            x.subject() == y.subject() && x.object_name() == y.object_name()
        };
        (a.is_output() && b.is_input() || a.is_input() && b.is_output()) && same(a, b)
    }

    fn rename(&self, s: &Subst) -> ActionLabel {
        match self {
            ActionLabel::Tau => ActionLabel::Tau,
            ActionLabel::FreeInput { subject, object } => ActionLabel::FreeInput {
                subject: s.apply(subject),
                object: s.apply(object),
            },
            ActionLabel::BoundInput { subject, binder } => ActionLabel::BoundInput {
                subject: s.apply(subject),
                binder: s.apply(binder),
            },
            ActionLabel::FreeOutput { subject, object } => ActionLabel::FreeOutput {
                subject: s.apply(subject),
                object: s.apply(object),
            },
            ActionLabel::BoundOutput { subject, binder } => ActionLabel::BoundOutput {
                subject: s.apply(subject),
                binder: s.apply(binder),
            },
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionLabel::Tau => write!(f, "tau"),
            ActionLabel::FreeInput { subject, object } => write!(f, "{subject}?{object}"),
            ActionLabel::BoundInput { subject, binder } => write!(f, "{subject}?({binder})"),
            ActionLabel::FreeOutput { subject, object } => write!(f, "{subject}!{object}"),
            ActionLabel::BoundOutput { subject, binder } => write!(f, "{subject}!({binder})"),
        }
    }
}

/// A finite multiset of actions performed simultaneously. `tau` only ever
/// appears as a singleton.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct StepLabel {
    actions: Vec<ActionLabel>,
}

impl StepLabel {
    pub fn new(mut actions: Vec<ActionLabel>) -> StepLabel {
        assert!(!actions.is_empty(), "step labels are non-empty");
        actions.sort();
        StepLabel { actions }
    }

    pub fn tau() -> StepLabel {
        StepLabel::new(vec![ActionLabel::Tau])
    }

    pub fn singleton(a: ActionLabel) -> StepLabel {
        StepLabel::new(vec![a])
    }

    pub fn actions(&self) -> &[ActionLabel] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_tau(&self) -> bool {
        self.actions.len() == 1 && self.actions[0].is_tau()
    }

    pub fn as_singleton(&self) -> Option<&ActionLabel> {
        if self.actions.len() == 1 {
            Some(&self.actions[0])
        } else {
            None
        }
    }

    pub fn contains_tau(&self) -> bool {
        self.actions.iter().any(ActionLabel::is_tau)
    }

    pub fn names(&self) -> BTreeSet<Name> {
        self.actions.iter().flat_map(|a| a.names()).collect()
    }

    pub fn bound_names(&self) -> BTreeSet<Name> {
        self.actions.iter().flat_map(|a| a.bound_names()).collect()
    }

    pub fn union(&self, other: &StepLabel) -> StepLabel {
        let mut actions = self.actions.clone();
        actions.extend(other.actions.iter().cloned());
        StepLabel::new(actions)
    }

    pub fn rename(&self, s: &Subst) -> StepLabel {
        StepLabel::new(self.actions.iter().map(|a| a.rename(s)).collect())
    }
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(a) = self.as_singleton() {
            write!(f, "{a}")
        } else {
            let items: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
            write!(f, "{{{}}}", items.join(", "))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LtsError {
    #[error("undefined behavior `{0}`")]
    UndefinedBehavior(String),
    #[error("bounds must be positive")]
    BadBounds,
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// A bounded transition system over normalized configurations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lts {
    pub root: usize,
    pub states: Vec<Config>,
    pub edges: BTreeSet<(usize, StepLabel, usize)>,
    /// States whose successors were cut off by the bounds.
    pub truncated: BTreeSet<usize>,
    pub universe_base: BTreeSet<Name>,
}

impl Lts {
    pub fn is_truncated(&self) -> bool {
        !self.truncated.is_empty()
    }

    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &(usize, StepLabel, usize)> {
        self.edges.iter().filter(move |(s, _, _)| *s == state)
    }
}

/// Structural normalization used for state identity: drops inert `0`
/// components, sorts parallel components by canonical form, erases
/// restrictions whose name no longer occurs, then canonicalizes binders.
/// Recursive behaviors loop through finitely many such states instead of
/// accumulating inert wrappers.
pub fn normalize_state(p: &Config) -> Config {
    canonicalize(&normalize_rec(p))
}

fn normalize_rec(p: &Config) -> Config {
    match p {
        Config::Nil => Config::Nil,
        Config::Msg {
            subject,
            object,
            cont,
        } => {
            let cont = cont.as_ref().map(|c| normalize_rec(c));
            let cont = match cont {
                Some(Config::Nil) => None,
                other => other.map(Box::new),
            };
            Config::Msg {
                subject: subject.clone(),
                object: object.clone(),
                cont,
            }
        }
        Config::Input {
            subject,
            binder,
            body,
        } => Config::Input {
            subject: subject.clone(),
            binder: binder.clone(),
            body: Box::new(normalize_rec(body)),
        },
        Config::Restrict { binder, body } => {
            let body = normalize_rec(body);
            if occurring_free_names(&body).contains(binder) {
                Config::Restrict {
                    binder: binder.clone(),
                    body: Box::new(body),
                }
            } else {
                body
            }
        }
        Config::Case {
            scrutinee,
            branches,
        } => Config::Case {
            scrutinee: scrutinee.clone(),
            branches: branches
                .iter()
                .map(|(g, b)| (g.clone(), normalize_rec(b)))
                .collect(),
        },
        Config::Par(_, _) => {
            let mut parts = Vec::new();
            flatten_par(p, &mut parts);
            let mut parts: Vec<Config> = parts
                .into_iter()
                .map(|c| normalize_rec(&c))
                .filter(|c| *c != Config::Nil)
                .collect();
            if parts.is_empty() {
                return Config::Nil;
            }
            parts.sort_by_key(|c| canonicalize(c));
            let mut iter = parts.into_iter();
            let first = iter.next().unwrap();
            iter.fold(first, Config::par)
        }
        Config::Inst { .. } => p.clone(),
        Config::Tau(body) => Config::tau(normalize_rec(body)),
        Config::Step { prefixes, body } => Config::Step {
            prefixes: prefixes.clone(),
            body: Box::new(normalize_rec(body)),
        },
    }
}

fn flatten_par(p: &Config, out: &mut Vec<Config>) {
    match p {
        Config::Par(l, r) => {
            flatten_par(l, out);
            flatten_par(r, out);
        }
        other => out.push(other.clone()),
    }
}

type Transitions = Vec<(StepLabel, Config)>;

/// All step transitions of `p`, with free-input objects drawn from
/// `universe ∪ fn(p)` plus one deterministic fresh witness, labels and
/// targets canonicalized.
pub fn step_transitions(
    p: &Config,
    defs: &Behaviors,
    universe: &BTreeSet<Name>,
) -> Result<BTreeSet<(StepLabel, Config)>, LtsError> {
    let mut uni: BTreeSet<Name> = universe.clone();
    uni.extend(occurring_free_names(p));
    let witness = Name::fresh_src(&uni);
    uni.insert(witness);
    let raw = trans(p, defs, &uni, &BTreeSet::new())?;
    let mut out = BTreeSet::new();
    for (label, target) in raw {
        out.insert(canonicalize_edge(p, &uni, label, target));
    }
    Ok(out)
}

/// Rename bound-action binders of an edge to the deterministic fresh family
/// and normalize the target, so alpha-variant edges coincide.
fn canonicalize_edge(
    source: &Config,
    uni: &BTreeSet<Name>,
    label: StepLabel,
    target: Config,
) -> (StepLabel, Config) {
    let mut avoid: BTreeSet<Name> = uni.clone();
    avoid.extend(occurring_free_names(source));
    let mut renaming = Subst::new();
    for action in label.actions() {
        for binder in action.bound_names() {
            if renaming.domain().any(|d| *d == binder) {
                continue;
            }
            let fresh = Name::fresh_src(&avoid);
            avoid.insert(fresh.clone());
            renaming.bind(binder, fresh);
        }
    }
    let label = label.rename(&renaming);
    let target = substitute(&target, &renaming);
    (label, normalize_state(&target))
}

/// Whether a transition could survive the enclosing restrictions: either no
/// restricted name occurs in the label, or the label is a lone free output
/// of exactly one restricted name (which an enclosing restriction opens).
fn passable(label: &StepLabel, restricted: &BTreeSet<Name>) -> bool {
    let mentioned: BTreeSet<Name> = label
        .names()
        .into_iter()
        .filter(|n| restricted.contains(n))
        .collect();
    if mentioned.is_empty() {
        return true;
    }
    if let Some(ActionLabel::FreeOutput { subject, object }) = label.as_singleton() {
        return mentioned.len() == 1
            && mentioned.contains(object)
            && !restricted.contains(subject)
            && subject != object;
    }
    false
}

fn trans(
    p: &Config,
    defs: &Behaviors,
    uni: &BTreeSet<Name>,
    restricted: &BTreeSet<Name>,
) -> Result<Transitions, LtsError> {
    match p {
        Config::Nil => Ok(Vec::new()),
        Config::Msg {
            subject,
            object,
            cont,
        } => Ok(vec![(
            StepLabel::singleton(ActionLabel::FreeOutput {
                subject: subject.clone(),
                object: object.clone(),
            }),
            cont.as_deref().cloned().unwrap_or(Config::Nil),
        )]),
        Config::Tau(body) => Ok(vec![(StepLabel::tau(), (**body).clone())]),
        Config::Input {
            subject,
            binder,
            body,
        } => {
            let mut out = Vec::new();
            for z in uni {
                out.push((
                    StepLabel::singleton(ActionLabel::FreeInput {
                        subject: subject.clone(),
                        object: z.clone(),
                    }),
                    substitute(body, &Subst::single(binder.clone(), z.clone())),
                ));
            }
            // Bound input: one representative fresh instantiation.
            let mut avoid = uni.clone();
            avoid.extend(all_names(p));
            let fresh = Name::fresh_src(&avoid);
            out.push((
                StepLabel::singleton(ActionLabel::BoundInput {
                    subject: subject.clone(),
                    binder: fresh.clone(),
                }),
                substitute(body, &Subst::single(binder.clone(), fresh)),
            ));
            Ok(out)
        }
        Config::Restrict { binder, body } => {
            // Freshen the restricted name so it cannot collide with the
            // universe or outer names.
            let mut avoid = uni.clone();
            avoid.extend(all_names(body));
            avoid.extend(restricted.iter().cloned());
            let hidden = Name::fresh_src(&avoid);
            let body = substitute(body, &Subst::single(binder.clone(), hidden.clone()));
            let mut inner_uni = uni.clone();
            inner_uni.insert(hidden.clone());
            let mut inner_restricted = restricted.clone();
            inner_restricted.insert(hidden.clone());
            let inner = trans(&body, defs, &inner_uni, &inner_restricted)?;
            let mut out = Vec::new();
            for (label, target) in inner {
                if !label.names().contains(&hidden) {
                    out.push((
                        label,
                        Config::Restrict {
                            binder: hidden.clone(),
                            body: Box::new(target),
                        },
                    ));
                } else if let Some(ActionLabel::FreeOutput { subject, object }) =
                    label.as_singleton()
                {
                    // OPEN: emit the restricted name as a bound output.
                    if *object == hidden && *subject != hidden {
                        out.push((
                            StepLabel::singleton(ActionLabel::BoundOutput {
                                subject: subject.clone(),
                                binder: hidden.clone(),
                            }),
                            target,
                        ));
                    }
                }
            }
            Ok(out)
        }
        Config::Case {
            scrutinee,
            branches,
        } => Ok(branches
            .iter()
            .filter(|(guard, _)| guard == scrutinee)
            .map(|(_, body)| (StepLabel::tau(), body.clone()))
            .collect()),
        Config::Inst {
            behavior,
            actor_args,
            param_args,
        } => {
            let def = defs
                .get(behavior)
                .ok_or_else(|| LtsError::UndefinedBehavior(behavior.0.clone()))?;
            let subst = Subst::from_pairs(
                def.actor_params
                    .iter()
                    .cloned()
                    .zip(actor_args.iter().cloned())
                    .chain(
                        def.value_params
                            .iter()
                            .cloned()
                            .zip(param_args.iter().cloned()),
                    ),
            );
            let unfolded = substitute(&def.body, &subst);
            trans(&unfolded, defs, uni, restricted)
        }
        Config::Step { prefixes, body } => {
            // All prefixes fire simultaneously; each input head is
            // instantiated over the universe plus a fresh bound variant.
            let mut avoid = uni.clone();
            avoid.extend(all_names(p));
            let mut combos: Vec<(Vec<ActionLabel>, Subst)> = vec![(Vec::new(), Subst::new())];
            for pre in prefixes {
                match pre {
                    Prefix::Out { subject, object } => {
                        for (actions, _) in &mut combos {
                            actions.push(ActionLabel::FreeOutput {
                                subject: subject.clone(),
                                object: object.clone(),
                            });
                        }
                    }
                    Prefix::In { subject, binder } => {
                        let fresh = Name::fresh_src(&avoid);
                        avoid.insert(fresh.clone());
                        let mut next = Vec::new();
                        for (actions, subst) in combos {
                            for z in uni {
                                let mut a = actions.clone();
                                a.push(ActionLabel::FreeInput {
                                    subject: subject.clone(),
                                    object: z.clone(),
                                });
                                let mut s = subst.clone();
                                s.bind(binder.clone(), z.clone());
                                next.push((a, s));
                            }
                            let mut a = actions.clone();
                            a.push(ActionLabel::BoundInput {
                                subject: subject.clone(),
                                binder: fresh.clone(),
                            });
                            let mut s = subst.clone();
                            s.bind(binder.clone(), fresh.clone());
                            next.push((a, s));
                        }
                        combos = next;
                    }
                }
            }
            Ok(combos
                .into_iter()
                .map(|(actions, subst)| (StepLabel::new(actions), substitute(body, &subst)))
                .collect())
        }
        Config::Par(l, r) => {
            let tl = trans(l, defs, uni, restricted)?;
            let tr = trans(r, defs, uni, restricted)?;
            let pl: Transitions = tl
                .iter()
                .filter(|(lab, _)| passable(lab, restricted))
                .cloned()
                .collect();
            let pr: Transitions = tr
                .iter()
                .filter(|(lab, _)| passable(lab, restricted))
                .cloned()
                .collect();
            let mut out = Vec::new();

            // Lone moves only when the sibling cannot act.
            if !pl.is_empty() && pr.is_empty() {
                for (label, target) in &pl {
                    let (label, target) =
                        avoid_binder_clash(label, target, &occurring_free_names(r), uni);
                    out.push((label, Config::par(target, (**r).clone())));
                }
            }
            if pl.is_empty() && !pr.is_empty() {
                for (label, target) in &pr {
                    let (label, target) =
                        avoid_binder_clash(label, target, &occurring_free_names(l), uni);
                    out.push((label, Config::par((**l).clone(), target)));
                }
            }

            if !pl.is_empty() && !pr.is_empty() {
                // Joint steps of one transition from each side.
                for (la, ta) in &pl {
                    if la.contains_tau() {
                        continue;
                    }
                    'right: for (lb, tb) in &pr {
                        if lb.contains_tau() {
                            continue;
                        }
                        let mut avoid: BTreeSet<Name> = uni.clone();
                        avoid.extend(occurring_free_names(l));
                        avoid.extend(occurring_free_names(r));
                        avoid.extend(la.names());
                        let (la, ta) = avoid_binder_clash(la, ta, &occurring_free_names(r), uni);
                        let (lb, tb) = {
                            let mut avoid_b = avoid.clone();
                            avoid_b.extend(la.bound_names());
                            avoid_binder_clash_full(lb, tb, &avoid_b)
                        };
                        for a in la.actions() {
                            for b in lb.actions() {
                                if a.complementary(b) {
                                    continue 'right;
                                }
                            }
                        }
                        out.push((la.union(&lb), Config::par(ta, tb)));
                    }
                }

                // Joint bound input of a shared fresh name.
                for (la, ta) in &pl {
                    let Some(ActionLabel::BoundInput {
                        subject: x1,
                        binder: b1,
                    }) = la.as_singleton()
                    else {
                        continue;
                    };
                    for (lb, tb) in &pr {
                        let Some(ActionLabel::BoundInput {
                            subject: x2,
                            binder: b2,
                        }) = lb.as_singleton()
                        else {
                            continue;
                        };
                        let mut avoid = uni.clone();
                        avoid.extend(occurring_free_names(l));
                        avoid.extend(occurring_free_names(r));
                        let shared = Name::fresh_src(&avoid);
                        let label = StepLabel::new(vec![
                            ActionLabel::BoundInput {
                                subject: x1.clone(),
                                binder: shared.clone(),
                            },
                            ActionLabel::BoundInput {
                                subject: x2.clone(),
                                binder: shared.clone(),
                            },
                        ]);
                        let target = Config::par(
                            substitute(ta, &Subst::single(b1.clone(), shared.clone())),
                            substitute(tb, &Subst::single(b2.clone(), shared.clone())),
                        );
                        out.push((label, target));
                    }
                }
            }

            // Communications pair singleton outputs with singleton inputs,
            // regardless of what else the siblings could do.
            out.extend(communications(&tl, &tr, false, uni));
            out.extend(communications(&tr, &tl, true, uni));
            Ok(out)
        }
    }
}

/// Rename bound binders of a transition away from a set of names the label
/// must not capture.
fn avoid_binder_clash(
    label: &StepLabel,
    target: &Config,
    sibling_free: &BTreeSet<Name>,
    uni: &BTreeSet<Name>,
) -> (StepLabel, Config) {
    let mut avoid: BTreeSet<Name> = uni.union(sibling_free).cloned().collect();
    avoid.extend(label.names());
    let mut renaming = Subst::new();
    for b in label.bound_names() {
        if sibling_free.contains(&b) {
            let fresh = Name::fresh_src(&avoid);
            avoid.insert(fresh.clone());
            renaming.bind(b, fresh);
        }
    }
    if renaming.is_identity() {
        (label.clone(), target.clone())
    } else {
        (label.rename(&renaming), substitute(target, &renaming))
    }
}

/// Rename every bound binder of a transition away from `avoid`.
fn avoid_binder_clash_full(
    label: &StepLabel,
    target: &Config,
    avoid: &BTreeSet<Name>,
) -> (StepLabel, Config) {
    let mut avoid = avoid.clone();
    avoid.extend(label.names());
    let mut renaming = Subst::new();
    for b in label.bound_names() {
        let fresh = Name::fresh_src(&avoid);
        avoid.insert(fresh.clone());
        renaming.bind(b, fresh);
    }
    if renaming.is_identity() {
        (label.clone(), target.clone())
    } else {
        (label.rename(&renaming), substitute(target, &renaming))
    }
}

/// COM and CLOSE: an output on one side against a matching input on the
/// other. `swapped` restores operand order in the target.
fn communications(
    outs: &Transitions,
    ins: &Transitions,
    swapped: bool,
    uni: &BTreeSet<Name>,
) -> Transitions {
    let mut result = Vec::new();
    for (lo, to) in outs {
        match lo.as_singleton() {
            Some(ActionLabel::FreeOutput { subject, object }) => {
                for (li, ti) in ins {
                    if let Some(ActionLabel::FreeInput {
                        subject: si,
                        object: oi,
                    }) = li.as_singleton()
                    {
                        if si == subject && oi == object {
                            let pair = if swapped {
                                Config::par(ti.clone(), to.clone())
                            } else {
                                Config::par(to.clone(), ti.clone())
                            };
                            result.push((StepLabel::tau(), pair));
                        }
                    }
                }
            }
            Some(ActionLabel::BoundOutput { subject, binder }) => {
                // CLOSE: the receiver's bound input stands for receiving the
                // exported fresh name.
                for (li, ti) in ins {
                    if let Some(ActionLabel::BoundInput {
                        subject: si,
                        binder: bi,
                    }) = li.as_singleton()
                    {
                        if si == subject {
                            let mut avoid = uni.clone();
                            avoid.extend(all_names(to));
                            avoid.extend(all_names(ti));
                            let fresh = Name::fresh_src(&avoid);
                            let to2 = substitute(to, &Subst::single(binder.clone(), fresh.clone()));
                            let ti2 = substitute(ti, &Subst::single(bi.clone(), fresh.clone()));
                            let pair = if swapped {
                                Config::par(ti2, to2)
                            } else {
                                Config::par(to2, ti2)
                            };
                            result.push((
                                StepLabel::tau(),
                                Config::Restrict {
                                    binder: fresh,
                                    body: Box::new(pair),
                                },
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    result
}

/// Breadth-first closure of [`step_transitions`] from the normalized root.
pub fn build_lts(p: &Config, defs: &Behaviors, bounds: &Bounds) -> Result<Lts, LtsError> {
    build_lts_with_universe(p, defs, &bounds.extra_names(), bounds)
}

/// As [`build_lts`] with an explicit shared universe base (used when two
/// systems must see the same free-input instantiations).
pub fn build_lts_with_universe(
    p: &Config,
    defs: &Behaviors,
    universe_base: &BTreeSet<Name>,
    bounds: &Bounds,
) -> Result<Lts, LtsError> {
    if bounds.max_depth == 0 || bounds.max_states == 0 {
        return Err(LtsError::BadBounds);
    }
    let root = normalize_state(p);
    let mut states: Vec<Config> = vec![root.clone()];
    let mut index: BTreeMap<Config, usize> = BTreeMap::new();
    index.insert(root, 0);
    let mut edges = BTreeSet::new();
    let mut truncated = BTreeSet::new();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    queue.push_back((0, 0));
    let mut expanded = BTreeSet::new();
    while let Some((id, depth)) = queue.pop_front() {
        if !expanded.insert(id) {
            continue;
        }
        if depth >= bounds.max_depth {
            truncated.insert(id);
            continue;
        }
        let transitions = step_transitions(&states[id], defs, universe_base)?;
        for (label, target) in transitions {
            let next_id = match index.get(&target) {
                Some(&i) => i,
                None => {
                    if states.len() >= bounds.max_states {
                        truncated.insert(id);
                        continue;
                    }
                    let i = states.len();
                    states.push(target.clone());
                    index.insert(target, i);
                    queue.push_back((i, depth + 1));
                    i
                }
            };
            edges.insert((id, label, next_id));
        }
    }
    Ok(Lts {
        root: 0,
        states,
        edges,
        truncated,
        universe_base: universe_base.clone(),
    })
}

/// Weak reachability: `s => t` through silent steps, and `s =L=> t` as
/// silent closure around a single step.
#[derive(Clone, Debug, Default)]
pub struct WeakClosure {
    pub silent: BTreeSet<(usize, usize)>,
    pub weak_steps: BTreeSet<(usize, StepLabel, usize)>,
}

pub fn weak_closure(lts: &Lts) -> WeakClosure {
    let n = lts.states.len();
    let mut silent: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let tau_edges: Vec<(usize, usize)> = lts
        .edges
        .iter()
        .filter(|(_, l, _)| l.is_tau())
        .map(|(s, _, t)| (*s, *t))
        .collect();
    loop {
        let mut grew = false;
        let current: Vec<(usize, usize)> = silent.iter().cloned().collect();
        for (a, b) in &current {
            for (s, t) in &tau_edges {
                if s == b && silent.insert((*a, *t)) {
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    let mut weak_steps = BTreeSet::new();
    for (s, label, t) in &lts.edges {
        for (a, _) in silent.iter().filter(|(_, x)| x == s) {
            for (_, b) in silent.iter().filter(|(x, _)| x == t) {
                weak_steps.insert((*a, label.clone(), *b));
            }
        }
    }
    WeakClosure { silent, weak_steps }
}

/// Report from checking that every reachable state of a well-typed term is
/// well-typed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SubjectReductionReport {
    Pass { states_checked: usize },
    Violation { state: String, error: String },
}

pub fn check_subject_reduction(
    p: &Config,
    defs: &Behaviors,
    bounds: &Bounds,
) -> Result<SubjectReductionReport, LtsError> {
    typecheck(p, defs)?;
    let lts = build_lts(p, defs, bounds)?;
    for state in &lts.states {
        if let Err(e) = typecheck(state, defs) {
            return Ok(SubjectReductionReport::Violation {
                state: crate::syntax::pretty_print(state),
                error: e.to_string(),
            });
        }
    }
    Ok(SubjectReductionReport::Pass {
        states_checked: lts.states.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_config, parse_file};

    fn n(s: &str) -> Name {
        Name::src(s)
    }

    fn uni(names: &[&str]) -> BTreeSet<Name> {
        names.iter().map(|s| n(s)).collect()
    }

    fn trans_of(text: &str, universe: &[&str]) -> BTreeSet<(StepLabel, Config)> {
        let p = parse_config(text).unwrap();
        step_transitions(&p, &Behaviors::new(), &uni(universe)).unwrap()
    }

    fn labels(ts: &BTreeSet<(StepLabel, Config)>) -> BTreeSet<String> {
        ts.iter().map(|(l, _)| l.to_string()).collect()
    }

    #[test]
    fn input_instantiates_universe_and_bound() {
        let ts = trans_of("x?(u).0", &["z"]);
        let ls = labels(&ts);
        // universe {z} ∪ fn {x} ∪ witness w0, plus the bound input
        assert!(ls.contains("x?z"));
        assert!(ls.contains("x?x"));
        assert!(ls.contains("x?w0"));
        assert!(ls.iter().any(|l| l.starts_with("x?(")));
        assert_eq!(ts.len(), 4);
        for (_, t) in &ts {
            assert_eq!(*t, Config::Nil);
        }
    }

    #[test]
    fn par_both_enabled_has_only_joint_steps() {
        let ts = trans_of("x!y | u?(v).0", &[]);
        for (l, _) in &ts {
            assert_eq!(l.len(), 2, "unexpected label {l}");
            assert!(l.actions().iter().any(|a| a.is_output()));
        }
        let ls = labels(&ts);
        assert!(ls.contains("{u?y, x!y}"));
        assert!(ls.contains("{u?x, x!y}"));
        assert!(ls.iter().any(|l| l.contains("u?(")));
    }

    #[test]
    fn com_and_complement_exclusion() {
        let ts = trans_of("x!y | x?(v).0", &["z"]);
        let ls = labels(&ts);
        assert!(ls.contains("tau"), "COM produces a tau edge: {ls:?}");
        // joint steps exist for z != y but not for the communicating object y
        assert!(ls.contains("{x?z, x!y}"));
        assert!(ls.contains("{x?x, x!y}"));
        assert!(!ls.iter().any(|l| l.contains("x?y")));
        let tau_targets: Vec<&Config> = ts
            .iter()
            .filter(|(l, _)| l.is_tau())
            .map(|(_, t)| t)
            .collect();
        assert_eq!(tau_targets, vec![&Config::Nil]);
    }

    #[test]
    fn par_lone_move_when_sibling_dead() {
        let ts = trans_of("x!y | 0", &[]);
        let ls = labels(&ts);
        assert_eq!(ls.len(), 1);
        assert!(ls.contains("x!y"));
    }

    #[test]
    fn joint_bound_input_shares_binder() {
        let ts = trans_of("x?(v).0 | y?(u).0", &[]);
        let shared: Vec<_> = ts
            .iter()
            .filter(|(l, _)| {
                l.len() == 2
                    && l.actions().iter().all(|a| matches!(a, ActionLabel::BoundInput { .. }))
                    && l.actions()[0].object_name() == l.actions()[1].object_name()
            })
            .collect();
        assert_eq!(shared.len(), 1, "expected exactly one joint bound input");
        // and distinct-binder pairs also exist (plain joint step)
        assert!(ts.iter().any(|(l, _)| {
            l.len() == 2
                && l.actions().iter().all(|a| matches!(a, ActionLabel::BoundInput { .. }))
                && l.actions()[0].object_name() != l.actions()[1].object_name()
        }));
    }

    #[test]
    fn open_produces_bound_output() {
        let ts = trans_of("nu y. x!y", &[]);
        let ls = labels(&ts);
        assert_eq!(ls.len(), 1);
        assert!(ls.iter().next().unwrap().starts_with("x!("));
    }

    #[test]
    fn restriction_blocks_private_subjects() {
        let ts = trans_of("nu x. x!y", &[]);
        assert!(ts.is_empty());
    }

    #[test]
    fn restriction_scope_allows_lone_sibling_move() {
        // the restricted sibling cannot act outward, so the left moves alone
        let ts = trans_of("nu x. (y!a | x!b)", &[]);
        let ls = labels(&ts);
        assert_eq!(ls, ["y!a".to_string()].into_iter().collect());
    }

    #[test]
    fn com_under_restriction() {
        let ts = trans_of("nu x. (x!y | x?(v).v!v)", &[]);
        let ls = labels(&ts);
        assert_eq!(ls, ["tau".to_string()].into_iter().collect());
        let (_, target) = ts.into_iter().next().unwrap();
        assert_eq!(target, normalize_state(&parse_config("y!y").unwrap()));
    }

    #[test]
    fn close_exports_restricted_name() {
        let ts = trans_of("(nu y. x!y.y!y) | x?(v).0", &[]);
        assert!(labels(&ts).contains("tau"));
        let tau_target = ts
            .iter()
            .find(|(l, _)| l.is_tau())
            .map(|(_, t)| t.clone())
            .unwrap();
        assert!(matches!(tau_target, Config::Restrict { .. }));
    }

    #[test]
    fn case_branches_fire_tau_per_match() {
        let ts = trans_of("case u of { u: x!a, u: x!b, v: x!c }", &[]);
        let targets: BTreeSet<String> = ts
            .iter()
            .map(|(l, t)| {
                assert!(l.is_tau());
                crate::syntax::pretty_print(t)
            })
            .collect();
        assert_eq!(
            targets,
            ["x!a".to_string(), "x!b".to_string()].into_iter().collect()
        );
    }

    #[test]
    fn step_prefix_fires_all_at_once() {
        let ts = trans_of("(x!y & u?(v)).v!v", &[]);
        for (l, _) in &ts {
            assert_eq!(l.len(), 2);
        }
        let ls = labels(&ts);
        assert!(ls.contains("{u?y, x!y}"));
        assert!(ls.iter().any(|l| l.contains("u?(")));
    }

    #[test]
    fn tau_prefix() {
        let ts = trans_of("tau.x!y", &[]);
        let ls = labels(&ts);
        assert_eq!(ls, ["tau".to_string()].into_iter().collect());
    }

    #[test]
    fn par_symmetry() {
        let a = trans_of("x!y | u?(v).0", &[]);
        let b = trans_of("u?(v).0 | x!y", &[]);
        assert_eq!(labels(&a), labels(&b));
        let ta: BTreeSet<Config> = a.into_iter().map(|(_, t)| t).collect();
        let tb: BTreeSet<Config> = b.into_iter().map(|(_, t)| t).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn build_lts_nil() {
        let lts = build_lts(&Config::Nil, &Behaviors::new(), &Bounds::default()).unwrap();
        assert_eq!(lts.states.len(), 1);
        assert!(lts.edges.is_empty());
        assert!(!lts.is_truncated());
    }

    #[test]
    fn build_lts_com_reaches_nil() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let bounds = Bounds {
            max_depth: 2,
            universe_extra: vec![n("x"), n("y")],
            ..Bounds::default()
        };
        let lts = build_lts(&p, &Behaviors::new(), &bounds).unwrap();
        assert!(lts.states.contains(&Config::Nil));
        assert!(lts
            .edges
            .iter()
            .any(|(s, l, t)| *s == 0 && l.is_tau() && lts.states[*t] == Config::Nil));
    }

    #[test]
    fn diverge_has_tau_self_loop() {
        let (p, defs) = parse_file("def Diverge(x;) = x?(u).(x!u | Diverge<x;>)\nDiverge<x;> | x!u").unwrap();
        let lts = build_lts(&p, &defs, &Bounds::with_depth(3)).unwrap();
        assert!(
            lts.edges.iter().any(|(s, l, t)| s == t && l.is_tau()),
            "expected a tau self-loop, got {:?}",
            lts.edges
        );
    }

    #[test]
    fn weak_closure_reflexive_transitive() {
        let p = parse_config("x!y | x?(v).tau.0").unwrap();
        let lts = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(4)).unwrap();
        let weak = weak_closure(&lts);
        for i in 0..lts.states.len() {
            assert!(weak.silent.contains(&(i, i)));
        }
        // root reaches 0 through tau;tau
        let nil_id = lts.states.iter().position(|s| *s == Config::Nil).unwrap();
        assert!(weak.silent.contains(&(lts.root, nil_id)));
        assert!(weak
            .weak_steps
            .iter()
            .any(|(s, l, t)| *s == lts.root && l.is_tau() && *t == nil_id));
    }

    #[test]
    fn subject_reduction_examples() {
        let p = parse_config("x!y | x?(v).0").unwrap();
        let report =
            check_subject_reduction(&p, &Behaviors::new(), &Bounds::with_depth(3)).unwrap();
        assert!(matches!(report, SubjectReductionReport::Pass { .. }));
        let report =
            check_subject_reduction(&Config::Nil, &Behaviors::new(), &Bounds::default()).unwrap();
        assert!(matches!(report, SubjectReductionReport::Pass { .. }));
    }

    #[test]
    fn determinism_of_construction() {
        let p = parse_config("nu a. (a!b | a?(v).v!v) | c?(u).0").unwrap();
        let l1 = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(4)).unwrap();
        let l2 = build_lts(&p, &Behaviors::new(), &Bounds::with_depth(4)).unwrap();
        assert_eq!(l1.states, l2.states);
        assert_eq!(l1.edges, l2.edges);
    }

    #[test]
    fn bound_input_edges_match_free_input_edges() {
        // BINP admissibility: free inputs of non-free objects have bound twins
        let ts = trans_of("x?(u).u!u", &[]);
        let p = parse_config("x?(u).u!u").unwrap();
        let free = occurring_free_names(&p);
        for (l, t) in &ts {
            if let Some(ActionLabel::FreeInput { subject, object }) = l.as_singleton() {
                if !free.contains(object) {
                    let twin_exists = ts.iter().any(|(l2, t2)| {
                        if let Some(ActionLabel::BoundInput { subject: s2, binder }) =
                            l2.as_singleton()
                        {
                            s2 == subject
                                && crate::syntax::alpha_eq(
                                    &substitute(t2, &Subst::single(binder.clone(), object.clone())),
                                    t,
                                )
                        } else {
                            false
                        }
                    });
                    assert!(twin_exists, "no bound twin for {l}");
                }
            }
        }
    }
}
